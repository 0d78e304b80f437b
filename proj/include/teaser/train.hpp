#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "teaser/dataset.hpp"
#include "teaser/gallery.hpp"
#include "teaser/matching.hpp"
#include "teaser/model.hpp"
#include "teaser/objectives.hpp"

namespace teaser {

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  double lr = 3e-4;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  bool linear_decay = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Reshuffle the sample order every epoch (seeded).
  bool shuffle = true;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

// lr0 * (1 - step / total_steps), or lr0 when decay is off.
double lr_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

// Running mean of the normalized report position of the sentences matched
// to each query.
struct PositionStats {
  std::vector<double> mean;
  std::vector<std::int64_t> count;

  PositionStats() = default;
  explicit PositionStats(std::size_t queries) : mean(queries, 0.0), count(queries, 0) {}

  void update(std::size_t query, double position);
  // Per-query positions of one assignment.
  void update(const MatchAssignment& match, const GroundTruthSet& truth);
  bool operator==(const PositionStats&) const = default;
};

// One training or validation sample in model space.
struct Example {
  std::string study_id;
  Tensor visual;
  GroundTruthSet truth;
};

// Decides the class of each report sentence. J = 0 models put everything
// in the common class.
using RarityFn = std::function<Rarity(const std::string& text, std::span<const float> embedding)>;

RarityFn rarity_from_bundle(const GalleryBundle& bundle);

// Reports with more sentences of a class than the model has queries are
// truncated in report order; the number of dropped sentences is added to
// *truncated when given.
std::vector<Example> make_examples(const Split& split, const ModelConfig& model, const RarityFn& rarity,
                                   std::size_t* truncated = nullptr);

struct CheckpointMeta {
  std::size_t epochs = 0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  LossBreakdown final_train;
  LossBreakdown final_val;
  bool has_val = false;
};

struct Checkpoint {
  ModelConfig model;
  LossConfig loss;
  ModelParams params;
  PositionStats positions;
  // Positive-label counts per query, used by the distribution-balanced loss.
  std::vector<double> topic_freq;
  CheckpointMeta meta;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown train;  // mean over samples
  LossBreakdown val;
  bool has_val = false;
  double lr = 0.0;      // lr of the last step in the epoch
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> history;
  LossBreakdown initial_train;  // before the first update
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Throws NumericError naming the step and study when a loss or gradient is
// not finite.
TrainResult train(const TrainConfig& cfg, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const EpochCallback& on_epoch = {});

// Mean loss breakdown of a parameter set over examples (no updates).
LossBreakdown evaluate_loss(const ModelConfig& model, const LossConfig& loss, const ModelParams& params,
                            std::span<const double> topic_freq, const std::vector<Example>& examples);

} // namespace teaser
