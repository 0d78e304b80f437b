#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "teaser/gallery.hpp"
#include "teaser/train.hpp"

namespace teaser {

struct InferenceConfig {
  double tau_c = 0.38;
  double tau_r = 0.38;
  double dedup_threshold = 0.95;
  // p > tau when set, p >= tau otherwise.
  bool strict_greater = true;

  void validate() const;
};

struct DraftEntry {
  std::size_t query_index = 0;
  Rarity rarity_class = Rarity::Common;
  std::size_t gallery_index = 0;
  double score = 0.0;
  std::string text;
  double selection_prob = 0.0;
  // Learned mean position of the query; NaN when the query never matched
  // during training.
  double sort_key = 0.0;
  std::vector<float> embedding;  // unit gallery row
  std::vector<std::string> finding_labels;
};

struct ReportDraft {
  std::vector<DraftEntry> entries;
  // Set when no query passed its threshold.
  bool empty_warning = false;
};

struct Galleries {
  const Gallery* common = nullptr;
  const Gallery* rare = nullptr;
};

// Selects queries above their class threshold and retrieves the top-1
// gallery row for each. Throws ValidationError when a selected query has
// an empty gallery.
ReportDraft draft_report(const Checkpoint& ckpt, const TopicEmbeddings& topics, const Galleries& galleries,
                         const InferenceConfig& icfg);
ReportDraft generate_report(const Checkpoint& ckpt, const EmbeddingMatrix& V, const Galleries& galleries,
                            const InferenceConfig& icfg);

// Drops exact-text and near-duplicate entries (most confident first), then
// orders the survivors by learned position. Queries without position
// statistics go last; ties break on query index.
std::vector<DraftEntry> dedup_and_sort(const ReportDraft& draft, const PositionStats& stats,
                                       const InferenceConfig& icfg);

std::vector<std::string> report_sentences(const std::vector<DraftEntry>& entries);
// Union of the finding labels of the given entries, sorted.
std::vector<std::string> report_findings(const std::vector<DraftEntry>& entries);

nlohmann::json entry_to_json(const DraftEntry& e);

} // namespace teaser
