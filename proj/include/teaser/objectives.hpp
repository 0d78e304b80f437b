#pragma once

#include <span>
#include <string>
#include <vector>

#include "teaser/autodiff.hpp"
#include "teaser/matching.hpp"
#include "teaser/model.hpp"

namespace teaser {

enum class SelectionVariant { Bce, Focal, Db };
enum class LossReduction { Sum, Mean };

const char* to_string(SelectionVariant v);
SelectionVariant selection_variant_from_string(const std::string& s);
const char* to_string(LossReduction r);
LossReduction loss_reduction_from_string(const std::string& s);

struct DbParams {
  double alpha = 0.1;  // rebalance floor
  double beta = 10.0;  // rebalance sharpness
  double mu = 0.2;     // rebalance midpoint
  double neg_scale = 2.0;
  double neg_margin = 0.0;
  bool operator==(const DbParams&) const = default;
};

struct LossConfig {
  double lambda = 1.0;
  double alpha = 0.1;
  double temperature = 0.07;
  SelectionVariant selection = SelectionVariant::Db;
  DbParams db;
  double focal_gamma = 2.0;
  double prob_epsilon = 1e-7;
  bool tcl_normalize = true;
  LossReduction reduction = LossReduction::Sum;
  // Multiply each selection term by its label, i.e. train positives only.
  bool select_mask_literal = false;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

struct LossBreakdown {
  double l_sim = 0.0;
  double l_tcl_t2r = 0.0;
  double l_tcl_r2t = 0.0;
  double l_tcl = 0.0;
  double l_select = 0.0;
  double l_align = 0.0;
  double l_total = 0.0;
  double lambda = 1.0;
  double alpha = 0.1;
  // Set when there were no matched pairs, so the alignment terms are 0.
  bool no_pairs = false;
};

// Fills l_tcl, l_align and l_total from the components.
LossBreakdown compose_losses(double l_sim, double t2r, double r2t, double l_select, const LossConfig& config);

// ---- value-level losses -----------------------------------------------------

// Rows of topics and sentences are matched pairs. Sum of 1 - cos per pair.
double cosine_similarity_loss(const Tensor& topics, const Tensor& sentences,
                              LossReduction reduction = LossReduction::Sum);

struct ContrastiveTerms {
  double t2r = 0.0;
  double r2t = 0.0;
  bool empty = false;
};

ContrastiveTerms topic_contrastive_loss(const Tensor& topics, const Tensor& sentences, double temperature,
                                        bool normalize = true, LossReduction reduction = LossReduction::Sum);

// Per-query rebalance weights r_hat from positive counts (counts below 1
// are treated as 1).
std::vector<double> db_rebalance_weights(std::span<const double> positive_counts, const DbParams& db);

// Mean over all entries. topic_freq may be empty for the bce/focal variants;
// the db variant then assumes uniform frequencies.
double selection_loss(std::span<const double> p, std::span<const int> labels, std::span<const double> topic_freq,
                      const LossConfig& config);

// ---- graph-level losses -----------------------------------------------------

ad::Var cosine_similarity_var(ad::Var topics, ad::Var sentences, LossReduction reduction);
std::pair<ad::Var, ad::Var> topic_contrastive_vars(ad::Var topics, ad::Var sentences, double temperature,
                                                   bool normalize, LossReduction reduction);
ad::Var selection_var(ad::Var logits, std::span<const int> labels, std::span<const double> topic_freq,
                      const LossConfig& config);

// Full per-sample objective: forward, class-separated matching (treated as
// a constant), alignment and selection losses. A fixed_match replaces the
// matching step, which keeps the objective smooth for finite differences.
struct SampleObjective {
  ad::Var total;
  LossBreakdown breakdown;
  MatchAssignment match;
  ForwardVars forward;
};

SampleObjective sample_objective(ad::Graph& graph, const ModelConfig& model, const LossConfig& loss,
                                 std::span<const ad::Var> params, ad::Var visual, const GroundTruthSet& truth,
                                 std::span<const double> topic_freq, const MatchAssignment* fixed_match = nullptr);

} // namespace teaser
