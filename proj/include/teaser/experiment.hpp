#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "teaser/dataset.hpp"
#include "teaser/gallery.hpp"
#include "teaser/metrics.hpp"
#include "teaser/report.hpp"
#include "teaser/train.hpp"

// End-to-end runs on a dataset: gallery build, training, report generation
// and scoring. Shared by the ablation command and the acceptance checks.
namespace teaser {

struct ExperimentConfig {
  TrainConfig train;
  InferenceConfig inference;
  GalleryBuildOptions gallery;
  // Validation studies used for the topic-similarity statistic.
  std::size_t similarity_studies = 50;
};

struct ExperimentResult {
  std::string name;
  CeScores ce;
  NlgScores nlg;
  double rare_recall = 0.0;
  std::size_t rare_pairs = 0;
  double topic_cosine = 0.0;  // mean pairwise cosine between distinct queries
  LossBreakdown initial_train;
  LossBreakdown final_train;
  LossBreakdown final_val;
  std::size_t truncated_sentences = 0;
  double seconds = 0.0;
};

// Galleries for a model: J = 0 merges both classes into one common gallery.
struct GallerySet {
  Gallery common;
  Gallery rare;
};

GallerySet galleries_for(const GalleryBundle& bundle, const ModelConfig& model,
                         const std::map<std::string, std::vector<std::string>>& labels);

struct GeneratedReport {
  std::string study_id;
  std::vector<DraftEntry> entries;
  bool empty_warning = false;
};

std::vector<GeneratedReport> generate_reports(const Checkpoint& ckpt, const std::vector<Study>& studies,
                                              const GallerySet& galleries, const InferenceConfig& icfg);

// Mean over studies of the mean pairwise cosine between topic embeddings of
// distinct queries.
double mean_topic_cosine(const Checkpoint& ckpt, const std::vector<Study>& studies, std::size_t limit);

// Fraction of (study, designated rare finding) pairs of the split whose
// finding appears in the study's generated report.
double rare_finding_recall(const Dataset& dataset, const Split& split, const std::vector<GeneratedReport>& reports,
                           std::size_t* pairs = nullptr);

// Scores generated reports against the split's reference reports.
void score_reports(const Dataset& dataset, const Split& split, const std::vector<GeneratedReport>& reports,
                   ExperimentResult& out);

ExperimentResult run_experiment(const std::string& name, const Dataset& dataset, const GalleryBundle& bundle,
                                const ExperimentConfig& cfg, Checkpoint* checkpoint_out = nullptr);

// Field-wise mean of several runs of one configuration, named `name`.
ExperimentResult average_results(const std::string& name, const std::vector<ExperimentResult>& runs);

nlohmann::json to_json(const ExperimentResult& r);
// Aligned plain-text table, one row per result.
std::string format_table(const std::vector<ExperimentResult>& results);

} // namespace teaser
