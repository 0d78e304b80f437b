#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "teaser/corpus.hpp"
#include "teaser/embedding.hpp"

namespace teaser {

struct Study {
  std::string id;
  EmbeddingMatrix visual;  // N_rows x D
  // Rows of the owning split's corpus, in report order.
  std::vector<std::size_t> sentence_rows;
};

struct Split {
  SentenceCorpus corpus;
  EmbeddingMatrix embeddings;  // aligned with corpus records
  std::vector<Study> studies;

  // Normalized report position of a corpus row: index / (n - 1), 0 for
  // single-sentence reports.
  double normalized_position(const Study& study, std::size_t k) const;
};

struct Dataset {
  Split train;
  Split val;
  Split test;
  // normalized sentence text -> finding labels
  std::map<std::string, std::vector<std::string>> sentence_labels;
  // Ground truth from the generator, empty for external data.
  std::vector<std::string> rare_texts;     // normalized
  std::vector<std::string> rare_findings;
  std::vector<std::string> findings;

  std::vector<std::string> labels_of(const std::string& text) const;
  bool is_designated_rare(const std::string& text) const;
};

// Groups corpus rows into studies by study_id (first-seen order), sorting
// each report by position. Visual features are looked up by study id.
std::vector<Study> assemble_studies(const SentenceCorpus& corpus,
                                    const std::map<std::string, EmbeddingMatrix>& visual);

// Visual features file: a JSON manifest {"dim", "studies": [{"study_id",
// "offset", "rows"}]} next to an EMB1 matrix holding every study's rows.
// The matrix path is the manifest path with extension ".emb".
struct FeatureSet {
  std::vector<std::string> study_ids;
  std::vector<EmbeddingMatrix> features;
};

void save_features(const FeatureSet& features, const std::filesystem::path& manifest_path);
FeatureSet load_features(const std::filesystem::path& manifest_path);

// Directory layout: {train,val,test}_corpus.{jsonl,emb},
// {train,val,test}_features.{json,emb} and labels.json.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Sentence-label file: {"sentence_labels": {text: [labels]}, ...}.
std::map<std::string, std::vector<std::string>> load_sentence_labels(const std::filesystem::path& path);

} // namespace teaser
