#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "teaser/corpus.hpp"
#include "teaser/embedding.hpp"

namespace teaser {

enum class Rarity { Common, Rare };

const char* to_string(Rarity r);
Rarity rarity_from_string(const std::string& s);

enum class DistanceMetric {
  Euclidean,  // ||a - b|| on unit vectors, range [0, 2]
  Cosine,     // 1 - cos(a, b)
};

const char* to_string(DistanceMetric m);
DistanceMetric distance_metric_from_string(const std::string& s);

struct ClusterModel {
  std::size_t k = 0;
  EmbeddingMatrix centers;  // k x D, unit rows
  double inertia = 0.0;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  // Inertia after each assignment step of the winning run.
  std::vector<double> inertia_history;
};

// Spherical Lloyd iterations from greedy k-means++ seeding. Input rows must
// be unit-normalized. Runs until no assignment changes or max_iter; with
// n_init > 1 the lowest-inertia run wins. Deterministic in (input, seed).
ClusterModel kmeans_cluster(const EmbeddingMatrix& embeddings, std::size_t k, std::uint64_t seed,
                            std::size_t max_iter = 100, std::size_t n_init = 1);

struct RarityCriteria {
  double dist_threshold = 0.9;
  std::int64_t freq_threshold = 6;
  DistanceMetric metric = DistanceMetric::Euclidean;
};

// Distance from a unit vector to its nearest center under the metric.
double min_center_distance(std::span<const float> unit_embedding, const ClusterModel& clusters,
                           DistanceMetric metric);

// rare <=> distance to every center > dist_threshold AND frequency < freq_threshold
Rarity rarity_rule(double min_distance, std::int64_t frequency, const RarityCriteria& criteria);

struct RarityLabels {
  std::vector<Rarity> labels;          // per corpus record
  std::vector<double> min_distance;    // per corpus record
  RarityCriteria criteria;

  std::size_t rare_count() const;
};

// Labels are decided once per unique normalized text, using the embedding of
// its first occurrence, and copied to every record sharing that text.
RarityLabels classify_rarity(const SentenceCorpus& corpus, const FrequencyTable& freqs, const ClusterModel& clusters,
                             const EmbeddingMatrix& embeddings, const RarityCriteria& criteria = {});

struct Gallery {
  Rarity rarity = Rarity::Common;
  std::vector<std::int64_t> sentence_ids;             // lowest id per row
  std::vector<std::vector<std::int64_t>> member_ids;  // every corpus id collapsed into the row
  std::vector<std::string> texts;
  EmbeddingMatrix embeddings;                          // unit rows
  std::vector<std::vector<std::string>> finding_labels;  // empty, or one set per row

  std::size_t size() const { return texts.size(); }
  bool empty() const { return texts.empty(); }
  bool has_labels() const { return !finding_labels.empty(); }
};

// Splits the corpus into (common, rare) galleries. Repeated normalized
// texts collapse into one row keeping the lowest id. Throws when no common
// sentence exists.
std::pair<Gallery, Gallery> build_galleries(const SentenceCorpus& corpus, const EmbeddingMatrix& embeddings,
                                            const RarityLabels& rarity);

// Fills finding_labels from a normalized-text -> labels map; texts without
// an entry get an empty set.
void attach_finding_labels(Gallery& gallery, const std::map<std::string, std::vector<std::string>>& labels);

// One gallery holding every row of both inputs, tagged common.
Gallery merge_galleries(const Gallery& common, const Gallery& rare);

struct RetrievalResult {
  std::size_t index = 0;
  double score = 0.0;
  std::string text;
};

// Row with the highest dot product against the unit-normalized query; ties
// go to the lowest index.
RetrievalResult retrieve_top1(const Gallery& gallery, std::span<const double> query);

// Everything the build step produces: both galleries plus what is needed to
// classify sentences that were not in the training corpus.
struct GalleryBundle {
  Gallery common;
  Gallery rare;
  ClusterModel clusters;
  RarityCriteria criteria;
  FrequencyTable frequencies;

  Rarity classify(const std::string& text, std::span<const float> embedding) const;
};

struct GalleryBuildOptions {
  std::size_t clusters = 64;
  RarityCriteria criteria;
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  std::size_t n_init = 1;
};

GalleryBundle build_gallery_bundle(const SentenceCorpus& corpus, const EmbeddingMatrix& embeddings,
                                   const GalleryBuildOptions& options);

// Directory layout: common_gallery.{json,emb}, rare_gallery.{json,emb},
// centers.emb, rarity.json.
void save_gallery(const Gallery& gallery, const std::filesystem::path& json_path,
                  const std::filesystem::path& emb_path);
Gallery load_gallery(const std::filesystem::path& json_path, const std::filesystem::path& emb_path);
void save_gallery_bundle(const GalleryBundle& bundle, const std::filesystem::path& dir);
GalleryBundle load_gallery_bundle(const std::filesystem::path& dir);

} // namespace teaser
