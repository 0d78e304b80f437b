#pragma once

#include <cstdint>

#include "teaser/dataset.hpp"

namespace teaser {

struct SyntheticTaskConfig {
  std::size_t n_findings = 40;
  double zipf_s = 1.2;
  double rare_fraction = 0.15;
  std::size_t sentences_per_finding = 3;
  std::size_t patches_per_image = 50;
  double noise_sigma = 0.1;
  std::size_t n_train = 600;
  std::size_t n_val = 50;
  std::size_t n_test = 400;
  std::uint64_t seed = 0;

  std::size_t dim = 32;
  std::size_t min_findings = 2;  // per study
  std::size_t max_findings = 5;
  std::size_t max_rare_per_study = 3;
  // Paraphrase spread around the finding signature. Rare paraphrases are
  // spread far enough to sit away from every cluster center.
  double common_jitter = 0.7;
  double rare_jitter = 2.5;
  // Rare paraphrases are redrawn until their cosine to every common
  // finding signature is at most this.
  double rare_max_common_cosine = 0.4;
  // Training occurrences: rare sentences are capped, common sentences are
  // topped up so the frequency rule separates the two classes.
  std::int64_t rare_max_count = 5;
  std::int64_t common_min_count = 6;

  void validate() const;
};

// Deterministic in cfg (seed included). Throws ValidationError when the
// cardinality constraints cannot be met.
Dataset generate_synthetic_task(const SyntheticTaskConfig& cfg);

} // namespace teaser
