#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "teaser/tensor.hpp"

namespace teaser {

struct Assignment {
  // Per row: matched column, or nullopt when the row is on the larger side
  // and left unmatched.
  std::vector<std::optional<std::size_t>> row_to_col;
  std::vector<std::optional<std::size_t>> col_to_row;
  // Sum of matched costs, accumulated in row order.
  double total_cost = 0.0;
};

// Minimum-cost injective assignment of the smaller side of an n x m cost
// matrix (Kuhn-Munkres with potentials, O(min^2 * max)). Among optimal
// assignments the lexicographically smallest assignment vector of the
// smaller side is returned. Throws NumericError on non-finite costs.
Assignment hungarian(const Tensor& cost);

struct GroundTruthSet {
  Tensor common;   // G_c x D
  Tensor rare;     // G_r x D
  // Normalized report positions in [0, 1], aligned with the rows above.
  std::vector<double> common_positions;
  std::vector<double> rare_positions;
};

struct MatchAssignment {
  std::size_t common_queries = 0;  // M; query i >= M is rare
  // Per query: index into GroundTruthSet::common (i < M) or ::rare (i >= M).
  std::vector<std::optional<std::size_t>> sigma;
  // Selection label c^i = 1 iff sigma(i) is set.
  std::vector<int> labels;
  // Euclidean distance of each matched pair; 0 for unmatched queries.
  std::vector<double> costs;

  std::size_t matched_count() const;
  bool is_rare_query(std::size_t i) const { return i >= common_queries; }
};

// Pairwise Euclidean distances between the rows of a and b.
Tensor euclidean_cost(const Tensor& a, const Tensor& b);

// Class-separated matching: common topics against common sentences, rare
// topics against rare sentences, each solved with hungarian() on raw
// Euclidean distance. Throws ValidationError when a report has more
// sentences of a class than there are queries for it.
MatchAssignment match_topics(const Tensor& common_topics, const Tensor& rare_topics, const GroundTruthSet& truth);

} // namespace teaser
