#include "teaser/matching.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "teaser/errors.hpp"

namespace teaser {

namespace {

// Kuhn-Munkres with row/column potentials. rows <= cols; only the given
// rows and columns of `cost` take part. Returns, per participating row, the
// position of its column inside `cols`.
std::vector<std::size_t> solve_rows_le_cols(const Tensor& cost, const std::vector<std::size_t>& rows,
                                            const std::vector<std::size_t>& cols) {
  const std::size_t n = rows.size(), m = cols.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(rows[i0 - 1], cols[j - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> out(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) out[p[j] - 1] = j - 1;
  }
  return out;
}

double assignment_total(const Tensor& cost, const std::vector<std::size_t>& row_to_col) {
  double total = 0.0;
  for (std::size_t i = 0; i < row_to_col.size(); ++i) total += cost(i, row_to_col[i]);
  return total;
}

// Optimal assignment for n <= m with the lexicographic tie-break: for each
// row in order, try every smaller free column and keep the first one that
// still admits an optimal completion.
std::vector<std::size_t> lexicographic_optimum(const Tensor& cost) {
  const std::size_t n = cost.rows(), m = cost.cols();
  std::vector<std::size_t> all_rows(n), all_cols(m);
  for (std::size_t i = 0; i < n; ++i) all_rows[i] = i;
  for (std::size_t j = 0; j < m; ++j) all_cols[j] = j;
  const auto first = solve_rows_le_cols(cost, all_rows, all_cols);
  std::vector<std::size_t> best(n);
  for (std::size_t i = 0; i < n; ++i) best[i] = all_cols[first[i]];
  const double optimum = assignment_total(cost, best);
  double scale = 1.0;
  for (double c : cost.data()) scale = std::max(scale, std::abs(c));
  const double tol = 1e-12 * scale * static_cast<double>(n);

  for (std::size_t r = 0; r < n; ++r) {
    std::vector<bool> taken(m, false);
    for (std::size_t i = 0; i < r; ++i) taken[best[i]] = true;
    for (std::size_t j = 0; j < best[r]; ++j) {
      if (taken[j]) continue;
      std::vector<std::size_t> candidate(best.begin(), best.begin() + r);
      candidate.push_back(j);
      std::vector<bool> used = taken;
      used[j] = true;
      std::vector<std::size_t> rest_rows, rest_cols;
      for (std::size_t i = r + 1; i < n; ++i) rest_rows.push_back(i);
      for (std::size_t c = 0; c < m; ++c) {
        if (!used[c]) rest_cols.push_back(c);
      }
      if (!rest_rows.empty()) {
        const auto sub = solve_rows_le_cols(cost, rest_rows, rest_cols);
        for (std::size_t k = 0; k < rest_rows.size(); ++k) candidate.push_back(rest_cols[sub[k]]);
      }
      if (assignment_total(cost, candidate) <= optimum + tol) {
        best = std::move(candidate);
        break;
      }
    }
  }
  return best;
}

} // namespace

Assignment hungarian(const Tensor& cost) {
  for (double c : cost.data()) {
    if (!std::isfinite(c)) throw NumericError("hungarian: non-finite cost entry");
  }
  const std::size_t n = cost.rows(), m = cost.cols();
  Assignment result;
  result.row_to_col.assign(n, std::nullopt);
  result.col_to_row.assign(m, std::nullopt);
  if (n == 0 || m == 0) return result;

  if (n <= m) {
    const auto rows = lexicographic_optimum(cost);
    for (std::size_t i = 0; i < n; ++i) {
      result.row_to_col[i] = rows[i];
      result.col_to_row[rows[i]] = i;
    }
  } else {
    Tensor transposed(m, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) transposed(j, i) = cost(i, j);
    const auto cols = lexicographic_optimum(transposed);
    for (std::size_t j = 0; j < m; ++j) {
      result.col_to_row[j] = cols[j];
      result.row_to_col[cols[j]] = j;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (result.row_to_col[i]) result.total_cost += cost(i, *result.row_to_col[i]);
  }
  return result;
}

std::size_t MatchAssignment::matched_count() const {
  std::size_t n = 0;
  for (const auto& s : sigma) n += s.has_value() ? 1 : 0;
  return n;
}

Tensor euclidean_cost(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols() && !a.empty() && !b.empty()) {
    throw ShapeError("euclidean_cost: dimension mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double d = a(i, k) - b(j, k);
        s += d * d;
      }
      out(i, j) = std::sqrt(s);
    }
  }
  return out;
}

MatchAssignment match_topics(const Tensor& common_topics, const Tensor& rare_topics, const GroundTruthSet& truth) {
  const std::size_t m = common_topics.rows(), j = rare_topics.rows();
  const std::size_t gc = truth.common.rows(), gr = truth.rare.rows();
  if (gc > m) {
    throw ValidationError("report has " + std::to_string(gc) + " common sentences but only " + std::to_string(m) +
                          " common queries; truncate the report upstream");
  }
  if (gr > j) {
    throw ValidationError("report has " + std::to_string(gr) + " rare sentences but only " + std::to_string(j) +
                          " rare queries; truncate the report upstream");
  }
  MatchAssignment out;
  out.common_queries = m;
  out.sigma.assign(m + j, std::nullopt);
  out.labels.assign(m + j, 0);
  out.costs.assign(m + j, 0.0);

  auto solve = [&](const Tensor& topics, const Tensor& sentences, std::size_t offset) {
    if (sentences.rows() == 0) return;
    const Tensor cost = euclidean_cost(topics, sentences);
    const Assignment a = hungarian(cost);
    for (std::size_t q = 0; q < topics.rows(); ++q) {
      if (!a.row_to_col[q]) continue;
      out.sigma[offset + q] = a.row_to_col[q];
      out.labels[offset + q] = 1;
      out.costs[offset + q] = cost(q, *a.row_to_col[q]);
    }
  };
  solve(common_topics, truth.common, 0);
  solve(rare_topics, truth.rare, m);
  return out;
}

} // namespace teaser
