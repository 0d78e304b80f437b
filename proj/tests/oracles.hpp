#pragma once

// Exhaustive reference implementations used by several test files.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "teaser/tensor.hpp"

namespace oracle {

struct Injection {
  double cost = std::numeric_limits<double>::infinity();
  // For each element of the smaller side, its partner on the larger side.
  std::vector<std::size_t> partner;
};

// Minimum-cost injection of the smaller side, scanning candidate vectors in
// lexicographic order and keeping the first strict improvement, so ties
// resolve to the lexicographically smallest vector. Costs are summed in the
// smaller side's order.
inline Injection brute_force_assignment(const teaser::Tensor& cost, double tie_tolerance = 0.0) {
  const bool rows_small = cost.rows() <= cost.cols();
  const std::size_t small = rows_small ? cost.rows() : cost.cols();
  const std::size_t large = rows_small ? cost.cols() : cost.rows();
  auto at = [&](std::size_t s, std::size_t l) { return rows_small ? cost(s, l) : cost(l, s); };
  Injection best;
  std::vector<std::size_t> cur(small);
  std::vector<bool> used(large, false);
  auto rec = [&](auto&& self, std::size_t s, double acc) -> void {
    if (s == small) {
      if (acc < best.cost - tie_tolerance) best = {acc, cur};
      return;
    }
    for (std::size_t l = 0; l < large; ++l) {
      if (used[l]) continue;
      used[l] = true;
      cur[s] = l;
      self(self, s + 1, acc + at(s, l));
      used[l] = false;
    }
  };
  rec(rec, 0, 0.0);
  if (small == 0) best.cost = 0.0;
  return best;
}

} // namespace oracle
