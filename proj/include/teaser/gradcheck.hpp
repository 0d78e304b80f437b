#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "teaser/autodiff.hpp"

namespace teaser {

struct GradCheckCase {
  std::string name;
  std::uint64_t seed = 0;
  ad::GradCheckReport report;
};

// Finite-difference checks of every differentiable primitive and of the
// full forward + matching + loss pipeline on random inputs (shapes up to
// 8 x 16), one round per seed.
std::vector<GradCheckCase> run_gradcheck_suite(std::size_t seeds, double eps = 1e-5, std::uint64_t base_seed = 0);

// Only the full pipeline, for one seed.
GradCheckCase pipeline_gradcheck(std::uint64_t seed, double eps = 1e-5);

} // namespace teaser
