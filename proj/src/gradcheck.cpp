#include "teaser/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "teaser/matching.hpp"
#include "teaser/model.hpp"
#include "teaser/objectives.hpp"
#include "teaser/rng.hpp"

namespace teaser {

using ad::Graph;
using ad::Var;

namespace {

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

std::size_t dim(Rng& rng, std::size_t max) { return 1 + rng.below(max); }

// Weighted sum with a fixed random tensor, so every output element matters.
Var probe(Graph& g, Var x, Rng& rng) {
  return ad::sum(ad::hadamard(x, g.constant(random_tensor(rng, x.rows(), x.cols()))));
}

struct Primitive {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  std::function<Var(Graph&, std::span<const Var>)> body;
};

std::vector<Primitive> primitives() {
  std::vector<Primitive> out;
  out.push_back({"matmul",
                 [](Rng& r) {
                   const std::size_t n = dim(r, 8), k = dim(r, 16), m = dim(r, 8);
                   return std::vector<Tensor>{random_tensor(r, n, k), random_tensor(r, k, m)};
                 },
                 [](Graph&, std::span<const Var> p) { return ad::matmul(p[0], p[1]); }});
  out.push_back({"matmul_nt",
                 [](Rng& r) {
                   const std::size_t n = dim(r, 8), k = dim(r, 16), m = dim(r, 8);
                   return std::vector<Tensor>{random_tensor(r, n, k), random_tensor(r, m, k)};
                 },
                 [](Graph&, std::span<const Var> p) { return ad::matmul_nt(p[0], p[1]); }});
  out.push_back({"transpose", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 8), dim(r, 16))}; },
                 [](Graph&, std::span<const Var> p) { return ad::transpose(p[0]); }});
  auto pair_same = [](Rng& r) {
    const std::size_t n = dim(r, 8), m = dim(r, 16);
    return std::vector<Tensor>{random_tensor(r, n, m), random_tensor(r, n, m)};
  };
  out.push_back({"add", pair_same, [](Graph&, std::span<const Var> p) { return ad::add(p[0], p[1]); }});
  out.push_back({"sub", pair_same, [](Graph&, std::span<const Var> p) { return ad::sub(p[0], p[1]); }});
  out.push_back({"hadamard", pair_same, [](Graph&, std::span<const Var> p) { return ad::hadamard(p[0], p[1]); }});
  out.push_back({"add_row",
                 [](Rng& r) {
                   const std::size_t n = dim(r, 8), m = dim(r, 16);
                   return std::vector<Tensor>{random_tensor(r, n, m), random_tensor(r, 1, m)};
                 },
                 [](Graph&, std::span<const Var> p) { return ad::add_row(p[0], p[1]); }});
  auto single = [](Rng& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 8), dim(r, 16))}; };
  out.push_back({"scale", single, [](Graph&, std::span<const Var> p) { return ad::scale(p[0], -1.7); }});
  out.push_back({"affine", single, [](Graph&, std::span<const Var> p) { return ad::affine(p[0], 0.3, 2.0); }});
  out.push_back({"concat_rows",
                 [](Rng& r) {
                   const std::size_t m = dim(r, 16);
                   return std::vector<Tensor>{random_tensor(r, dim(r, 4), m), random_tensor(r, dim(r, 4), m)};
                 },
                 [](Graph&, std::span<const Var> p) { return ad::concat_rows(p.subspan(0, 2)); }});
  out.push_back({"concat_cols",
                 [](Rng& r) {
                   const std::size_t n = dim(r, 8);
                   return std::vector<Tensor>{random_tensor(r, n, dim(r, 8)), random_tensor(r, n, dim(r, 8))};
                 },
                 [](Graph&, std::span<const Var> p) { return ad::concat_cols(p.subspan(0, 2)); }});
  out.push_back({"slice_rows", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, 2 + r.below(7), dim(r, 16))}; },
                 [](Graph&, std::span<const Var> p) { return ad::slice_rows(p[0], 1, p[0].rows() - 1); }});
  out.push_back({"slice_cols", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 8), 2 + r.below(15))}; },
                 [](Graph&, std::span<const Var> p) { return ad::slice_cols(p[0], 1, p[0].cols() - 1); }});
  out.push_back({"gather_rows", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, 3 + r.below(6), dim(r, 16))}; },
                 [](Graph&, std::span<const Var> p) {
                   const std::size_t idx[] = {2, 0, 2, 1};
                   return ad::gather_rows(p[0], idx);
                 }});
  out.push_back({"softmax_rows", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 8), dim(r, 16), -2, 2)}; },
                 [](Graph&, std::span<const Var> p) { return ad::softmax_rows(p[0], 0.7); }});
  out.push_back({"log_softmax_rows", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 8), dim(r, 16), -2, 2)}; },
                 [](Graph&, std::span<const Var> p) { return ad::log_softmax_rows(p[0], 0.5); }});
  out.push_back({"layer_norm",
                 [](Rng& r) {
                   const std::size_t n = dim(r, 8), m = 2 + r.below(15);
                   return std::vector<Tensor>{random_tensor(r, n, m, -2, 2), random_tensor(r, 1, m), random_tensor(r, 1, m)};
                 },
                 [](Graph&, std::span<const Var> p) { return ad::layer_norm(p[0], p[1], p[2], 1e-5); }});
  out.push_back({"gelu", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 8), dim(r, 16), -3, 3)}; },
                 [](Graph&, std::span<const Var> p) { return ad::gelu(p[0]); }});
  out.push_back({"sigmoid", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 8), dim(r, 16), -4, 4)}; },
                 [](Graph&, std::span<const Var> p) { return ad::sigmoid(p[0]); }});
  out.push_back({"log", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 8), dim(r, 16), 0.2, 3)}; },
                 [](Graph&, std::span<const Var> p) { return ad::log(p[0]); }});
  // Inputs stay clear of the clamp bounds, where the derivative jumps.
  out.push_back({"clamp",
                 [](Rng& r) {
                   Tensor t = random_tensor(r, dim(r, 8), dim(r, 16), -1, 1);
                   for (auto& v : t.data())
                     if (std::abs(std::abs(v) - 0.5) < 1e-3) v += 0.01;
                   return std::vector<Tensor>{t};
                 },
                 [](Graph&, std::span<const Var> p) { return ad::clamp(p[0], -0.5, 0.5); }});
  out.push_back({"pow", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 8), dim(r, 16), 0.1, 2)}; },
                 [](Graph&, std::span<const Var> p) { return ad::pow(p[0], 2.5); }});
  out.push_back({"l2_normalize_rows", [](Rng& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 8), dim(r, 16))}; },
                 [](Graph&, std::span<const Var> p) { return ad::l2_normalize_rows(p[0]); }});
  out.push_back({"row_dot", pair_same, [](Graph&, std::span<const Var> p) { return ad::row_dot(p[0], p[1]); }});
  out.push_back({"sum", single, [](Graph&, std::span<const Var> p) { return ad::sum(p[0]); }});
  out.push_back({"mean", single, [](Graph&, std::span<const Var> p) { return ad::mean(p[0]); }});
  out.push_back({"gelu_mlp",
                 [](Rng& r) {
                   const std::size_t n = dim(r, 8), d = dim(r, 8), h = dim(r, 16), o = dim(r, 8);
                   return std::vector<Tensor>{random_tensor(r, n, d), random_tensor(r, d, h), random_tensor(r, 1, h),
                                              random_tensor(r, h, o), random_tensor(r, 1, o)};
                 },
                 [](Graph&, std::span<const Var> p) { return ad::gelu_mlp(p[0], p[1], p[2], p[3], p[4]); }});
  out.push_back({"multi_head_attention",
                 [](Rng& r) {
                   const std::size_t d = 8, nq = dim(r, 8), nk = dim(r, 8);
                   std::vector<Tensor> t{random_tensor(r, nq, d), random_tensor(r, nk, d), random_tensor(r, nk, d)};
                   for (int i = 0; i < 4; ++i) {
                     t.push_back(random_tensor(r, d, d, -0.5, 0.5));
                     if (i != 1) t.push_back(random_tensor(r, 1, d));
                   }
                   return t;
                 },
                 [](Graph&, std::span<const Var> p) {
                   const ad::AttentionWeights w{p[3], p[4], p[5], p[6], p[7], p[8], p[9]};
                   return ad::multi_head_attention(p[0], p[1], p[2], w, 2);
                 }});
  return out;
}

ModelConfig small_config(std::uint64_t seed) {
  ModelConfig c;
  c.D = 8;
  c.K = 3;
  c.M = 3;
  c.J = 2;
  c.L_a = 1;
  c.L = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.seed = seed;
  return c;
}

} // namespace

GradCheckCase pipeline_gradcheck(std::uint64_t seed, double eps) {
  Rng rng(seed * 7919 + 17);
  const ModelConfig model = small_config(seed);
  ModelParams params = init_params(model);
  // Larger weights than the training init so every path carries signal.
  for (auto& t : params.tensors())
    for (auto& v : t.data()) v += rng.normal(0.0, 0.3);
  LossConfig loss;
  loss.temperature = 0.5;
  const Tensor visual = random_tensor(rng, 5, model.D);
  GroundTruthSet truth;
  truth.common = random_tensor(rng, 2, model.D);
  truth.rare = random_tensor(rng, 1, model.D);
  truth.common_positions = {0.0, 1.0};
  truth.rare_positions = {0.5};
  const std::vector<double> freq = {5, 3, 1, 0, 2};

  MatchAssignment frozen;
  {
    Graph g;
    const auto vars = bind_params(g, params);
    frozen = sample_objective(g, model, loss, vars, g.constant(visual), truth, freq).match;
  }
  const ad::ScalarBuilder f = [&](Graph& g, std::span<const Var> vars) {
    return sample_objective(g, model, loss, vars, g.constant(visual), truth, freq, &frozen).total;
  };
  return {"pipeline", seed, ad::finite_diff_check(f, params.tensors(), eps)};
}

std::vector<GradCheckCase> run_gradcheck_suite(std::size_t seeds, double eps, std::uint64_t base_seed) {
  std::vector<GradCheckCase> out;
  const auto prims = primitives();
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = base_seed + s;
    for (std::size_t i = 0; i < prims.size(); ++i) {
      Rng rng(seed * 1000003 + i);
      const std::vector<Tensor> inputs = prims[i].inputs(rng);
      const std::uint64_t probe_seed = rng.next_u64();
      const auto& body = prims[i].body;
      const ad::ScalarBuilder f = [&](Graph& g, std::span<const Var> vars) {
        Rng probe_rng(probe_seed);
        return probe(g, body(g, vars), probe_rng);
      };
      out.push_back({prims[i].name, seed, ad::finite_diff_check(f, inputs, eps)});
    }
    out.push_back(pipeline_gradcheck(seed, eps));
  }
  return out;
}

} // namespace teaser
