#include <cmath>
#include <random>

#include "doctest.h"
#include "teaser/errors.hpp"
#include "teaser/gradcheck.hpp"
#include "teaser/model.hpp"

using namespace teaser;

namespace {

EmbeddingMatrix random_visual(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  EmbeddingMatrix m(rows, cols);
  for (auto& v : m.data()) v = g(rng);
  return m;
}

} // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.heads = 5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.M = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.D = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("initialization is seeded and follows the stated distributions") {
  ModelConfig c;
  const ModelParams a = init_params(c), b = init_params(c);
  CHECK(a == b);
  c.seed = 1;
  CHECK_FALSE(init_params(c) == a);
  check_params(c, a);

  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::string& name = a.name(i);
    const bool gain = name.ends_with(".g");
    const bool bias = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") ||
                      (name.size() > 3 && name[name.size() - 3] == '.' && name[name.size() - 2] == 'b');
    for (double v : a[i].data()) {
      CHECK(static_cast<double>(static_cast<float>(v)) == v);
      if (gain) {
        CHECK(v == 1.0);
      } else if (bias) {
        CHECK(v == 0.0);
      } else {
        sum += v;
        sq += v * v;
        ++n;
      }
    }
  }
  const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 0.002);
  CHECK(sd == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("parameter layout is complete and rejects mismatches") {
  ModelConfig c;
  ModelParams p = init_params(c);
  CHECK(p.size() == param_layout(c).size());
  CHECK(p.at("Q_v").rows() == c.K);
  CHECK(p.at("Q_c").rows() == c.M);
  CHECK(p.at("Q_r").rows() == c.J);
  CHECK_FALSE(p.contains("abs.0.sa.bk"));
  p.at("Q_c") = Tensor(c.M + 1, c.D);
  CHECK_THROWS_AS(check_params(c, p), ShapeError);
  ModelConfig no_abs = c;
  no_abs.use_abstractor = false;
  CHECK_FALSE(init_params(no_abs).contains("Q_v"));
}

TEST_CASE("abstractor shapes") {
  ModelConfig c;
  const EmbeddingMatrix V = random_visual(50, 32, 3);
  CHECK(abstractor_forward(c, init_params(c), V).rows() == 8);
  CHECK(abstractor_forward(c, init_params(c), V).cols() == 32);

  ModelConfig empty_stack = c;
  empty_stack.L_a = 0;
  const ModelParams p = init_params(empty_stack);
  CHECK(abstractor_forward(empty_stack, p, V) == p.at("Q_v"));

  ModelConfig k0 = c;
  k0.K = 0;
  const Tensor A = abstractor_forward(k0, init_params(k0), V);
  CHECK(A.rows() == 0);
  CHECK(A.cols() == 32);

  CHECK_THROWS_AS(abstractor_forward(c, init_params(c), random_visual(5, 16, 1)), ShapeError);
}

TEST_CASE("topic encoder shapes and ranges") {
  ModelConfig c;
  const TopicEmbeddings t = encode(c, init_params(c), random_visual(50, 32, 4));
  CHECK(t.common.rows() == 6);
  CHECK(t.common.cols() == 32);
  CHECK(t.rare.rows() == 3);
  REQUIRE(t.p.size() == 9);
  for (double p : t.p) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  ModelConfig j0 = c;
  j0.J = 0;
  const TopicEmbeddings u = encode(j0, init_params(j0), random_visual(50, 32, 4));
  CHECK(u.rare.rows() == 0);
  CHECK(u.p.size() == 6);
}

TEST_CASE("with no visual queries the topics ignore the image") {
  ModelConfig c;
  c.K = 0;
  const ModelParams p = init_params(c);
  const TopicEmbeddings a = encode(c, p, random_visual(50, 32, 5));
  const TopicEmbeddings b = encode(c, p, random_visual(20, 32, 6));
  CHECK(a.common == b.common);
  CHECK(a.rare == b.rare);
  CHECK(a.p == b.p);
}

TEST_CASE("topic encoder output is invariant to the order of memory rows") {
  ModelConfig c;
  ModelParams p = init_params(c);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 0.5);
  // Larger weights than the init so attention is far from uniform.
  for (auto& t : p.tensors())
    for (auto& v : t.data()) v += g(rng);
  Tensor A(8, 32);
  for (auto& v : A.data()) v = g(rng);
  Tensor B(8, 32);
  const std::size_t perm[] = {3, 7, 0, 5, 1, 6, 2, 4};
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t col = 0; col < 32; ++col) B(r, col) = A(perm[r], col);
  const TopicEmbeddings x = tse_forward(c, p, A), y = tse_forward(c, p, B);
  for (std::size_t i = 0; i < x.common.size(); ++i) CHECK(x.common[i] == doctest::Approx(y.common[i]).epsilon(1e-10));
  for (std::size_t i = 0; i < x.p.size(); ++i) CHECK(x.p[i] == doctest::Approx(y.p[i]).epsilon(1e-10));
}

TEST_CASE("raw visual memory when the abstractor is disabled") {
  ModelConfig c;
  c.use_abstractor = false;
  const EmbeddingMatrix V = random_visual(12, 32, 8);
  const Tensor A = abstractor_forward(c, init_params(c), V);
  CHECK(A == Tensor::from_embeddings(V));
}

TEST_CASE("graph and value forward agree, and cross-attention maps are row-stochastic") {
  ModelConfig c;
  const ModelParams p = init_params(c);
  const EmbeddingMatrix V = random_visual(10, 32, 2);
  ad::Graph g;
  const auto vars = bind_params(g, p);
  const ForwardVars f = model_forward(g, c, vars, g.constant(Tensor::from_embeddings(V)));
  const TopicEmbeddings t = encode(c, p, V);
  for (std::size_t i = 0; i < t.common.rows(); ++i)
    for (std::size_t j = 0; j < c.D; ++j) CHECK(f.topics.value()(i, j) == t.common(i, j));
  REQUIRE(f.cross_attention.size() == c.L_a + c.L);
  for (const Tensor& w : f.cross_attention) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double s = 0;
      for (double v : w.row(r)) s += v;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("full-objective gradients agree with finite differences to 1e-9 absolute") {
  // The relative criterion is asserted in test_autodiff; this checks the
  // absolute agreement on other seeds.
  for (std::uint64_t seed : {100u, 101u}) {
    const GradCheckCase c = pipeline_gradcheck(seed);
    INFO("seed " << seed);
    CHECK(c.report.max_abs_error < 1e-9);
  }
}

TEST_CASE("every query bank receives a gradient from a function of the outputs") {
  ModelConfig c;
  ModelParams p = init_params(c);
  const EmbeddingMatrix V = random_visual(10, 32, 12);
  ad::Graph g;
  const auto vars = bind_params(g, p);
  const ForwardVars f = model_forward(g, c, vars, g.constant(Tensor::from_embeddings(V)));
  Tensor probe(f.topics.rows(), f.topics.cols());
  for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = std::cos(static_cast<double>(i));
  const ad::Var loss = ad::add(ad::sum(ad::hadamard(f.topics, g.constant(probe))), ad::sum(f.probs));
  const auto grads = g.backward(loss);
  for (const char* name : {"Q_v", "Q_c", "Q_r"}) {
    double norm = 0;
    for (double v : grads[p.index_of(name)].data()) norm += v * v;
    INFO(name);
    CHECK(norm > 0.0);
  }
}
