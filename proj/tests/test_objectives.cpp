#include <cmath>
#include <vector>

#include "doctest.h"
#include "teaser/errors.hpp"
#include "teaser/objectives.hpp"

using namespace teaser;
using ad::Graph;
using ad::Var;

namespace {

Tensor row2(double a, double b, double c, double d) { return Tensor(2, 2, {a, b, c, d}); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

LossConfig with_selection(SelectionVariant v) {
  LossConfig c;
  c.selection = v;
  return c;
}

} // namespace

TEST_CASE("cosine similarity loss per pair") {
  const Tensor y(1, 3, {1, 2, 2});
  CHECK(cosine_similarity_loss(Tensor(1, 3, {2, 4, 4}), y) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_similarity_loss(Tensor(1, 3, {2, -1, 0}), y) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity_loss(Tensor(1, 3, {-1, -2, -2}), y) == doctest::Approx(2.0).epsilon(1e-15));
  const Tensor t(2, 3, {1, 2, 2, 2, -1, 0});
  const Tensor yy(2, 3, {1, 2, 2, 1, 2, 2});
  CHECK(cosine_similarity_loss(t, yy) == doctest::Approx(1.0));
  CHECK(cosine_similarity_loss(t, yy, LossReduction::Mean) == doctest::Approx(0.5));
  CHECK_THROWS_AS(cosine_similarity_loss(Tensor(1, 3), y), ValidationError);
  CHECK_THROWS_AS(cosine_similarity_loss(Tensor(1, 2, 1.0), y), ShapeError);
}

TEST_CASE("topic contrastive loss") {
  SUBCASE("a single pair gives zero in both directions") {
    const auto c = topic_contrastive_loss(Tensor(1, 2, {1, 3}), Tensor(1, 2, {-2, 1}), 0.07);
    CHECK(c.t2r == doctest::Approx(0.0));
    CHECK(c.r2t == doctest::Approx(0.0));
  }
  SUBCASE("two orthogonal matched pairs at temperature 1") {
    const auto c = topic_contrastive_loss(row2(1, 0, 0, 1), row2(1, 0, 0, 1), 1.0);
    const double expected = 2.0 * std::log(1.0 + std::exp(-1.0));
    CHECK(c.t2r == doctest::Approx(expected).epsilon(1e-12));
    CHECK(c.r2t == doctest::Approx(expected).epsilon(1e-12));
    CHECK(c.t2r == doctest::Approx(0.62652).epsilon(1e-5));
    CHECK(c.t2r + c.r2t == doctest::Approx(1.25304).epsilon(1e-5));
  }
  SUBCASE("no pairs gives zero and the empty flag") {
    const auto c = topic_contrastive_loss(Tensor(0, 4), Tensor(0, 4), 0.07);
    CHECK(c.empty);
    CHECK(c.t2r == 0.0);
    CHECK(c.r2t == 0.0);
  }
  SUBCASE("the two directions differ on asymmetric similarities") {
    const Tensor t(3, 2, {1, 0, 0.6, 0.8, 0, 1});
    const Tensor y(3, 2, {1, 0.1, 0.9, 0.2, -0.3, 1});
    const auto c = topic_contrastive_loss(t, y, 0.5);
    CHECK(std::abs(c.t2r - c.r2t) > 1e-6);
  }
}

TEST_CASE("selection loss variants") {
  const std::vector<double> p = {0.5, 0.5};
  const std::vector<int> c = {1, 0};
  CHECK(selection_loss(p, c, {}, with_selection(SelectionVariant::Bce)) == doctest::Approx(0.693147).epsilon(1e-6));

  SUBCASE("focal with gamma 0 is bce") {
    LossConfig f = with_selection(SelectionVariant::Focal);
    f.focal_gamma = 0.0;
    const std::vector<double> q = {0.2, 0.7, 0.9};
    const std::vector<int> l = {0, 1, 1};
    CHECK(selection_loss(q, l, {}, f) ==
          doctest::Approx(selection_loss(q, l, {}, with_selection(SelectionVariant::Bce))).epsilon(1e-12));
    f.focal_gamma = 2.0;
    CHECK(selection_loss(q, l, {}, f) < selection_loss(q, l, {}, with_selection(SelectionVariant::Bce)));
  }

  SUBCASE("distribution-balanced loss collapses to bce when every weight is 1") {
    LossConfig db = with_selection(SelectionVariant::Db);
    db.db.alpha = 0.5;  // 0.5 + sigmoid(0) = 1
    db.db.mu = 1.0;     // uniform frequencies give r = 1
    db.db.neg_scale = 1.0;
    db.db.neg_margin = 0.0;
    const std::vector<double> q = {0.2, 0.7, 0.9, 0.4};
    const std::vector<int> l = {0, 1, 1, 0};
    const std::vector<double> freq = {3, 3, 3, 3};
    CHECK(selection_loss(q, l, freq, db) ==
          doctest::Approx(selection_loss(q, l, {}, with_selection(SelectionVariant::Bce))).epsilon(1e-9));
  }

  SUBCASE("perfect predictions approach zero as epsilon shrinks") {
    const std::vector<double> exact = {1.0, 0.0, 1.0};
    const std::vector<int> l = {1, 0, 1};
    double prev = 1e9;
    for (double eps : {1e-2, 1e-4, 1e-7}) {
      LossConfig b = with_selection(SelectionVariant::Bce);
      b.prob_epsilon = eps;
      const double v = selection_loss(exact, l, {}, b);
      CHECK(v <= -std::log(1.0 - eps) + 1e-12);
      CHECK(v < prev);
      prev = v;
    }
  }

  CHECK_THROWS_AS(selection_loss(p, std::vector<int>{1}, {}, with_selection(SelectionVariant::Bce)), ShapeError);
}

TEST_CASE("rebalance weights") {
  const DbParams db;
  const std::vector<double> uniform = {4, 4, 4};
  for (double w : db_rebalance_weights(uniform, db)) CHECK(w == doctest::Approx(db.alpha + sigmoid(db.beta * (1.0 - db.mu))));
  // Counts 1 and 3: inverse frequencies 1 and 1/3 scaled to sum to n = 2.
  const std::vector<double> skewed = {1, 3, 0};
  const auto w = db_rebalance_weights(skewed, db);
  const double inv_sum = 1.0 + 1.0 / 3.0 + 1.0;  // the zero count is treated as 1
  CHECK(w[0] == doctest::Approx(db.alpha + sigmoid(db.beta * (3.0 / inv_sum - db.mu))));
  CHECK(w[1] == doctest::Approx(db.alpha + sigmoid(db.beta * (1.0 / inv_sum - db.mu))));
  CHECK(w[0] > w[1]);
}

TEST_CASE("composition of the total loss") {
  LossConfig cfg;
  cfg.alpha = 0.1;
  cfg.lambda = 2.0;
  const LossBreakdown zero = compose_losses(0, 0, 0, 0, cfg);
  CHECK(zero.l_total == 0.0);
  const LossBreakdown b = compose_losses(0.5, 0.3, 0.2, 0.25, cfg);
  CHECK(b.l_tcl == doctest::Approx(0.5));
  CHECK(b.l_align == doctest::Approx(0.5 + 0.1 * 0.5));
  CHECK(b.l_total == doctest::Approx(0.55 + 2.0 * 0.25));
}

TEST_CASE("graph losses agree with the value-level versions") {
  const Tensor t(3, 4, {0.1, 0.5, -0.3, 1.0, 0.7, -0.2, 0.4, 0.0, -0.5, 0.3, 0.9, 0.2});
  const Tensor y(3, 4, {0.2, 0.4, -0.1, 0.8, 0.6, 0.1, 0.3, -0.2, -0.4, 0.5, 0.8, 0.1});
  Graph g;
  Var tv = g.constant(t), yv = g.constant(y);
  CHECK(cosine_similarity_var(tv, yv, LossReduction::Sum).value().item() ==
        doctest::Approx(cosine_similarity_loss(t, y)).epsilon(1e-12));
  const auto [t2r, r2t] = topic_contrastive_vars(tv, yv, 0.07, true, LossReduction::Sum);
  const auto c = topic_contrastive_loss(t, y, 0.07);
  CHECK(t2r.value().item() == doctest::Approx(c.t2r).epsilon(1e-12));
  CHECK(r2t.value().item() == doctest::Approx(c.r2t).epsilon(1e-12));

  const Tensor logits(1, 4, {-1.0, 0.3, 2.0, -0.2});
  const std::vector<int> labels = {0, 1, 1, 0};
  const std::vector<double> freq = {10, 3, 1, 0};
  std::vector<double> p;
  for (double z : logits.data()) p.push_back(sigmoid(z));
  for (auto v : {SelectionVariant::Bce, SelectionVariant::Focal, SelectionVariant::Db}) {
    const LossConfig cfg = with_selection(v);
    CHECK(selection_var(g.constant(logits), labels, freq, cfg).value().item() ==
          doctest::Approx(selection_loss(p, labels, freq, cfg)).epsilon(1e-9));
  }
}

TEST_CASE("loss gradients match finite differences") {
  const std::vector<Tensor> params = {
      Tensor(3, 4, {0.1, 0.5, -0.3, 1.0, 0.7, -0.2, 0.4, 0.0, -0.5, 0.3, 0.9, 0.2}),
      Tensor(3, 4, {0.2, 0.4, -0.1, 0.8, 0.6, 0.1, 0.3, -0.2, -0.4, 0.5, 0.8, 0.1}),
      Tensor(1, 3, {-1.0, 0.3, 2.0})};
  const std::vector<int> labels = {0, 1, 1};
  const std::vector<double> freq = {10, 3, 1};
  for (auto v : {SelectionVariant::Bce, SelectionVariant::Focal, SelectionVariant::Db}) {
    LossConfig cfg = with_selection(v);
    cfg.temperature = 0.5;
    const auto report = ad::finite_diff_check(
        [&](Graph&, std::span<const Var> p) {
          const auto [t2r, r2t] = topic_contrastive_vars(p[0], p[1], cfg.temperature, true, LossReduction::Sum);
          Var sim = cosine_similarity_var(p[0], p[1], LossReduction::Sum);
          Var sel = selection_var(p[2], labels, freq, cfg);
          return ad::add(ad::add(sim, ad::scale(ad::add(t2r, r2t), cfg.alpha)), ad::scale(sel, cfg.lambda));
        },
        params, 1e-5);
    INFO(to_string(v));
    CHECK(report.max_relative_error < 1e-4);
  }
}
