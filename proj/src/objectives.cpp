#include "teaser/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "teaser/errors.hpp"

namespace teaser {

using ad::Var;

const char* to_string(SelectionVariant v) {
  switch (v) {
    case SelectionVariant::Bce: return "bce";
    case SelectionVariant::Focal: return "focal";
    case SelectionVariant::Db: return "db";
  }
  return "db";
}

SelectionVariant selection_variant_from_string(const std::string& s) {
  if (s == "bce") return SelectionVariant::Bce;
  if (s == "focal") return SelectionVariant::Focal;
  if (s == "db") return SelectionVariant::Db;
  throw ParseError("unknown selection variant \"" + s + "\" (expected bce, focal or db)");
}

const char* to_string(LossReduction r) { return r == LossReduction::Mean ? "mean" : "sum"; }

LossReduction loss_reduction_from_string(const std::string& s) {
  if (s == "sum") return LossReduction::Sum;
  if (s == "mean") return LossReduction::Mean;
  throw ParseError("unknown loss reduction \"" + s + "\" (expected sum or mean)");
}

void LossConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("loss: temperature must be > 0");
  if (!(lambda >= 0.0) || !(alpha >= 0.0)) throw ValidationError("loss: lambda and alpha must be >= 0");
  if (!(prob_epsilon > 0.0 && prob_epsilon < 0.5)) throw ValidationError("loss: prob_epsilon must be in (0, 0.5)");
  if (!(db.neg_scale > 0.0)) throw ValidationError("loss: db neg_scale must be > 0");
  if (!(focal_gamma >= 0.0)) throw ValidationError("loss: focal_gamma must be >= 0");
}

LossBreakdown compose_losses(double l_sim, double t2r, double r2t, double l_select, const LossConfig& config) {
  LossBreakdown b;
  b.lambda = config.lambda;
  b.alpha = config.alpha;
  b.l_sim = l_sim;
  b.l_tcl_t2r = t2r;
  b.l_tcl_r2t = r2t;
  b.l_tcl = t2r + r2t;
  b.l_select = l_select;
  b.l_align = l_sim + config.alpha * b.l_tcl;
  b.l_total = b.l_align + config.lambda * l_select;
  return b;
}

// ---- graph-level ----------------------------------------------------------

namespace {

void require_nonzero_rows(const Tensor& t, const char* what) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double sq = 0.0;
    for (double v : t.row(i)) sq += v * v;
    if (!(sq > 0.0)) throw ValidationError(std::string(what) + ": row " + std::to_string(i) + " has zero norm");
  }
}

Var reduce(Var total, std::size_t n, LossReduction reduction) {
  if (reduction == LossReduction::Mean && n > 0) return ad::scale(total, 1.0 / static_cast<double>(n));
  return total;
}

} // namespace

Var cosine_similarity_var(Var topics, Var sentences, LossReduction reduction) {
  if (topics.rows() != sentences.rows()) throw ShapeError("cosine loss: topic and sentence counts differ");
  require_nonzero_rows(topics.value(), "cosine loss topics");
  require_nonzero_rows(sentences.value(), "cosine loss sentences");
  const Var cos = ad::row_dot(ad::l2_normalize_rows(topics), ad::l2_normalize_rows(sentences));
  const double n = static_cast<double>(topics.rows());
  return reduce(ad::affine(ad::sum(cos), -1.0, n), topics.rows(), reduction);
}

std::pair<Var, Var> topic_contrastive_vars(Var topics, Var sentences, double temperature, bool normalize,
                                           LossReduction reduction) {
  if (topics.rows() != sentences.rows()) throw ShapeError("contrastive loss: topic and sentence counts differ");
  if (!(temperature > 0.0)) throw ValidationError("contrastive loss: temperature must be > 0");
  Var t = topics, y = sentences;
  if (normalize) {
    require_nonzero_rows(topics.value(), "contrastive loss topics");
    require_nonzero_rows(sentences.value(), "contrastive loss sentences");
    t = ad::l2_normalize_rows(topics);
    y = ad::l2_normalize_rows(sentences);
  }
  const std::size_t n = topics.rows();
  const Var logits = ad::matmul_nt(t, y);
  const Var eye = topics.graph->constant(Tensor::identity(n));
  const Var t2r = ad::scale(ad::sum(ad::hadamard(ad::log_softmax_rows(logits, temperature), eye)), -1.0);
  const Var r2t =
      ad::scale(ad::sum(ad::hadamard(ad::log_softmax_rows(ad::transpose(logits), temperature), eye)), -1.0);
  return {reduce(t2r, n, reduction), reduce(r2t, n, reduction)};
}

std::vector<double> db_rebalance_weights(std::span<const double> positive_counts, const DbParams& db) {
  const std::size_t n = positive_counts.size();
  std::vector<double> inv(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    inv[i] = 1.0 / std::max(positive_counts[i], 1.0);
    total += inv[i];
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = inv[i] / total * static_cast<double>(n);
    out[i] = db.alpha + 1.0 / (1.0 + std::exp(-db.beta * (r - db.mu)));
  }
  return out;
}

Var selection_var(Var logits, std::span<const int> labels, std::span<const double> topic_freq,
                  const LossConfig& config) {
  const std::size_t n = logits.rows() * logits.cols();
  if (labels.size() != n) {
    throw ShapeError("selection loss: " + std::to_string(n) + " probabilities but " + std::to_string(labels.size()) +
                     " labels");
  }
  if (!topic_freq.empty() && topic_freq.size() != n) {
    throw ShapeError("selection loss: frequency stats have length " + std::to_string(topic_freq.size()));
  }
  ad::Graph& g = *logits.graph;
  const double eps = config.prob_epsilon;
  const Var z = logits.cols() == 1 ? logits : ad::transpose(logits);
  Tensor w_pos(n, 1), w_neg(n, 1);
  Var pos_log, neg_log;

  if (config.selection == SelectionVariant::Db) {
    std::vector<double> counts(topic_freq.begin(), topic_freq.end());
    if (counts.empty()) counts.assign(n, 1.0);
    const auto rhat = db_rebalance_weights(counts, config.db);
    const double lam = config.db.neg_scale, nu = config.db.neg_margin;
    for (std::size_t i = 0; i < n; ++i) {
      w_pos[i] = rhat[i] * labels[i];
      w_neg[i] = rhat[i] * (1 - labels[i]) / lam;
    }
    // log sigma(z - nu) and log(1 - sigma(lam (z - nu))) = log sigma(-lam (z - nu))
    pos_log = ad::log(ad::clamp(ad::sigmoid(ad::affine(z, 1.0, -nu)), eps, 1.0 - eps));
    neg_log = ad::log(ad::clamp(ad::sigmoid(ad::affine(z, -lam, lam * nu)), eps, 1.0 - eps));
  } else {
    const Var p = ad::clamp(ad::sigmoid(z), eps, 1.0 - eps);
    const Var q = ad::affine(p, -1.0, 1.0);
    pos_log = ad::log(p);
    neg_log = ad::log(q);
    for (std::size_t i = 0; i < n; ++i) {
      w_pos[i] = labels[i];
      w_neg[i] = 1 - labels[i];
    }
    if (config.selection == SelectionVariant::Focal) {
      pos_log = ad::hadamard(pos_log, ad::pow(q, config.focal_gamma));
      neg_log = ad::hadamard(neg_log, ad::pow(p, config.focal_gamma));
    }
  }
  if (config.select_mask_literal) {
    for (std::size_t i = 0; i < n; ++i) {
      w_pos[i] *= labels[i];
      w_neg[i] *= labels[i];
    }
  }
  const Var total = ad::add(ad::hadamard(pos_log, g.constant(std::move(w_pos))),
                            ad::hadamard(neg_log, g.constant(std::move(w_neg))));
  return ad::scale(ad::sum(total), -1.0 / static_cast<double>(n));
}

// ---- value-level ----------------------------------------------------------

double cosine_similarity_loss(const Tensor& topics, const Tensor& sentences, LossReduction reduction) {
  if (topics.rows() == 0 && sentences.rows() == 0) return 0.0;
  ad::Graph g;
  return cosine_similarity_var(g.constant(topics), g.constant(sentences), reduction).value().item();
}

ContrastiveTerms topic_contrastive_loss(const Tensor& topics, const Tensor& sentences, double temperature,
                                        bool normalize, LossReduction reduction) {
  if (topics.rows() == 0 && sentences.rows() == 0) return {0.0, 0.0, true};
  ad::Graph g;
  auto [t2r, r2t] = topic_contrastive_vars(g.constant(topics), g.constant(sentences), temperature, normalize, reduction);
  return {t2r.value().item(), r2t.value().item(), false};
}

double selection_loss(std::span<const double> p, std::span<const int> labels, std::span<const double> topic_freq,
                      const LossConfig& config) {
  config.validate();
  if (p.size() != labels.size()) {
    throw ShapeError("selection loss: " + std::to_string(p.size()) + " probabilities but " +
                     std::to_string(labels.size()) + " labels");
  }
  const double eps = config.prob_epsilon;
  Tensor z(p.size(), 1);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw ValidationError("selection loss: probability outside [0, 1]");
    const double c = std::clamp(p[i], eps, 1.0 - eps);
    z[i] = std::log(c) - std::log1p(-c);
  }
  ad::Graph g;
  return selection_var(g.constant(std::move(z)), labels, topic_freq, config).value().item();
}

// ---- full objective -------------------------------------------------------

SampleObjective sample_objective(ad::Graph& graph, const ModelConfig& model, const LossConfig& loss,
                                 std::span<const Var> params, Var visual, const GroundTruthSet& truth,
                                 std::span<const double> topic_freq, const MatchAssignment* fixed_match) {
  SampleObjective out;
  out.forward = model_forward(graph, model, params, visual);
  const Tensor& topics = out.forward.topics.value();
  Tensor common(model.M, model.D), rare(model.J, model.D);
  for (std::size_t i = 0; i < model.M; ++i)
    for (std::size_t j = 0; j < model.D; ++j) common(i, j) = topics(i, j);
  for (std::size_t i = 0; i < model.J; ++i)
    for (std::size_t j = 0; j < model.D; ++j) rare(i, j) = topics(model.M + i, j);
  out.match = fixed_match ? *fixed_match : match_topics(common, rare, truth);

  std::vector<std::size_t> query_rows;
  Tensor targets(out.match.matched_count(), model.D);
  for (std::size_t q = 0; q < out.match.sigma.size(); ++q) {
    if (!out.match.sigma[q]) continue;
    const Tensor& src = out.match.is_rare_query(q) ? truth.rare : truth.common;
    const auto row = src.row(*out.match.sigma[q]);
    std::copy(row.begin(), row.end(), targets.row(query_rows.size()).begin());
    query_rows.push_back(q);
  }

  const Var select = selection_var(out.forward.logits, out.match.labels, topic_freq, loss);
  Var total = ad::scale(select, loss.lambda);
  double l_sim = 0.0, t2r = 0.0, r2t = 0.0;
  if (!query_rows.empty()) {
    const Var matched = ad::gather_rows(out.forward.topics, query_rows);
    const Var y = graph.constant(std::move(targets));
    const Var sim = cosine_similarity_var(matched, y, loss.reduction);
    auto [a, b] = topic_contrastive_vars(matched, y, loss.temperature, loss.tcl_normalize, loss.reduction);
    l_sim = sim.value().item();
    t2r = a.value().item();
    r2t = b.value().item();
    const Var align = ad::add(sim, ad::scale(ad::add(a, b), loss.alpha));
    total = ad::add(align, total);
  }
  out.breakdown = compose_losses(l_sim, t2r, r2t, select.value().item(), loss);
  out.breakdown.no_pairs = query_rows.empty();
  out.total = total;
  return out;
}

} // namespace teaser
