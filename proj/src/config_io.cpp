#include "teaser/config_io.hpp"

#include <set>

#include "teaser/errors.hpp"

namespace teaser {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw ParseError(std::string(what) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ParseError(std::string(what) + ": unknown key \"" + key + "\"");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const char* what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParseError(std::string(what) + ": bad value for \"" + key + "\"");
  }
}

} // namespace

json to_json(const ModelConfig& c) {
  return {{"D", c.D},
          {"K", c.K},
          {"M", c.M},
          {"J", c.J},
          {"L_a", c.L_a},
          {"L", c.L},
          {"heads", c.heads},
          {"seed", c.seed},
          {"mlp_ratio", c.mlp_ratio},
          {"use_abstractor", c.use_abstractor},
          {"abstractor_self_attention", c.abstractor_self_attention},
          {"positional_encoding", c.positional_encoding}};
}

ModelConfig model_config_from_json(const json& j) {
  const char* what = "model config";
  reject_unknown(j, {"D", "K", "M", "J", "L_a", "L", "heads", "seed", "mlp_ratio", "use_abstractor",
                     "abstractor_self_attention", "positional_encoding"},
                 what);
  ModelConfig c;
  read(j, "D", c.D, what);
  read(j, "K", c.K, what);
  read(j, "M", c.M, what);
  read(j, "J", c.J, what);
  read(j, "L_a", c.L_a, what);
  read(j, "L", c.L, what);
  read(j, "heads", c.heads, what);
  read(j, "seed", c.seed, what);
  read(j, "mlp_ratio", c.mlp_ratio, what);
  read(j, "use_abstractor", c.use_abstractor, what);
  read(j, "abstractor_self_attention", c.abstractor_self_attention, what);
  read(j, "positional_encoding", c.positional_encoding, what);
  c.validate();
  return c;
}

json to_json(const LossConfig& c) {
  return {{"lambda", c.lambda},
          {"alpha", c.alpha},
          {"temperature", c.temperature},
          {"selection_variant", to_string(c.selection)},
          {"db", {{"alpha", c.db.alpha}, {"beta", c.db.beta}, {"mu", c.db.mu}, {"neg_scale", c.db.neg_scale},
                  {"neg_margin", c.db.neg_margin}}},
          {"focal_gamma", c.focal_gamma},
          {"prob_epsilon", c.prob_epsilon},
          {"tcl_normalize", c.tcl_normalize},
          {"loss_reduction", to_string(c.reduction)},
          {"select_mask_literal", c.select_mask_literal}};
}

LossConfig loss_config_from_json(const json& j) {
  const char* what = "loss config";
  reject_unknown(j, {"lambda", "alpha", "temperature", "selection_variant", "db", "focal_gamma", "prob_epsilon",
                     "tcl_normalize", "loss_reduction", "select_mask_literal"},
                 what);
  LossConfig c;
  read(j, "lambda", c.lambda, what);
  read(j, "alpha", c.alpha, what);
  read(j, "temperature", c.temperature, what);
  if (j.contains("selection_variant")) {
    std::string s;
    read(j, "selection_variant", s, what);
    c.selection = selection_variant_from_string(s);
  }
  if (j.contains("db")) {
    const json& db = j.at("db");
    reject_unknown(db, {"alpha", "beta", "mu", "neg_scale", "neg_margin"}, "db config");
    read(db, "alpha", c.db.alpha, "db config");
    read(db, "beta", c.db.beta, "db config");
    read(db, "mu", c.db.mu, "db config");
    read(db, "neg_scale", c.db.neg_scale, "db config");
    read(db, "neg_margin", c.db.neg_margin, "db config");
  }
  read(j, "focal_gamma", c.focal_gamma, what);
  read(j, "prob_epsilon", c.prob_epsilon, what);
  read(j, "tcl_normalize", c.tcl_normalize, what);
  if (j.contains("loss_reduction")) {
    std::string s;
    read(j, "loss_reduction", s, what);
    c.reduction = loss_reduction_from_string(s);
  }
  read(j, "select_mask_literal", c.select_mask_literal, what);
  c.validate();
  return c;
}

json to_json(const SyntheticTaskConfig& c) {
  return {{"n_findings", c.n_findings},
          {"zipf_s", c.zipf_s},
          {"rare_fraction", c.rare_fraction},
          {"sentences_per_finding", c.sentences_per_finding},
          {"patches_per_image", c.patches_per_image},
          {"noise_sigma", c.noise_sigma},
          {"n_train", c.n_train},
          {"n_val", c.n_val},
          {"n_test", c.n_test},
          {"seed", c.seed},
          {"dim", c.dim},
          {"min_findings", c.min_findings},
          {"max_findings", c.max_findings},
          {"max_rare_per_study", c.max_rare_per_study},
          {"common_jitter", c.common_jitter},
          {"rare_jitter", c.rare_jitter},
          {"rare_max_common_cosine", c.rare_max_common_cosine},
          {"rare_max_count", c.rare_max_count},
          {"common_min_count", c.common_min_count}};
}

SyntheticTaskConfig synthetic_config_from_json(const json& j) {
  const char* what = "synthetic config";
  reject_unknown(j, {"n_findings", "zipf_s", "rare_fraction", "sentences_per_finding", "patches_per_image",
                     "noise_sigma", "n_train", "n_val", "n_test", "seed", "dim", "min_findings", "max_findings",
                     "max_rare_per_study", "common_jitter", "rare_jitter", "rare_max_common_cosine",
                     "rare_max_count", "common_min_count"},
                 what);
  SyntheticTaskConfig c;
  read(j, "n_findings", c.n_findings, what);
  read(j, "zipf_s", c.zipf_s, what);
  read(j, "rare_fraction", c.rare_fraction, what);
  read(j, "sentences_per_finding", c.sentences_per_finding, what);
  read(j, "patches_per_image", c.patches_per_image, what);
  read(j, "noise_sigma", c.noise_sigma, what);
  read(j, "n_train", c.n_train, what);
  read(j, "n_val", c.n_val, what);
  read(j, "n_test", c.n_test, what);
  read(j, "seed", c.seed, what);
  read(j, "dim", c.dim, what);
  read(j, "min_findings", c.min_findings, what);
  read(j, "max_findings", c.max_findings, what);
  read(j, "max_rare_per_study", c.max_rare_per_study, what);
  read(j, "common_jitter", c.common_jitter, what);
  read(j, "rare_jitter", c.rare_jitter, what);
  read(j, "rare_max_common_cosine", c.rare_max_common_cosine, what);
  read(j, "rare_max_count", c.rare_max_count, what);
  read(j, "common_min_count", c.common_min_count, what);
  c.validate();
  return c;
}

} // namespace teaser
