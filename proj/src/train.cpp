#include "teaser/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binary_io.hpp"
#include "teaser/config_io.hpp"
#include "teaser/errors.hpp"
#include "teaser/rng.hpp"

namespace teaser {

using nlohmann::json;

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("train: lr must be >= 0");
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) throw ValidationError("train: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("train: betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ValidationError("train: adam_eps must be > 0");
}

json to_json(const TrainConfig& c) {
  return {{"model", to_json(c.model)},
          {"loss", to_json(c.loss)},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"weight_decay", c.weight_decay},
          {"linear_decay", c.linear_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"shuffle", c.shuffle}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("train config: expected a JSON object");
  static const char* known[] = {"model", "loss",  "lr",    "epochs",   "batch_size", "seed",
                                "weight_decay", "linear_decay", "beta1", "beta2", "adam_eps", "shuffle"};
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) == std::end(known))
      throw ParseError("train config: unknown key \"" + key + "\"");
  }
  TrainConfig c;
  try {
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.linear_decay = j.value("linear_decay", c.linear_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.shuffle = j.value("shuffle", c.shuffle);
  } catch (const json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(detail::read_file_text(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return train_config_from_json(j);
}

double lr_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (!cfg.linear_decay || total_steps == 0) return cfg.lr;
  const double frac = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return cfg.lr * (1.0 - frac);
}

// ---- position statistics -----------------------------------------------------

void PositionStats::update(std::size_t query, double position) {
  if (query >= mean.size()) throw ValidationError("position stats: query index out of range");
  if (!(position >= 0.0 && position <= 1.0)) throw ValidationError("position stats: position outside [0, 1]");
  ++count[query];
  mean[query] += (position - mean[query]) / static_cast<double>(count[query]);
  mean[query] = std::clamp(mean[query], 0.0, 1.0);
}

void PositionStats::update(const MatchAssignment& match, const GroundTruthSet& truth) {
  for (std::size_t q = 0; q < match.sigma.size(); ++q) {
    if (!match.sigma[q]) continue;
    const auto& positions = match.is_rare_query(q) ? truth.rare_positions : truth.common_positions;
    update(q, positions.at(*match.sigma[q]));
  }
}

// ---- examples -------------------------------------------------------------------

RarityFn rarity_from_bundle(const GalleryBundle& bundle) {
  // Training sentences keep the label decided at build time; anything else
  // goes through the rarity rule.
  std::map<std::string, Rarity> known;
  for (const auto& t : bundle.common.texts) known[normalize_text(t)] = Rarity::Common;
  for (const auto& t : bundle.rare.texts) known[normalize_text(t)] = Rarity::Rare;
  return [known = std::move(known), &bundle](const std::string& text, std::span<const float> embedding) {
    auto it = known.find(normalize_text(text));
    if (it != known.end()) return it->second;
    return bundle.classify(text, embedding);
  };
}

std::vector<Example> make_examples(const Split& split, const ModelConfig& model, const RarityFn& rarity,
                                   std::size_t* truncated) {
  std::vector<Example> out;
  out.reserve(split.studies.size());
  for (const auto& study : split.studies) {
    Example ex;
    ex.study_id = study.id;
    ex.visual = Tensor::from_embeddings(study.visual);
    if (study.visual.rows() > 0 && study.visual.cols() != model.D) {
      throw ValidationError("study \"" + study.id + "\": visual features have dimension " +
                            std::to_string(study.visual.cols()) + ", model D=" + std::to_string(model.D));
    }
    std::vector<std::size_t> common_rows, rare_rows;
    std::vector<double> common_pos, rare_pos;
    for (std::size_t k = 0; k < study.sentence_rows.size(); ++k) {
      const std::size_t row = study.sentence_rows[k];
      const auto emb = split.embeddings.row(row);
      const bool rare = model.J > 0 && rarity && rarity(split.corpus[row].text, emb) == Rarity::Rare;
      auto& rows = rare ? rare_rows : common_rows;
      auto& pos = rare ? rare_pos : common_pos;
      if (rows.size() >= (rare ? model.J : model.M)) {
        if (truncated) ++*truncated;
        continue;
      }
      rows.push_back(row);
      pos.push_back(split.normalized_position(study, k));
    }
    auto gather = [&](const std::vector<std::size_t>& rows) {
      Tensor t(rows.size(), split.embeddings.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto e = split.embeddings.row(rows[i]);
        if (e.size() != model.D) throw ValidationError("sentence embeddings do not match model D");
        std::copy(e.begin(), e.end(), t.row(i).begin());
      }
      if (rows.empty()) t = Tensor(0, model.D);
      return t;
    };
    ex.truth.common = gather(common_rows);
    ex.truth.rare = gather(rare_rows);
    ex.truth.common_positions = std::move(common_pos);
    ex.truth.rare_positions = std::move(rare_pos);
    out.push_back(std::move(ex));
  }
  return out;
}

// ---- checkpoints --------------------------------------------------------------

namespace {

json breakdown_json(const LossBreakdown& b) {
  return {{"l_sim", b.l_sim},       {"l_tcl_t2r", b.l_tcl_t2r}, {"l_tcl_r2t", b.l_tcl_r2t},
          {"l_tcl", b.l_tcl},       {"l_select", b.l_select},   {"l_align", b.l_align},
          {"l_total", b.l_total},   {"lambda", b.lambda},       {"alpha", b.alpha}};
}

LossBreakdown breakdown_from_json(const json& j) {
  LossBreakdown b;
  b.l_sim = j.at("l_sim").get<double>();
  b.l_tcl_t2r = j.at("l_tcl_t2r").get<double>();
  b.l_tcl_r2t = j.at("l_tcl_r2t").get<double>();
  b.l_tcl = j.at("l_tcl").get<double>();
  b.l_select = j.at("l_select").get<double>();
  b.l_align = j.at("l_align").get<double>();
  b.l_total = j.at("l_total").get<double>();
  b.lambda = j.at("lambda").get<double>();
  b.alpha = j.at("alpha").get<double>();
  return b;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  check_params(ckpt.model, ckpt.params);
  std::filesystem::create_directories(dir);
  std::vector<unsigned char> blob;
  json tensors = json::array();
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const std::string& name = ckpt.params.name(i);
    const Tensor& t = ckpt.params[i];
    detail::put_u32(blob, static_cast<std::uint32_t>(name.size()));
    blob.insert(blob.end(), name.begin(), name.end());
    detail::put_u32(blob, 2);
    detail::put_u32(blob, static_cast<std::uint32_t>(t.rows()));
    detail::put_u32(blob, static_cast<std::uint32_t>(t.cols()));
    for (double v : t.data()) detail::put_f32(blob, static_cast<float>(v));
    tensors.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
  }
  detail::write_file_bytes(dir / "params.bin", blob);

  json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["model"] = to_json(ckpt.model);
  manifest["loss"] = to_json(ckpt.loss);
  manifest["tensors"] = tensors;
  manifest["topic_freq"] = ckpt.topic_freq;
  manifest["metadata"] = {{"epochs", ckpt.meta.epochs},
                          {"steps", ckpt.meta.steps},
                          {"seed", ckpt.meta.seed},
                          {"final_train", breakdown_json(ckpt.meta.final_train)},
                          {"has_val", ckpt.meta.has_val},
                          {"final_val", breakdown_json(ckpt.meta.final_val)}};
  detail::write_file_text(dir / "manifest.json", manifest.dump(1) + "\n");

  json stats;
  stats["mean"] = ckpt.positions.mean;
  stats["count"] = ckpt.positions.count;
  detail::write_file_text(dir / "position_stats.json", stats.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint ckpt;
  const auto manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(detail::read_file_text(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("format_version")) {
    throw FormatError(manifest_path.string() + ": missing format_version");
  }
  const json& version = manifest.at("format_version");
  if (!version.is_number_integer() || version.get<int>() != kCheckpointVersion) {
    throw IncompatibleVersionError(manifest_path.string() + ": checkpoint format_version " + version.dump() +
                                   " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  try {
    ckpt.model = model_config_from_json(manifest.at("model"));
    ckpt.loss = loss_config_from_json(manifest.at("loss"));
    ckpt.topic_freq = manifest.at("topic_freq").get<std::vector<double>>();
    const json& meta = manifest.at("metadata");
    ckpt.meta.epochs = meta.at("epochs").get<std::size_t>();
    ckpt.meta.steps = meta.at("steps").get<std::size_t>();
    ckpt.meta.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.meta.final_train = breakdown_from_json(meta.at("final_train"));
    ckpt.meta.has_val = meta.at("has_val").get<bool>();
    ckpt.meta.final_val = breakdown_from_json(meta.at("final_val"));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }

  const auto bytes = detail::read_file_bytes(dir / "params.bin");
  detail::ByteReader reader(bytes);
  std::map<std::string, Tensor> blobs;
  while (reader.remaining() > 0) {
    const std::string name = reader.str(reader.u32("params.bin tensor name length"), "params.bin tensor name");
    const std::string what = "params.bin tensor \"" + name + "\"";
    const std::uint32_t rank = reader.u32(what.c_str());
    if (rank != 2) throw FormatError(what + " has rank " + std::to_string(rank));
    const std::uint32_t rows = reader.u32(what.c_str());
    const std::uint32_t cols = reader.u32(what.c_str());
    if (!reader.has(static_cast<std::size_t>(rows) * cols * 4)) throw FormatError("truncated payload while reading " + what);
    Tensor t(rows, cols);
    for (auto& v : t.data()) v = reader.f32(what.c_str());
    if (!blobs.emplace(name, std::move(t)).second) throw FormatError("params.bin: duplicate tensor \"" + name + "\"");
  }
  for (const auto& spec : param_layout(ckpt.model)) {
    auto it = blobs.find(spec.name);
    if (it == blobs.end()) throw FormatError("params.bin: missing tensor \"" + spec.name + "\"");
    if (it->second.rows() != spec.rows || it->second.cols() != spec.cols) {
      throw FormatError("params.bin: tensor \"" + spec.name + "\" has shape " + it->second.shape_string());
    }
    if (!it->second.all_finite()) throw FormatError("params.bin: tensor \"" + spec.name + "\" is not finite");
    ckpt.params.add(spec.name, std::move(it->second));
    blobs.erase(it);
  }
  if (!blobs.empty()) throw FormatError("params.bin: unexpected tensor \"" + blobs.begin()->first + "\"");

  const auto stats_path = dir / "position_stats.json";
  try {
    const json stats = json::parse(detail::read_file_text(stats_path));
    ckpt.positions.mean = stats.at("mean").get<std::vector<double>>();
    ckpt.positions.count = stats.at("count").get<std::vector<std::int64_t>>();
  } catch (const json::exception& e) {
    throw FormatError(stats_path.string() + ": " + e.what());
  }
  const std::size_t q = ckpt.model.queries();
  if (ckpt.positions.mean.size() != q || ckpt.positions.count.size() != q || ckpt.topic_freq.size() != q) {
    throw FormatError(dir.string() + ": per-query statistics do not match M + J = " + std::to_string(q));
  }
  return ckpt;
}

// ---- training -------------------------------------------------------------------

namespace {

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.l_sim += b.l_sim;
  acc.l_tcl_t2r += b.l_tcl_t2r;
  acc.l_tcl_r2t += b.l_tcl_r2t;
  acc.l_tcl += b.l_tcl;
  acc.l_select += b.l_select;
  acc.l_align += b.l_align;
  acc.l_total += b.l_total;
}

LossBreakdown averaged(LossBreakdown acc, std::size_t n, const LossConfig& loss) {
  const double inv = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
  acc.l_sim *= inv;
  acc.l_tcl_t2r *= inv;
  acc.l_tcl_r2t *= inv;
  acc.l_tcl *= inv;
  acc.l_select *= inv;
  acc.l_align *= inv;
  acc.l_total *= inv;
  acc.lambda = loss.lambda;
  acc.alpha = loss.alpha;
  return acc;
}

// Numeric failures inside one sample's objective (e.g. a NaN reaching the
// matcher) are reported with the study they came from.
template <typename Fn>
auto with_study_context(const Example& ex, const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " (" + where + "study \"" + ex.study_id + "\")");
  }
}

} // namespace

LossBreakdown evaluate_loss(const ModelConfig& model, const LossConfig& loss, const ModelParams& params,
                            std::span<const double> topic_freq, const std::vector<Example>& examples) {
  LossBreakdown acc;
  for (const auto& ex : examples) {
    ad::Graph g;
    const auto vars = bind_params(g, params);
    const auto obj = with_study_context(ex, "", [&] {
      return sample_objective(g, model, loss, vars, g.constant(ex.visual), ex.truth, topic_freq);
    });
    accumulate(acc, obj.breakdown);
  }
  return averaged(acc, examples.size(), loss);
}

TrainResult train(const TrainConfig& cfg, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  ModelConfig model = cfg.model;
  ModelParams params = init_params(model);
  const std::size_t nq = model.queries();
  std::vector<double> topic_freq(nq, 0.0);
  PositionStats positions(nq);

  std::vector<Tensor> m1, m2;
  for (const auto& t : params.tensors()) {
    m1.emplace_back(t.rows(), t.cols());
    m2.emplace_back(t.rows(), t.cols());
  }

  TrainResult result;
  result.initial_train = evaluate_loss(model, cfg.loss, params, topic_freq, train_set);

  const std::size_t n = train_set.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed ^ 0x5DEECE66DULL);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    LossBreakdown epoch_acc;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * cfg.batch_size, end = std::min(n, begin + cfg.batch_size);
      const std::vector<double> freq_snapshot = topic_freq;
      std::vector<Tensor> grad_sum;
      for (const auto& t : params.tensors()) grad_sum.emplace_back(t.rows(), t.cols());
      for (std::size_t k = begin; k < end; ++k) {
        const Example& ex = train_set[order[k]];
        ad::Graph g;
        const auto vars = bind_params(g, params);
        const std::string where = "epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(step) + ", ";
        const auto obj = with_study_context(ex, where, [&] {
          return sample_objective(g, model, cfg.loss, vars, g.constant(ex.visual), ex.truth, freq_snapshot);
        });
        if (!std::isfinite(obj.breakdown.l_total)) {
          throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                             std::to_string(step) + ", study \"" + ex.study_id + "\"");
        }
        const ad::Gradients grads = g.backward(obj.total);
        for (std::size_t i = 0; i < grads.size(); ++i) {
          const Tensor& gi = grads[i];
          for (std::size_t e = 0; e < gi.size(); ++e) grad_sum[i][e] += gi[e];
        }
        accumulate(epoch_acc, obj.breakdown);
        positions.update(obj.match, ex.truth);
        for (std::size_t q = 0; q < nq; ++q) topic_freq[q] += obj.match.labels[q];
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      lr = lr_at(cfg, step, total_steps);
      ++step;
      const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        for (std::size_t e = 0; e < p.size(); ++e) {
          const double gval = grad_sum[i][e] * inv;
          if (!std::isfinite(gval)) {
            throw NumericError("training diverged: non-finite gradient for \"" + params.name(i) + "\" at step " +
                               std::to_string(step - 1));
          }
          m1[i][e] = cfg.beta1 * m1[i][e] + (1.0 - cfg.beta1) * gval;
          m2[i][e] = cfg.beta2 * m2[i][e] + (1.0 - cfg.beta2) * gval * gval;
          const double mhat = m1[i][e] / bias1, vhat = m2[i][e] / bias2;
          p[e] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * p[e]);
        }
      }
    }
    EpochLog log;
    log.epoch = epoch + 1;
    log.train = averaged(epoch_acc, n, cfg.loss);
    log.lr = lr;
    if (!val_set.empty()) {
      log.val = evaluate_loss(model, cfg.loss, params, topic_freq, val_set);
      log.has_val = true;
    }
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  Checkpoint& ckpt = result.checkpoint;
  ckpt.model = model;
  ckpt.loss = cfg.loss;
  for (auto& t : params.tensors())
    for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  ckpt.params = std::move(params);
  ckpt.positions = std::move(positions);
  ckpt.topic_freq = std::move(topic_freq);
  ckpt.meta.epochs = cfg.epochs;
  ckpt.meta.steps = step;
  ckpt.meta.seed = cfg.seed;
  ckpt.meta.final_train = result.history.back().train;
  ckpt.meta.has_val = result.history.back().has_val;
  ckpt.meta.final_val = result.history.back().val;
  return result;
}

} // namespace teaser
