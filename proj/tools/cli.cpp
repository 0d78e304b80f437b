#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "teaser/config_io.hpp"
#include "teaser/corpus.hpp"
#include "teaser/dataset.hpp"
#include "teaser/errors.hpp"
#include "teaser/experiment.hpp"
#include "teaser/gallery.hpp"
#include "teaser/gradcheck.hpp"
#include "teaser/metrics.hpp"
#include "teaser/report.hpp"
#include "teaser/synthetic.hpp"
#include "teaser/train.hpp"

namespace teaser::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t threads = 1;
  bool quiet = false;
  std::string out_dir = ".";
};

class Context {
 public:
  Context(const Globals& g, std::ostream& out) : g_(g), out_(out) {}

  const Globals& globals() const { return g_; }
  std::ostream& out() { return out_; }

  void log(const std::string& line) {
    if (!g_.quiet) out_ << line << '\n';
  }

  // An explicit path wins; otherwise the default name under --out-dir.
  fs::path output(const std::string& given, const std::string& default_name) const {
    return given.empty() ? fs::path(g_.out_dir) / default_name : fs::path(given);
  }

 private:
  const Globals& g_;
  std::ostream& out_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << text;
}

json read_json(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// One {"study_id", "sentences"} object per line; other keys are kept.
std::vector<json> read_report_jsonl(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("study_id") || !j["study_id"].is_string() || !j.contains("sentences") ||
        !j["sentences"].is_array())
      throw ParseError(path.string() + ":" + std::to_string(n) + ": expected {\"study_id\", \"sentences\"}");
    out.push_back(std::move(j));
  }
  return out;
}

void write_references(const Split& split, const fs::path& path) {
  std::string text;
  for (const auto& s : split.studies) {
    json j = {{"study_id", s.id}, {"sentences", json::array()}};
    for (std::size_t row : s.sentence_rows) j["sentences"].push_back(split.corpus[row].text);
    text += j.dump() + '\n';
  }
  write_text(path, text);
}

// ---- synth-data -----------------------------------------------------------

struct SynthOptions {
  std::string config;
  std::size_t n_train = 0, n_val = 0, n_test = 0, findings = 0;
  std::string out;
};

int cmd_synth(Context& ctx, const SynthOptions& o) {
  SyntheticTaskConfig cfg = o.config.empty() ? SyntheticTaskConfig{} : synthetic_config_from_json(read_json(o.config));
  if (o.n_train) cfg.n_train = o.n_train;
  if (o.n_val) cfg.n_val = o.n_val;
  if (o.n_test) cfg.n_test = o.n_test;
  if (o.findings) cfg.n_findings = o.findings;
  if (ctx.globals().seed_given || o.config.empty()) cfg.seed = ctx.globals().seed;
  const Dataset d = generate_synthetic_task(cfg);
  const fs::path dir = ctx.output(o.out, "data");
  save_dataset(d, dir);
  write_references(d.val, dir / "val_references.jsonl");
  write_references(d.test, dir / "test_references.jsonl");
  write_json(dir / "synthetic_config.json", to_json(cfg));
  ctx.log("wrote synthetic dataset to " + dir.string() + " (" + std::to_string(d.train.studies.size()) + " train, " +
          std::to_string(d.val.studies.size()) + " val, " + std::to_string(d.test.studies.size()) + " test studies)");
  return kExitOk;
}

// ---- build-gallery --------------------------------------------------------

struct GalleryOptions {
  std::string corpus, embeddings, labels, out;
  std::size_t clusters = 64;
  double rare_dist = 0.9;
  std::int64_t rare_freq = 6;
  std::string metric = "euclidean";
  std::size_t n_init = 1;
  std::size_t max_iter = 100;
};

int cmd_build_gallery(Context& ctx, const GalleryOptions& o) {
  const SentenceCorpus corpus = load_sentence_corpus(o.corpus);
  const EmbeddingMatrix emb = load_embedding_matrix(o.embeddings);
  GalleryBuildOptions opts;
  opts.clusters = o.clusters;
  opts.criteria.dist_threshold = o.rare_dist;
  opts.criteria.freq_threshold = o.rare_freq;
  opts.criteria.metric = distance_metric_from_string(o.metric);
  opts.seed = ctx.globals().seed;
  opts.n_init = o.n_init;
  opts.max_iter = o.max_iter;
  GalleryBundle bundle = build_gallery_bundle(corpus, emb, opts);
  if (!o.labels.empty()) {
    const auto labels = load_sentence_labels(o.labels);
    attach_finding_labels(bundle.common, labels);
    attach_finding_labels(bundle.rare, labels);
  }
  const fs::path dir = ctx.output(o.out, "galleries");
  save_gallery_bundle(bundle, dir);
  ctx.log("common gallery: " + std::to_string(bundle.common.size()) + " sentences, rare gallery: " +
          std::to_string(bundle.rare.size()) + " sentences, written to " + dir.string());
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainOverrides {
  std::string config;
  std::size_t epochs = 0, batch_size = 0;
  double lr = 0.0;
  int K = -1, J = -1;
  double alpha = -1.0, lambda = -1.0;
  bool no_abstractor = false;
  std::string selection;
};

TrainConfig resolve_train_config(const Context& ctx, const TrainOverrides& o) {
  TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
  if (o.epochs) cfg.epochs = o.epochs;
  if (o.batch_size) cfg.batch_size = o.batch_size;
  if (o.lr > 0.0) cfg.lr = o.lr;
  if (o.K >= 0) cfg.model.K = static_cast<std::size_t>(o.K);
  if (o.J >= 0) cfg.model.J = static_cast<std::size_t>(o.J);
  if (o.alpha >= 0.0) cfg.loss.alpha = o.alpha;
  if (o.lambda >= 0.0) cfg.loss.lambda = o.lambda;
  if (o.no_abstractor) cfg.model.use_abstractor = false;
  if (!o.selection.empty()) cfg.loss.selection = selection_variant_from_string(o.selection);
  if (ctx.globals().seed_given || o.config.empty()) {
    cfg.seed = ctx.globals().seed;
    cfg.model.seed = ctx.globals().seed;
  }
  cfg.validate();
  return cfg;
}

void add_train_overrides(CLI::App* app, TrainOverrides& o) {
  app->add_option("--config", o.config, "Training config JSON (model, loss and optimizer settings)");
  app->add_option("--epochs", o.epochs, "Override the number of epochs");
  app->add_option("--lr", o.lr, "Override the peak learning rate");
  app->add_option("--batch-size", o.batch_size, "Override the batch size");
  app->add_option("--K", o.K, "Override the number of visual queries");
  app->add_option("--J", o.J, "Override the number of rare topic queries");
  app->add_option("--alpha", o.alpha, "Override the topic contrastive loss weight");
  app->add_option("--lambda", o.lambda, "Override the selection loss weight");
  app->add_flag("--no-abstractor", o.no_abstractor, "Feed raw visual features to the topic encoder");
  app->add_option("--selection", o.selection, "Selection loss: bce, focal or db");
}

std::string epoch_line(const EpochLog& l) {
  std::string s = "epoch " + std::to_string(l.epoch) + " train " + fmt("%.4f", l.train.l_total) + " (sim " +
                  fmt("%.3f", l.train.l_sim) + ", tcl " + fmt("%.3f", l.train.l_tcl) + ", select " +
                  fmt("%.3f", l.train.l_select) + ")";
  if (l.has_val) s += " val " + fmt("%.4f", l.val.l_total);
  return s;
}

json loss_json(const LossBreakdown& b) {
  return {{"l_sim", b.l_sim},       {"l_tcl", b.l_tcl},     {"l_tcl_t2r", b.l_tcl_t2r}, {"l_tcl_r2t", b.l_tcl_r2t},
          {"l_select", b.l_select}, {"l_align", b.l_align}, {"l_total", b.l_total}};
}

struct TrainOptions {
  std::string data, galleries, out;
  TrainOverrides overrides;
};

int cmd_train(Context& ctx, const TrainOptions& o) {
  const TrainConfig cfg = resolve_train_config(ctx, o.overrides);
  const Dataset d = load_dataset(o.data);
  const GalleryBundle bundle = load_gallery_bundle(o.galleries);
  const RarityFn rarity = rarity_from_bundle(bundle);
  std::size_t truncated = 0;
  const auto train_set = make_examples(d.train, cfg.model, rarity, &truncated);
  const auto val_set = make_examples(d.val, cfg.model, rarity, &truncated);
  if (truncated) ctx.log("truncated " + std::to_string(truncated) + " sentences beyond the query budget");
  const TrainResult r = train(cfg, train_set, val_set, [&](const EpochLog& l) { ctx.log(epoch_line(l)); });
  const fs::path dir = ctx.output(o.out, "checkpoint");
  save_checkpoint(r.checkpoint, dir);
  json history = json::array();
  for (const auto& l : r.history) {
    json e = {{"epoch", l.epoch}, {"lr", l.lr}, {"train", loss_json(l.train)}};
    if (l.has_val) e["val"] = loss_json(l.val);
    history.push_back(e);
  }
  write_json(dir / "history.json", {{"initial_train", loss_json(r.initial_train)}, {"epochs", history}});
  ctx.log("checkpoint written to " + dir.string());
  return kExitOk;
}

// ---- generate -------------------------------------------------------------

struct GenerateOptions {
  std::string checkpoint, galleries, features, labels, out;
  InferenceConfig inference;
};

int cmd_generate(Context& ctx, const GenerateOptions& o, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const GalleryBundle bundle = load_gallery_bundle(o.galleries);
  const auto labels = o.labels.empty() ? std::map<std::string, std::vector<std::string>>{}
                                       : load_sentence_labels(o.labels);
  const GallerySet galleries = galleries_for(bundle, ckpt.model, labels);
  const FeatureSet features = load_features(o.features);
  std::vector<Study> studies;
  for (std::size_t i = 0; i < features.study_ids.size(); ++i)
    studies.push_back({features.study_ids[i], features.features[i], {}});
  const auto reports = generate_reports(ckpt, studies, galleries, o.inference);
  std::string text;
  std::size_t empty = 0;
  for (const auto& r : reports) {
    json j = {{"study_id", r.study_id}, {"sentences", report_sentences(r.entries)}, {"entries", json::array()}};
    for (const auto& e : r.entries) j["entries"].push_back(entry_to_json(e));
    text += j.dump() + '\n';
    if (r.entries.empty()) ++empty;
  }
  const fs::path path = ctx.output(o.out, "generated.jsonl");
  write_text(path, text);
  if (empty) err << "warning: " << empty << " studies produced an empty report\n";
  ctx.log("wrote " + std::to_string(reports.size()) + " reports to " + path.string());
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalOptions {
  std::string generated, references, labels, out;
};

FindingSet findings_of(const std::vector<std::string>& sentences,
                       const std::map<std::string, std::vector<std::string>>& labels) {
  std::set<std::string> out;
  for (const auto& s : sentences) {
    auto it = labels.find(normalize_text(s));
    if (it != labels.end()) out.insert(it->second.begin(), it->second.end());
  }
  return {out.begin(), out.end()};
}

int cmd_eval(Context& ctx, const EvalOptions& o) {
  const auto generated = read_report_jsonl(o.generated);
  const auto references = read_report_jsonl(o.references);
  std::map<std::string, std::vector<std::string>> refs;
  for (const auto& r : references) refs[r["study_id"].get<std::string>()] = r["sentences"].get<std::vector<std::string>>();
  const auto labels = o.labels.empty() ? std::map<std::string, std::vector<std::string>>{}
                                       : load_sentence_labels(o.labels);

  std::vector<std::vector<std::string>> gen_text, ref_text;
  std::vector<FindingSet> pred, truth;
  for (const auto& g : generated) {
    const std::string id = g["study_id"].get<std::string>();
    auto it = refs.find(id);
    if (it == refs.end()) throw ValidationError("eval: no reference report for study " + id);
    gen_text.push_back(g["sentences"].get<std::vector<std::string>>());
    ref_text.push_back(it->second);
    if (!labels.empty()) {
      pred.push_back(findings_of(gen_text.back(), labels));
      truth.push_back(findings_of(ref_text.back(), labels));
    }
  }
  if (gen_text.empty()) throw ValidationError("eval: no generated reports");
  const NlgScores nlg = nlg_scores(gen_text, ref_text);
  json m = {{"studies", gen_text.size()},
            {"bleu1", nlg.bleu[0]},
            {"bleu2", nlg.bleu[1]},
            {"bleu3", nlg.bleu[2]},
            {"bleu4", nlg.bleu[3]},
            {"rouge_l", nlg.rouge_l}};
  if (!labels.empty()) {
    const CeScores ce = ce_scores(pred, truth);
    m["precision"] = ce.precision;
    m["recall"] = ce.recall;
    m["f1"] = ce.f1;
  } else {
    // Clinical efficacy needs finding labels.
    m["precision"] = nullptr;
    m["recall"] = nullptr;
    m["f1"] = nullptr;
  }
  const fs::path path = ctx.output(o.out, "metrics.json");
  write_json(path, m);
  ctx.log(m.dump(2));
  return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

struct GradcheckOptions {
  std::size_t seeds = 10;
  double eps = 1e-5;
  double tolerance = 1e-4;
};

int cmd_gradcheck(Context& ctx, const GradcheckOptions& o) {
  const auto cases = run_gradcheck_suite(o.seeds, o.eps, ctx.globals().seed);
  std::map<std::string, std::pair<double, double>> worst;  // name -> (relative, absolute)
  std::vector<std::string> order;
  double max_rel = 0.0;
  for (const auto& c : cases) {
    if (!worst.count(c.name)) order.push_back(c.name);
    auto& w = worst[c.name];
    w.first = std::max(w.first, c.report.max_relative_error);
    w.second = std::max(w.second, c.report.max_abs_error);
    max_rel = std::max(max_rel, c.report.max_relative_error);
  }
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %14s %14s", "function", "max_rel_err", "max_abs_err");
  ctx.log(line);
  for (const auto& name : order) {
    std::snprintf(line, sizeof line, "%-22s %14.3e %14.3e%s", name.c_str(), worst[name].first, worst[name].second,
                  worst[name].first < o.tolerance ? "" : "  FAIL");
    ctx.log(line);
  }
  // Always printed, even with --quiet.
  ctx.out() << "max relative error: " << fmt("%.3e", max_rel) << " over " << cases.size() << " checks ("
            << o.seeds << " seeds, eps " << fmt("%g", o.eps) << ")\n";
  return max_rel < o.tolerance ? kExitOk : kExitNumeric;
}

// ---- ablate ---------------------------------------------------------------

struct AblateOptions {
  std::string study;
  std::string data, galleries;
  std::size_t runs = 1;
  std::size_t clusters = 0;
  TrainOverrides overrides;
};

struct AblationConfig {
  std::string name;
  TrainConfig train;
};

std::vector<AblationConfig> ablation_configs(const std::string& study, const TrainConfig& base) {
  std::vector<AblationConfig> out;
  if (study == "K") {
    const std::set<std::size_t> ks = {0, 4, base.model.K, 16};
    for (std::size_t k : ks) {
      TrainConfig c = base;
      c.model.K = k;
      out.push_back({"K=" + std::to_string(k), c});
    }
  } else if (study == "J") {
    std::set<std::size_t> js = {0, 1, base.model.J, base.model.M};
    for (std::size_t j : js) {
      TrainConfig c = base;
      c.model.J = j;
      out.push_back({"J=" + std::to_string(j), c});
    }
  } else if (study == "components") {
    out.push_back({"full", base});
    TrainConfig no_tse = base;
    no_tse.model.J = 0;
    out.push_back({"w/o rare queries", no_tse});
    TrainConfig no_tcl = base;
    no_tcl.loss.alpha = 0.0;
    out.push_back({"w/o TCL", no_tcl});
    TrainConfig no_abs = base;
    no_abs.model.use_abstractor = false;
    out.push_back({"w/o Abstractor", no_abs});
  } else {
    throw ValidationError("unknown ablation study '" + study + "' (expected K, J or components)");
  }
  return out;
}

int cmd_ablate(Context& ctx, const AblateOptions& o) {
  const TrainConfig base = resolve_train_config(ctx, o.overrides);
  const auto configs = ablation_configs(o.study, base);
  const std::uint64_t seed = ctx.globals().seed;

  Dataset d;
  if (o.data.empty()) {
    SyntheticTaskConfig sc;
    sc.seed = seed;
    d = generate_synthetic_task(sc);
  } else {
    d = load_dataset(o.data);
  }
  GalleryBundle bundle;
  if (o.galleries.empty()) {
    GalleryBuildOptions go;
    go.clusters = o.clusters ? o.clusters : (d.findings.empty() ? 64 : d.findings.size());
    go.seed = seed;
    bundle = build_gallery_bundle(d.train.corpus, d.train.embeddings, go);
  } else {
    bundle = load_gallery_bundle(o.galleries);
  }
  if (o.runs == 0) throw ValidationError("--runs must be at least 1");

  // Every (config, run) pair is independent and carries its own seeds, so
  // they can run on any number of threads with identical results.
  struct Job {
    std::size_t config;
    std::size_t run;
    ExperimentConfig cfg;
    ExperimentResult result;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    for (std::size_t r = 0; r < o.runs; ++r) {
      ExperimentConfig ec;
      ec.train = configs[c].train;
      ec.train.seed = base.seed + r;
      ec.train.model.seed = base.model.seed + r;
      jobs.push_back({c, r, ec, {}});
    }
  }
  const std::size_t workers = std::max<std::size_t>(1, std::min(ctx.globals().threads, jobs.size()));
  std::vector<std::exception_ptr> failures(jobs.size());
  auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < jobs.size(); i += workers) {
      try {
        const std::string name = configs[jobs[i].config].name + " #" + std::to_string(jobs[i].run);
        jobs[i].result = run_experiment(name, d, bundle, jobs[i].cfg);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      ctx.log("running " + configs[jobs[i].config].name + " (run " + std::to_string(jobs[i].run) + ")");
      const std::string name = configs[jobs[i].config].name + " #" + std::to_string(jobs[i].run);
      jobs[i].result = run_experiment(name, d, bundle, jobs[i].cfg);
    }
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
    for (auto& f : failures)
      if (f) std::rethrow_exception(f);
  }

  std::vector<ExperimentResult> summary;
  json runs = json::array(), rows = json::array();
  for (std::size_t c = 0; c < configs.size(); ++c) {
    std::vector<ExperimentResult> group;
    for (const auto& j : jobs) {
      if (j.config != c) continue;
      group.push_back(j.result);
      json r = to_json(j.result);
      r.erase("seconds");  // keeps the JSON reproducible
      r["config"] = configs[c].name;
      r["seed"] = j.cfg.train.seed;
      runs.push_back(r);
    }
    summary.push_back(average_results(configs[c].name, group));
    json s = to_json(summary.back());
    s.erase("seconds");
    s["train_config"] = to_json(configs[c].train);
    rows.push_back(s);
  }
  const json result = {{"study", o.study}, {"runs_per_config", o.runs}, {"seed", seed}, {"summary", rows},
                       {"runs", runs}};
  const std::string table = format_table(summary);
  const fs::path dir = fs::path(ctx.globals().out_dir);
  write_json(dir / ("ablation_" + o.study + ".json"), result);
  write_text(dir / ("ablation_" + o.study + ".txt"), table);
  ctx.out() << table;
  return kExitOk;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Report generation with topic queries over retrieved sentence galleries", "teaser"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--threads", g.threads, "Worker threads for independent ablation runs")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "Only print results");
  app.add_option("--out-dir", g.out_dir, "Directory for outputs without an explicit path");

  SynthOptions synth;
  auto* s_synth = app.add_subcommand("synth-data", "Generate a synthetic long-tailed report dataset");
  s_synth->add_option("--config", synth.config, "Synthetic task config JSON");
  s_synth->add_option("--train", synth.n_train, "Override the number of training studies");
  s_synth->add_option("--val", synth.n_val, "Override the number of validation studies");
  s_synth->add_option("--test", synth.n_test, "Override the number of test studies");
  s_synth->add_option("--findings", synth.findings, "Override the number of findings");
  s_synth->add_option("--out", synth.out, "Output directory (default <out-dir>/data)");

  GalleryOptions gal;
  auto* s_gal = app.add_subcommand("build-gallery", "Cluster a sentence corpus and split it into common/rare galleries");
  s_gal->add_option("--corpus", gal.corpus, "Sentence corpus JSONL")->required();
  s_gal->add_option("--embeddings", gal.embeddings, "EMB1 matrix aligned with the corpus")->required();
  s_gal->add_option("--clusters", gal.clusters, "Number of k-means clusters")->check(CLI::PositiveNumber);
  s_gal->add_option("--rare-dist", gal.rare_dist, "Distance above which a sentence can be rare");
  s_gal->add_option("--rare-freq", gal.rare_freq, "Frequency below which a sentence can be rare");
  s_gal->add_option("--metric", gal.metric, "Distance to the nearest center: euclidean or cosine");
  s_gal->add_option("--n-init", gal.n_init, "k-means restarts")->check(CLI::PositiveNumber);
  s_gal->add_option("--max-iter", gal.max_iter, "k-means iteration cap")->check(CLI::PositiveNumber);
  s_gal->add_option("--labels", gal.labels, "Sentence label JSON to attach finding labels");
  s_gal->add_option("--out", gal.out, "Output directory (default <out-dir>/galleries)");

  TrainOptions tr;
  auto* s_train = app.add_subcommand("train", "Train the model and write a checkpoint");
  s_train->add_option("--data", tr.data, "Dataset directory")->required();
  s_train->add_option("--galleries", tr.galleries, "Gallery directory from build-gallery")->required();
  s_train->add_option("--out", tr.out, "Checkpoint directory (default <out-dir>/checkpoint)");
  add_train_overrides(s_train, tr.overrides);

  GenerateOptions gen;
  auto* s_gen = app.add_subcommand("generate", "Generate reports for a feature file");
  s_gen->add_option("--checkpoint", gen.checkpoint, "Checkpoint directory")->required();
  s_gen->add_option("--galleries", gen.galleries, "Gallery directory")->required();
  s_gen->add_option("--features", gen.features, "Visual feature manifest JSON")->required();
  s_gen->add_option("--labels", gen.labels, "Sentence label JSON, copied into entries");
  s_gen->add_option("--tau-c", gen.inference.tau_c, "Selection threshold for common queries");
  s_gen->add_option("--tau-r", gen.inference.tau_r, "Selection threshold for rare queries");
  s_gen->add_option("--dedup", gen.inference.dedup_threshold, "Cosine above which sentences are duplicates");
  s_gen->add_option("--out", gen.out, "Output JSONL (default <out-dir>/generated.jsonl)");

  EvalOptions ev;
  auto* s_eval = app.add_subcommand("eval", "Score generated reports against references");
  s_eval->add_option("--generated", ev.generated, "Generated reports JSONL")->required();
  s_eval->add_option("--references", ev.references, "Reference reports JSONL")->required();
  s_eval->add_option("--labels", ev.labels, "Sentence label JSON for clinical efficacy scores");
  s_eval->add_option("--out", ev.out, "Output JSON (default <out-dir>/metrics.json)");

  GradcheckOptions gc;
  auto* s_gc = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  s_gc->add_option("--seeds", gc.seeds, "Number of random seeds")->check(CLI::PositiveNumber);
  s_gc->add_option("--eps", gc.eps, "Finite difference step");
  s_gc->add_option("--tolerance", gc.tolerance, "Largest acceptable relative error");

  AblateOptions ab;
  auto* s_ab = app.add_subcommand("ablate", "Train and score a family of configurations");
  s_ab->add_option("--study", ab.study, "K, J or components")->required()->check(CLI::IsMember({"K", "J", "components"}));
  s_ab->add_option("--data", ab.data, "Dataset directory (default: synthetic data from --seed)");
  s_ab->add_option("--galleries", ab.galleries, "Gallery directory (default: built from the training split)");
  s_ab->add_option("--runs", ab.runs, "Seeds per configuration")->check(CLI::PositiveNumber);
  s_ab->add_option("--clusters", ab.clusters, "Clusters when building galleries (0: number of findings, else 64)");
  add_train_overrides(s_ab, ab.overrides);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  g.seed_given = app.count("--seed") > 0;

  Context ctx(g, out);
  try {
    if (*s_synth) return cmd_synth(ctx, synth);
    if (*s_gal) return cmd_build_gallery(ctx, gal);
    if (*s_train) return cmd_train(ctx, tr);
    if (*s_gen) return cmd_generate(ctx, gen, err);
    if (*s_eval) return cmd_eval(ctx, ev);
    if (*s_gc) return cmd_gradcheck(ctx, gc);
    if (*s_ab) return cmd_ablate(ctx, ab);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

} // namespace teaser::cli
