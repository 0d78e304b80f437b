// Acceptance run: one PASS/FAIL line per criterion. Exits nonzero when any
// criterion fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "nlg_fixtures.hpp"
#include "oracles.hpp"
#include "teaser/experiment.hpp"
#include "teaser/gradcheck.hpp"
#include "teaser/matching.hpp"
#include "teaser/metrics.hpp"
#include "teaser/synthetic.hpp"
#include "test_util.hpp"

using namespace teaser;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Verdict& v, double secs) {
  std::printf("criterion %2d %s  %s: %s [%.1f s]\n", id, v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), secs);
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

void progress(const std::string& msg) {
  std::fprintf(stderr, "  .. %s\n", msg.c_str());
  std::fflush(stderr);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---- 1 ----------------------------------------------------------------------

Verdict gradients() {
  const auto start = Clock::now();
  const auto cases = run_gradcheck_suite(10, 1e-5);
  const double secs = seconds_since(start);
  double worst = 0.0;
  std::string worst_name;
  std::set<std::string> failing;
  for (const auto& c : cases) {
    if (c.report.max_relative_error > worst) {
      worst = c.report.max_relative_error;
      worst_name = c.name + " seed " + std::to_string(c.seed);
    }
    if (c.report.max_relative_error >= 1e-4) failing.insert(c.name + "/" + std::to_string(c.seed));
  }
  std::string detail = "max relative error " + fmt("%.3g", worst) + " (" + worst_name + ") over " +
                       std::to_string(cases.size()) + " checks in " + fmt("%.1f", secs) + " s";
  if (!failing.empty()) {
    detail += "; above 1e-4:";
    for (const auto& f : failing) detail += " " + f;
  }
  return {worst < 1e-4 && secs < 60.0, detail};
}

// ---- 2 ----------------------------------------------------------------------

Verdict matching() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  int wrong = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 6, m = 1 + rng() % 8;
    Tensor c(n, m);
    for (auto& v : c.data()) v = trial % 2 ? static_cast<double>(rng() % 4) : u(rng);
    const Assignment a = hungarian(c);
    const auto best = oracle::brute_force_assignment(c, 1e-12);
    if (std::abs(a.total_cost - best.cost) > 1e-9 * std::max(1.0, best.cost)) ++wrong;
  }
  const double secs = seconds_since(start);
  return {wrong == 0 && secs < 10.0,
          std::to_string(200 - wrong) + "/200 optimal costs match brute force in " + fmt("%.2f", secs) + " s"};
}

// ---- 3 ----------------------------------------------------------------------

Verdict retrieval() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  int wrong = 0;
  std::size_t largest = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = trial < 10 ? 10000 : 1 + rng() % 10000, dim = 1 + rng() % 32;
    largest = std::max(largest, rows);
    Gallery gal;
    gal.embeddings = EmbeddingMatrix(rows, dim);
    for (auto& v : gal.embeddings.data()) v = static_cast<float>(g(rng));
    gal.embeddings = normalize_rows(gal.embeddings);
    for (std::size_t i = 0; i < rows; ++i) {
      gal.sentence_ids.push_back(static_cast<std::int64_t>(i));
      gal.member_ids.push_back({static_cast<std::int64_t>(i)});
      gal.texts.push_back(std::to_string(i));
    }
    std::vector<double> q(dim);
    for (auto& v : q) v = g(rng);
    double norm = 0;
    for (double v : q) norm += v * v;
    norm = std::sqrt(norm);
    std::size_t best = 0;
    double best_score = -2.0;
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < dim; ++j) s += q[j] / norm * gal.embeddings(i, j);
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    if (retrieve_top1(gal, q).index != best) ++wrong;
  }
  return {wrong == 0, std::to_string(100 - wrong) + "/100 galleries agree with an exhaustive scan (largest " +
                          std::to_string(largest) + " rows)"};
}

// ---- shared setup -----------------------------------------------------------

struct SeedData {
  std::uint64_t seed = 0;
  Dataset data;
  GalleryBundle bundle;
};

SeedData make_seed_data(std::uint64_t seed) {
  SyntheticTaskConfig tc;
  tc.seed = seed;
  SeedData s;
  s.seed = seed;
  s.data = generate_synthetic_task(tc);
  GalleryBuildOptions g;
  g.clusters = tc.n_findings;
  g.seed = seed;
  s.bundle = build_gallery_bundle(s.data.train.corpus, s.data.train.embeddings, g);
  return s;
}

// Recipe shared by the ablation criteria.
ExperimentConfig recipe(std::uint64_t seed) {
  ExperimentConfig c;
  c.train.epochs = 40;
  c.train.lr = 1e-3;
  c.train.batch_size = 8;
  c.train.seed = seed;
  c.train.model.seed = seed;
  c.gallery.clusters = SyntheticTaskConfig{}.n_findings;
  c.gallery.seed = seed;
  return c;
}

// ---- 4 ----------------------------------------------------------------------

Verdict k_zero(const SeedData& s) {
  ExperimentConfig c = recipe(s.seed);
  c.train.model.K = 0;
  c.train.epochs = 3;
  const auto rarity = rarity_from_bundle(s.bundle);
  const TrainResult tr = train(c.train, make_examples(s.data.train, c.train.model, rarity), {});
  const GallerySet gs = galleries_for(s.bundle, c.train.model, s.data.sentence_labels);
  const std::vector<Study> studies(s.data.test.studies.begin(), s.data.test.studies.begin() + 20);
  auto same = [](const std::vector<GeneratedReport>& reports) {
    for (const auto& r : reports) {
      if (r.entries.size() != reports[0].entries.size()) return false;
      for (std::size_t k = 0; k < r.entries.size(); ++k)
        if (r.entries[k].text != reports[0].entries[k].text ||
            r.entries[k].selection_prob != reports[0].entries[k].selection_prob)
          return false;
    }
    return true;
  };
  const auto reports = generate_reports(tr.checkpoint, studies, gs, c.inference);
  // Every query selected, so the full draft is compared.
  InferenceConfig all = c.inference;
  all.tau_c = all.tau_r = 0.0;
  const auto full = generate_reports(tr.checkpoint, studies, gs, all);
  const bool ok = same(reports) && same(full);
  return {ok, std::string(ok ? "20/20" : "not all") + " reports identical (" +
                  std::to_string(reports[0].entries.size()) + " sentences at default thresholds, " +
                  std::to_string(full[0].entries.size()) + " with every query selected)"};
}

// ---- 5, 6, 7 ----------------------------------------------------------------

struct SeedRuns {
  ExperimentResult base, no_rare, no_tcl, no_abstractor;
};

ExperimentResult run_named(const std::string& name, const SeedData& s, const ExperimentConfig& c) {
  progress(name + " seed " + std::to_string(s.seed));
  return run_experiment(name, s.data, s.bundle, c);
}

std::string per_seed(const std::vector<SeedRuns>& runs, const std::function<double(const SeedRuns&)>& f,
                     const char* spec = "%.3f") {
  std::string out;
  for (std::size_t i = 0; i < runs.size(); ++i) out += (i ? "/" : "") + fmt(spec, f(runs[i]));
  return out;
}

Verdict rare_queries(const std::vector<SeedRuns>& runs) {
  double r3 = 0, r0 = 0, f3 = 0, f0 = 0, secs = 0;
  for (const auto& r : runs) {
    r3 += r.base.rare_recall / runs.size();
    r0 += r.no_rare.rare_recall / runs.size();
    f3 += r.base.ce.f1 / runs.size();
    f0 += r.no_rare.ce.f1 / runs.size();
    secs += r.base.seconds + r.no_rare.seconds;
  }
  const bool ok = r3 > 1.2 * r0 && f3 >= f0 && secs < 600.0;
  return {ok, "rare recall J=3 " + fmt("%.3f", r3) + " vs J=0 " + fmt("%.3f", r0) + " (ratio " +
                  fmt("%.2f", r0 > 0 ? r3 / r0 : INFINITY) + "), F1 " + fmt("%.3f", f3) + " vs " + fmt("%.3f", f0) +
                  ", " + fmt("%.0f", secs) + " s"};
}

Verdict topic_separation(const std::vector<SeedRuns>& runs) {
  double diff = 0;
  bool each_lower = true;
  for (const auto& r : runs) {
    diff += (r.no_tcl.topic_cosine - r.base.topic_cosine) / runs.size();
    each_lower = each_lower && r.base.topic_cosine < r.no_tcl.topic_cosine;
  }
  return {diff >= 0.05 && each_lower,
          "topic cosine with TCL " + per_seed(runs, [](const SeedRuns& r) { return r.base.topic_cosine; }) +
              " vs without " + per_seed(runs, [](const SeedRuns& r) { return r.no_tcl.topic_cosine; }) +
              ", mean reduction " + fmt("%.3f", diff)};
}

Verdict abstractor(const std::vector<SeedRuns>& runs) {
  double val_abs = 0, val_raw = 0;
  int f1_wins = 0;
  for (const auto& r : runs) {
    val_abs += r.base.final_val.l_total / runs.size();
    val_raw += r.no_abstractor.final_val.l_total / runs.size();
    f1_wins += r.base.ce.f1 >= r.no_abstractor.ce.f1;
  }
  return {val_abs <= val_raw && f1_wins >= 2,
          "val l_total " + fmt("%.3f", val_abs) + " vs raw-V " + fmt("%.3f", val_raw) + ", F1 " +
              per_seed(runs, [](const SeedRuns& r) { return r.base.ce.f1; }) + " vs " +
              per_seed(runs, [](const SeedRuns& r) { return r.no_abstractor.ce.f1; }) + " (" +
              std::to_string(f1_wins) + "/3 seeds no worse)"};
}

// ---- 8 ----------------------------------------------------------------------

Verdict metrics() {
  using namespace nlg_fixtures;
  double worst = 0;
  for (const auto& f : kSentenceBleu) {
    std::vector<TokenSeq> refs;
    for (const auto& r : f.references) refs.push_back(tokenize(r));
    for (int n = 1; n <= 4; ++n) worst = std::max(worst, std::abs(bleu_n(tokenize(f.candidate), refs, n) - f.expected[n - 1]));
  }
  std::vector<TokenSeq> cands;
  std::vector<std::vector<TokenSeq>> crefs;
  for (const auto& [c, r] : kCorpus) {
    cands.push_back(tokenize(c));
    crefs.push_back({tokenize(r)});
  }
  for (int n = 1; n <= 4; ++n) worst = std::max(worst, std::abs(corpus_bleu(cands, crefs, n) - kCorpusBleu[n - 1]));
  for (const auto& f : kRouge)
    worst = std::max(worst, std::abs(rouge_l(tokenize(f.candidate), tokenize(f.reference)) - f.expected));

  std::mt19937_64 rng(8);
  int exact = 0;
  for (int fixture = 0; fixture < 20; ++fixture) {
    std::vector<FindingSet> pred, truth;
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t s = 0, n = 1 + rng() % 12; s < n; ++s) {
      const std::uint32_t p = rng() & 0xFFF, t = rng() & 0xFFF;
      tp += std::popcount(p & t);
      fp += std::popcount(p & ~t);
      fn += std::popcount(~p & t & 0xFFFu);
      FindingSet ps, ts;
      for (int b = 0; b < 12; ++b) {
        if (p >> b & 1) ps.push_back("finding " + std::to_string(b));
        if (t >> b & 1) ts.push_back("finding " + std::to_string(b));
      }
      pred.push_back(ps);
      truth.push_back(ts);
    }
    const CeScores s = ce_scores(pred, truth);
    const double P = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double R = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double F = P + R > 0 ? 2 * P * R / (P + R) : 0.0;
    exact += s.tp == tp && s.fp == fp && s.fn == fn && s.precision == P && s.recall == R && s.f1 == F;
  }
  return {worst < 1e-9 && exact == 20,
          "largest BLEU/ROUGE-L deviation " + fmt("%.2g", worst) + ", CE exact on " + std::to_string(exact) + "/20"};
}

// ---- 9 ----------------------------------------------------------------------

Verdict rarity(const std::vector<SeedData>& seeds) {
  bool ok = true;
  std::string detail;
  for (const auto& s : seeds) {
    const std::set<std::string> designated(s.data.rare_texts.begin(), s.data.rare_texts.end());
    std::set<std::string> flagged;
    for (const auto& t : s.bundle.rare.texts) flagged.insert(normalize_text(t));
    std::size_t rare_hit = 0, common_total = 0, common_flagged = 0;
    for (const auto& [text, n] : s.bundle.frequencies.counts) {
      if (designated.count(text)) {
        rare_hit += flagged.count(text);
      } else {
        ++common_total;
        common_flagged += flagged.count(text);
      }
    }
    const double rec = static_cast<double>(rare_hit) / static_cast<double>(designated.size());
    const double fpr = static_cast<double>(common_flagged) / static_cast<double>(common_total);
    ok = ok && rec >= 0.95 && fpr <= 0.05;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(s.seed) + ": rare recovered " +
              std::to_string(rare_hit) + "/" + std::to_string(designated.size()) + ", common flagged " +
              std::to_string(common_flagged) + "/" + std::to_string(common_total);
  }
  return {ok, detail};
}

// ---- 10 ---------------------------------------------------------------------

Verdict reproducibility(const SeedData& s, Clock::time_point suite_start) {
  TempDir dir("acceptance_repro");
  ExperimentConfig c = recipe(s.seed);
  c.train.epochs = 3;
  const auto examples = make_examples(s.data.train, c.train.model, rarity_from_bundle(s.bundle));
  save_checkpoint(train(c.train, examples, {}).checkpoint, dir / "a");
  save_checkpoint(train(c.train, examples, {}).checkpoint, dir / "b");
  const bool same = same_tree(dir / "a", dir / "b");
  const double total = seconds_since(suite_start);
  return {same && total < 900.0, std::string(same ? "checkpoints byte-identical" : "checkpoints differ") +
                                     ", acceptance run so far " + fmt("%.0f", total) + " s"};
}

} // namespace

int main() {
  const auto suite_start = Clock::now();
  auto timed = [](int id, const std::string& name, const std::function<Verdict()>& f) {
    const auto t = Clock::now();
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, v, seconds_since(t));
  };

  timed(1, "gradient check", gradients);
  timed(2, "hungarian vs brute force", matching);
  timed(3, "top-1 retrieval vs exhaustive scan", retrieval);

  std::vector<SeedData> seeds;
  for (std::uint64_t s = 0; s < 3; ++s) seeds.push_back(make_seed_data(s));

  timed(4, "K=0 template reports", [&] { return k_zero(seeds[0]); });

  std::vector<SeedRuns> runs;
  const auto ablation_start = Clock::now();
  for (const auto& s : seeds) {
    SeedRuns r;
    const ExperimentConfig base = recipe(s.seed);
    r.base = run_named("base", s, base);
    ExperimentConfig c = base;
    c.train.model.J = 0;
    r.no_rare = run_named("J=0", s, c);
    c = base;
    c.train.loss.alpha = 0.0;
    r.no_tcl = run_named("alpha=0", s, c);
    c = base;
    c.train.model.use_abstractor = false;
    r.no_abstractor = run_named("raw V", s, c);
    std::vector<ExperimentResult> table = {r.base, r.no_rare, r.no_tcl, r.no_abstractor};
    std::fprintf(stderr, "%s", format_table(table).c_str());
    runs.push_back(r);
  }
  const double ablation_secs = seconds_since(ablation_start);
  report(5, "rare-query ablation trend", rare_queries(runs), ablation_secs);
  report(6, "topic separation from TCL", topic_separation(runs), 0.0);
  report(7, "abstractor vs raw features", abstractor(runs), 0.0);

  timed(8, "metric fixtures", metrics);
  timed(9, "rarity rule conformance", [&] { return rarity(seeds); });
  timed(10, "reproducibility and budget", [&] { return reproducibility(seeds[0], suite_start); });

  std::printf("%d of 10 criteria failed, %.0f s total\n", failures, seconds_since(suite_start));
  return failures == 0 ? 0 : 1;
}
