#include "teaser/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <cmath>
#include <numeric>
#include <set>

#include "teaser/errors.hpp"
#include "teaser/rng.hpp"

namespace teaser {

void SyntheticTaskConfig::validate() const {
  if (n_findings < 2) throw ValidationError("synthetic: n_findings must be >= 2");
  if (!(zipf_s > 0.0)) throw ValidationError("synthetic: zipf_s must be > 0");
  if (!(rare_fraction > 0.0 && rare_fraction < 1.0)) throw ValidationError("synthetic: rare_fraction must be in (0, 1)");
  if (sentences_per_finding < 1 || sentences_per_finding > 6)
    throw ValidationError("synthetic: sentences_per_finding must be in [1, 6]");
  if (patches_per_image < 1) throw ValidationError("synthetic: patches_per_image must be >= 1");
  if (!(noise_sigma >= 0.0)) throw ValidationError("synthetic: noise_sigma must be >= 0");
  if (n_train < 1) throw ValidationError("synthetic: n_train must be >= 1");
  if (dim < 1) throw ValidationError("synthetic: dim must be >= 1");
  if (min_findings < 1 || max_findings < min_findings || max_findings > n_findings)
    throw ValidationError("synthetic: need 1 <= min_findings <= max_findings <= n_findings");
  if (rare_max_count < 1 || rare_max_count >= common_min_count)
    throw ValidationError("synthetic: rare_max_count must be in [1, common_min_count)");
}

namespace {

const char* const kAdjectives[] = {"mild",  "small", "patchy", "focal",  "diffuse", "moderate",
                                   "subtle", "streaky", "nodular", "linear", "large",  "faint"};
const char* const kNouns[] = {"opacity",   "effusion",      "atelectasis",   "consolidation",
                              "edema",     "nodule",        "scarring",      "thickening",
                              "calcification", "pneumothorax", "granuloma", "fracture"};
const char* const kRegions[] = {"left base",  "right base",        "left apex", "right apex",
                                "lingula",    "right middle lobe", "left hilum", "right hilum",
                                "mediastinum", "retrocardiac region"};
const char* const kTemplates[] = {
    "there is {a} {n} in the {r}.",     "{a} {n} is seen in the {r}.",  "the {r} shows {a} {n}.",
    "findings suggest {a} {n} at the {r}.", "{a} {n} noted at the {r}.", "unchanged {a} {n} in the {r}.",
};

std::string fill(std::string tpl, const std::string& a, const std::string& n, const std::string& r) {
  auto sub = [&](const std::string& key, const std::string& value) {
    const auto at = tpl.find(key);
    if (at != std::string::npos) tpl.replace(at, key.size(), value);
  };
  sub("{a}", a);
  sub("{n}", n);
  sub("{r}", r);
  return tpl;
}

std::vector<float> unit_with_jitter(const std::vector<double>& base, double jitter, Rng& rng) {
  const double per_dim = jitter / std::sqrt(static_cast<double>(base.size()));
  std::vector<double> v(base.size());
  double sq = 0.0;
  for (std::size_t j = 0; j < base.size(); ++j) {
    v[j] = base[j] + per_dim * rng.normal();
    sq += v[j] * v[j];
  }
  const double inv = 1.0 / std::sqrt(sq);
  std::vector<float> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = static_cast<float>(v[j] * inv);
  return out;
}

struct Universe {
  std::vector<std::vector<double>> signatures;
  std::vector<std::string> finding_names;
  std::vector<bool> rare;
  std::vector<std::size_t> report_rank;  // ordering of findings inside a report
  // sentence s belongs to finding s / spf
  std::vector<std::string> texts;
  std::vector<std::vector<float>> embeddings;
  std::vector<double> zipf;
};

Universe make_universe(const SyntheticTaskConfig& cfg, Rng& rng) {
  Universe u;
  const std::size_t nf = cfg.n_findings, spf = cfg.sentences_per_finding;
  for (std::size_t f = 0; f < nf; ++f) {
    std::vector<double> s(cfg.dim);
    double sq = 0.0;
    for (auto& v : s) {
      v = rng.normal();
      sq += v * v;
    }
    for (auto& v : s) v /= std::sqrt(sq);
    u.signatures.push_back(std::move(s));
  }

  // Distinct (adjective, noun, region) triples.
  std::vector<std::size_t> combos(std::size(kAdjectives) * std::size(kNouns) * std::size(kRegions));
  if (nf > combos.size()) throw ValidationError("synthetic: at most " + std::to_string(combos.size()) + " findings");
  std::iota(combos.begin(), combos.end(), 0);
  for (std::size_t i = combos.size(); i > 1; --i) std::swap(combos[i - 1], combos[rng.below(i)]);
  std::vector<std::array<std::string, 3>> parts;
  for (std::size_t f = 0; f < nf; ++f) {
    const std::size_t c = combos[f];
    const std::size_t a = c % std::size(kAdjectives);
    const std::size_t n = (c / std::size(kAdjectives)) % std::size(kNouns);
    const std::size_t r = c / (std::size(kAdjectives) * std::size(kNouns));
    parts.push_back({kAdjectives[a], kNouns[n], kRegions[r]});
    u.finding_names.push_back(std::string(kAdjectives[a]) + " " + kNouns[n] + " (" + kRegions[r] + ")");
  }

  const std::size_t n_rare = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.rare_fraction * nf)));
  if (n_rare >= nf) throw ValidationError("synthetic: rare_fraction leaves no common findings");
  u.rare.assign(nf, false);
  for (std::size_t f = nf - n_rare; f < nf; ++f) u.rare[f] = true;

  u.report_rank.resize(nf);
  std::iota(u.report_rank.begin(), u.report_rank.end(), 0);
  for (std::size_t i = nf; i > 1; --i) std::swap(u.report_rank[i - 1], u.report_rank[rng.below(i)]);

  for (std::size_t f = 0; f < nf; ++f) {
    u.zipf.push_back(1.0 / std::pow(static_cast<double>(f + 1), cfg.zipf_s));
    std::vector<std::size_t> tpl(std::size(kTemplates));
    std::iota(tpl.begin(), tpl.end(), 0);
    for (std::size_t i = tpl.size(); i > 1; --i) std::swap(tpl[i - 1], tpl[rng.below(i)]);
    for (std::size_t v = 0; v < spf; ++v) {
      u.texts.push_back(fill(kTemplates[tpl[v]], parts[f][0], parts[f][1], parts[f][2]));
      if (!u.rare[f]) {
        u.embeddings.push_back(unit_with_jitter(u.signatures[f], cfg.common_jitter, rng));
        continue;
      }
      // Redraw rare paraphrases that happen to point at a common finding.
      std::vector<float> e;
      for (int attempt = 0;; ++attempt) {
        e = unit_with_jitter(u.signatures[f], cfg.rare_jitter, rng);
        double worst = -1.0;
        for (std::size_t g = 0; g < nf; ++g) {
          if (u.rare[g]) continue;
          double dot = 0.0;
          for (std::size_t j = 0; j < cfg.dim; ++j) dot += e[j] * u.signatures[g][j];
          worst = std::max(worst, dot);
        }
        if (worst <= cfg.rare_max_common_cosine) break;
        if (attempt == 10000) throw ValidationError("synthetic: cannot place rare paraphrases away from common findings; raise dim or rare_max_common_cosine");
      }
      u.embeddings.push_back(std::move(e));
    }
  }
  return u;
}

// Findings drawn without replacement, Zipf-weighted.
std::vector<std::size_t> draw_findings(const SyntheticTaskConfig& cfg, const Universe& u, Rng& rng) {
  const std::size_t n = cfg.min_findings + rng.below(cfg.max_findings - cfg.min_findings + 1);
  std::vector<double> w = u.zipf;
  std::vector<std::size_t> out;
  std::size_t rare = 0;
  while (out.size() < n) {
    const std::size_t f = rng.weighted(w);
    w[f] = 0.0;
    if (u.rare[f] && rare >= cfg.max_rare_per_study) continue;
    rare += u.rare[f] ? 1 : 0;
    out.push_back(f);
  }
  return out;
}

struct DraftStudy {
  std::vector<std::size_t> sentences;  // universe sentence ids
};

bool has_finding(const DraftStudy& s, std::size_t f, std::size_t spf) {
  return std::any_of(s.sentences.begin(), s.sentences.end(), [&](std::size_t x) { return x / spf == f; });
}

EmbeddingMatrix make_visual(const SyntheticTaskConfig& cfg, const Universe& u, const DraftStudy& s, Rng& rng) {
  EmbeddingMatrix m(cfg.patches_per_image, cfg.dim);
  for (std::size_t r = 0; r < cfg.patches_per_image; ++r) {
    const std::size_t f = s.sentences.empty() ? rng.below(cfg.n_findings)
                                              : s.sentences[rng.below(s.sentences.size())] / cfg.sentences_per_finding;
    for (std::size_t j = 0; j < cfg.dim; ++j)
      m(r, j) = static_cast<float>(u.signatures[f][j] + cfg.noise_sigma * rng.normal());
  }
  return m;
}

Split materialize(const SyntheticTaskConfig& cfg, const Universe& u, std::vector<DraftStudy> drafts,
                  const std::string& prefix, Rng& rng) {
  const std::size_t spf = cfg.sentences_per_finding;
  std::vector<SentenceRecord> records;
  EmbeddingMatrix emb(0, cfg.dim);
  std::map<std::string, EmbeddingMatrix> visual;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    auto& d = drafts[i];
    std::sort(d.sentences.begin(), d.sentences.end(),
              [&](std::size_t a, std::size_t b) { return u.report_rank[a / spf] < u.report_rank[b / spf]; });
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%05zu", prefix.c_str(), i);
    const std::string id = buf;
    for (std::size_t k = 0; k < d.sentences.size(); ++k) {
      records.push_back({static_cast<std::int64_t>(records.size()), u.texts[d.sentences[k]], id,
                         static_cast<std::int64_t>(k)});
      emb.append_row(u.embeddings[d.sentences[k]]);
    }
    visual[id] = make_visual(cfg, u, d, rng);
    order.push_back(id);
  }
  Split split;
  split.corpus = SentenceCorpus(std::move(records));
  split.embeddings = std::move(emb);
  auto studies = assemble_studies(split.corpus, visual);
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  std::stable_sort(studies.begin(), studies.end(), [&](const Study& a, const Study& b) { return pos[a.id] < pos[b.id]; });
  split.studies = std::move(studies);
  return split;
}

} // namespace

Dataset generate_synthetic_task(const SyntheticTaskConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Universe u = make_universe(cfg, rng);
  const std::size_t spf = cfg.sentences_per_finding;
  const std::size_t n_sentences = u.texts.size();

  // Training studies: rare sentences capped, common sentences topped up.
  std::vector<DraftStudy> train(cfg.n_train);
  std::vector<std::int64_t> count(n_sentences, 0);
  for (auto& s : train) {
    for (std::size_t f : draw_findings(cfg, u, rng)) {
      const std::size_t sid = f * spf + rng.below(spf);
      if (u.rare[f] && count[sid] >= cfg.rare_max_count) continue;
      ++count[sid];
      s.sentences.push_back(sid);
    }
  }
  for (std::size_t sid = 0; sid < n_sentences; ++sid) {
    const std::size_t f = sid / spf;
    if (u.rare[f]) continue;
    while (count[sid] < cfg.common_min_count) {
      std::vector<std::size_t> open;
      for (std::size_t i = 0; i < train.size(); ++i) {
        if (train[i].sentences.size() < cfg.max_findings && !has_finding(train[i], f, spf)) open.push_back(i);
      }
      if (open.empty()) {
        throw ValidationError("synthetic: n_train=" + std::to_string(cfg.n_train) +
                              " is too small to give every common sentence " + std::to_string(cfg.common_min_count) +
                              " occurrences");
      }
      train[open[rng.below(open.size())]].sentences.push_back(sid);
      ++count[sid];
    }
  }

  auto natural = [&](std::size_t n) {
    std::vector<DraftStudy> out(n);
    for (auto& s : out)
      for (std::size_t f : draw_findings(cfg, u, rng)) s.sentences.push_back(f * spf + rng.below(spf));
    return out;
  };
  std::vector<DraftStudy> val = natural(cfg.n_val);
  std::vector<DraftStudy> test = natural(cfg.n_test);

  Dataset d;
  d.train = materialize(cfg, u, std::move(train), "train", rng);
  d.val = materialize(cfg, u, std::move(val), "val", rng);
  d.test = materialize(cfg, u, std::move(test), "test", rng);
  d.findings = u.finding_names;
  for (std::size_t sid = 0; sid < n_sentences; ++sid) {
    const std::size_t f = sid / spf;
    d.sentence_labels[normalize_text(u.texts[sid])] = {u.finding_names[f]};
    if (u.rare[f]) d.rare_texts.push_back(normalize_text(u.texts[sid]));
  }
  for (std::size_t f = 0; f < cfg.n_findings; ++f)
    if (u.rare[f]) d.rare_findings.push_back(u.finding_names[f]);
  return d;
}

} // namespace teaser
