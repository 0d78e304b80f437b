#include "teaser/gallery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "binary_io.hpp"
#include "json.hpp"
#include "teaser/errors.hpp"
#include "teaser/rng.hpp"

namespace teaser {

using nlohmann::json;

const char* to_string(Rarity r) { return r == Rarity::Rare ? "rare" : "common"; }

Rarity rarity_from_string(const std::string& s) {
  if (s == "common") return Rarity::Common;
  if (s == "rare") return Rarity::Rare;
  throw ParseError("unknown rarity tag \"" + s + "\"");
}

const char* to_string(DistanceMetric m) { return m == DistanceMetric::Cosine ? "cosine" : "euclidean"; }

DistanceMetric distance_metric_from_string(const std::string& s) {
  if (s == "euclidean") return DistanceMetric::Euclidean;
  if (s == "cosine") return DistanceMetric::Cosine;
  throw ParseError("unknown distance metric \"" + s + "\"");
}

namespace {

using Centers = std::vector<std::vector<double>>;

double sq_dist(std::span<const float> x, const std::vector<double>& c) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = x[j] - c[j];
    s += d * d;
  }
  return s;
}

std::vector<double> to_double(std::span<const float> x) { return {x.begin(), x.end()}; }

// Greedy k-means++: each new center is the best of several D^2-sampled
// candidates, judged by the resulting total potential.
Centers seed_centers(const EmbeddingMatrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  Centers centers;
  centers.push_back(to_double(x.row(rng.below(n))));
  std::vector<double> closest(n);
  for (std::size_t i = 0; i < n; ++i) closest[i] = sq_dist(x.row(i), centers[0]);
  std::vector<double> candidate_closest(n), best_closest(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (double d : closest) total += d;
    std::size_t best_index = 0;
    double best_potential = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t cand = total > 0.0 ? rng.weighted(closest) : rng.below(n);
      const auto c = to_double(x.row(cand));
      double potential = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        candidate_closest[i] = std::min(closest[i], sq_dist(x.row(i), c));
        potential += candidate_closest[i];
      }
      if (potential < best_potential) {
        best_potential = potential;
        best_index = cand;
        best_closest.swap(candidate_closest);
      }
    }
    centers.push_back(to_double(x.row(best_index)));
    closest.swap(best_closest);
  }
  return centers;
}

struct LloydRun {
  Centers centers;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> history;
};

LloydRun lloyd(const EmbeddingMatrix& x, Centers centers, std::size_t max_iter) {
  const std::size_t n = x.rows(), d = x.cols(), k = centers.size();
  std::vector<std::size_t> assign(n, k);
  LloydRun run;
  for (std::size_t iter = 0; iter < std::max<std::size_t>(1, max_iter); ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = sq_dist(x.row(i), centers[c]);
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      changed = changed || assign[i] != best;
      assign[i] = best;
      inertia += best_d;
    }
    run.history.push_back(inertia);
    run.iterations = iter + 1;
    if (!changed) break;
    // Spherical update: the unit vector along the member mean minimizes the
    // squared distance to unit-norm members. Empty clusters keep their center.
    Centers sums(k, std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      auto row = x.row(i);
      for (std::size_t j = 0; j < d; ++j) sums[assign[i]][j] += row[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      double norm = 0.0;
      for (double v : sums[c]) norm += v * v;
      norm = std::sqrt(norm);
      if (norm <= 1e-12) continue;
      for (std::size_t j = 0; j < d; ++j) centers[c][j] = sums[c][j] / norm;
    }
  }
  run.centers = std::move(centers);
  run.inertia = run.history.back();
  return run;
}

} // namespace

ClusterModel kmeans_cluster(const EmbeddingMatrix& embeddings, std::size_t k, std::uint64_t seed,
                            std::size_t max_iter, std::size_t n_init) {
  if (k == 0) throw ValidationError("kmeans: k must be >= 1");
  if (k > embeddings.rows()) {
    throw ValidationError("kmeans: k=" + std::to_string(k) + " exceeds row count " + std::to_string(embeddings.rows()));
  }
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    double sq = 0.0;
    for (float v : embeddings.row(i)) sq += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-3) {
      throw ValidationError("kmeans: row " + std::to_string(i) + " is not unit-normalized");
    }
  }
  Rng rng(seed);
  LloydRun best;
  bool have = false;
  for (std::size_t run = 0; run < std::max<std::size_t>(1, n_init); ++run) {
    LloydRun r = lloyd(embeddings, seed_centers(embeddings, k, rng), max_iter);
    if (!have || r.inertia < best.inertia) {
      best = std::move(r);
      have = true;
    }
  }
  ClusterModel model;
  model.k = k;
  model.seed = seed;
  model.iterations = best.iterations;
  model.inertia_history = best.history;
  model.centers = EmbeddingMatrix(k, embeddings.cols());
  for (std::size_t c = 0; c < k; ++c) {
    double norm = 0.0;
    for (double v : best.centers[c]) norm += v * v;
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < embeddings.cols(); ++j)
      model.centers(c, j) = static_cast<float>(best.centers[c][j] / norm);
  }
  // Inertia against the stored float32 centers, so it can be recomputed.
  double inertia = 0.0;
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < embeddings.cols(); ++j) {
        const double d = static_cast<double>(embeddings(i, j)) - model.centers(c, j);
        s += d * d;
      }
      best_d = std::min(best_d, s);
    }
    inertia += best_d;
  }
  model.inertia = inertia;
  return model;
}

double min_center_distance(std::span<const float> unit_embedding, const ClusterModel& clusters,
                           DistanceMetric metric) {
  if (unit_embedding.size() != clusters.centers.cols()) throw ShapeError("min_center_distance: dimension mismatch");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < clusters.centers.rows(); ++c) {
    auto center = clusters.centers.row(c);
    double d;
    if (metric == DistanceMetric::Euclidean) {
      double s = 0.0;
      for (std::size_t j = 0; j < center.size(); ++j) {
        const double diff = static_cast<double>(unit_embedding[j]) - center[j];
        s += diff * diff;
      }
      d = std::sqrt(s);
    } else {
      double dot = 0.0;
      for (std::size_t j = 0; j < center.size(); ++j) dot += static_cast<double>(unit_embedding[j]) * center[j];
      d = 1.0 - dot;
    }
    best = std::min(best, d);
  }
  return best;
}

Rarity rarity_rule(double min_distance, std::int64_t frequency, const RarityCriteria& criteria) {
  return (min_distance > criteria.dist_threshold && frequency < criteria.freq_threshold) ? Rarity::Rare
                                                                                          : Rarity::Common;
}

std::size_t RarityLabels::rare_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Rarity::Rare));
}

RarityLabels classify_rarity(const SentenceCorpus& corpus, const FrequencyTable& freqs, const ClusterModel& clusters,
                             const EmbeddingMatrix& embeddings, const RarityCriteria& criteria) {
  if (embeddings.rows() != corpus.size()) {
    throw ValidationError("classify_rarity: " + std::to_string(embeddings.rows()) + " embedding rows for " +
                          std::to_string(corpus.size()) + " corpus records");
  }
  const EmbeddingMatrix unit = normalize_rows(embeddings);
  std::map<std::string, std::pair<Rarity, double>> decided;
  RarityLabels out;
  out.criteria = criteria;
  out.labels.resize(corpus.size());
  out.min_distance.resize(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string key = normalize_text(corpus[i].text);
    auto it = decided.find(key);
    if (it == decided.end()) {
      const double dist = min_center_distance(unit.row(i), clusters, criteria.metric);
      it = decided.emplace(key, std::pair{rarity_rule(dist, freqs.count_of(key), criteria), dist}).first;
    }
    out.labels[i] = it->second.first;
    out.min_distance[i] = it->second.second;
  }
  return out;
}

std::pair<Gallery, Gallery> build_galleries(const SentenceCorpus& corpus, const EmbeddingMatrix& embeddings,
                                            const RarityLabels& rarity) {
  if (embeddings.rows() != corpus.size() || rarity.labels.size() != corpus.size()) {
    throw ValidationError("build_galleries: corpus, embeddings and rarity labels are not aligned");
  }
  const EmbeddingMatrix unit = normalize_rows(embeddings);
  Gallery common, rare;
  common.rarity = Rarity::Common;
  rare.rarity = Rarity::Rare;
  common.embeddings = EmbeddingMatrix(0, embeddings.cols());
  rare.embeddings = EmbeddingMatrix(0, embeddings.cols());

  // Representative record per normalized text: the lowest id.
  std::map<std::string, std::size_t> representative;
  std::map<std::string, std::vector<std::int64_t>> members;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string key = normalize_text(corpus[i].text);
    auto [it, inserted] = representative.emplace(key, i);
    if (inserted) {
      order.push_back(key);
    } else if (corpus[i].id < corpus[it->second].id) {
      it->second = i;
    }
    members[key].push_back(corpus[i].id);
  }
  std::sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return corpus[representative[a]].id < corpus[representative[b]].id;
  });
  for (const auto& key : order) {
    const std::size_t rep = representative[key];
    Gallery& g = rarity.labels[rep] == Rarity::Rare ? rare : common;
    auto ids = members[key];
    std::sort(ids.begin(), ids.end());
    g.sentence_ids.push_back(corpus[rep].id);
    g.member_ids.push_back(std::move(ids));
    g.texts.push_back(corpus[rep].text);
    g.embeddings.append_row(unit.row(rep));
  }
  if (common.empty()) throw ValidationError("build_galleries: no common sentences; common retrieval would be impossible");
  return {std::move(common), std::move(rare)};
}

void attach_finding_labels(Gallery& gallery, const std::map<std::string, std::vector<std::string>>& labels) {
  gallery.finding_labels.clear();
  for (const auto& text : gallery.texts) {
    auto it = labels.find(normalize_text(text));
    gallery.finding_labels.push_back(it == labels.end() ? std::vector<std::string>{} : it->second);
  }
}

Gallery merge_galleries(const Gallery& common, const Gallery& rare) {
  Gallery out = common;
  out.rarity = Rarity::Common;
  const bool labels = common.has_labels() && rare.has_labels();
  if (!labels) out.finding_labels.clear();
  for (std::size_t i = 0; i < rare.size(); ++i) {
    out.sentence_ids.push_back(rare.sentence_ids[i]);
    out.member_ids.push_back(rare.member_ids[i]);
    out.texts.push_back(rare.texts[i]);
    out.embeddings.append_row(rare.embeddings.row(i));
    if (labels) out.finding_labels.push_back(rare.finding_labels[i]);
  }
  return out;
}

RetrievalResult retrieve_top1(const Gallery& gallery, std::span<const double> query) {
  if (gallery.empty()) throw ValidationError("retrieve_top1: empty gallery");
  if (query.size() != gallery.embeddings.cols()) throw ShapeError("retrieve_top1: query dimension mismatch");
  double sq = 0.0;
  for (double v : query) {
    if (!std::isfinite(v)) throw NumericError("retrieve_top1: non-finite query");
    sq += v * v;
  }
  if (sq <= 0.0) throw ValidationError("retrieve_top1: zero-norm query");
  const double inv = 1.0 / std::sqrt(sq);
  std::vector<double> unit(query.size());
  for (std::size_t j = 0; j < query.size(); ++j) unit[j] = query[j] * inv;

  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < gallery.size(); ++r) {
    auto row = gallery.embeddings.row(r);
    double s = 0.0;
    for (std::size_t j = 0; j < unit.size(); ++j) s += unit[j] * row[j];
    if (s > best_score) {
      best_score = s;
      best = r;
    }
  }
  return {best, best_score, gallery.texts[best]};
}

Rarity GalleryBundle::classify(const std::string& text, std::span<const float> embedding) const {
  std::vector<float> unit(embedding.begin(), embedding.end());
  double sq = 0.0;
  for (float v : unit) sq += static_cast<double>(v) * v;
  if (sq <= 0.0) throw ValidationError("classify: zero embedding");
  for (float& v : unit) v = static_cast<float>(v / std::sqrt(sq));
  const double dist = min_center_distance(unit, clusters, criteria.metric);
  return rarity_rule(dist, frequencies.count_of(normalize_text(text)), criteria);
}

GalleryBundle build_gallery_bundle(const SentenceCorpus& corpus, const EmbeddingMatrix& embeddings,
                                   const GalleryBuildOptions& options) {
  GalleryBundle bundle;
  bundle.criteria = options.criteria;
  bundle.frequencies = count_frequencies(corpus);
  const EmbeddingMatrix unit = normalize_rows(embeddings);
  bundle.clusters = kmeans_cluster(unit, options.clusters, options.seed, options.max_iter, options.n_init);
  const RarityLabels labels = classify_rarity(corpus, bundle.frequencies, bundle.clusters, unit, options.criteria);
  auto [common, rare] = build_galleries(corpus, unit, labels);
  bundle.common = std::move(common);
  bundle.rare = std::move(rare);
  return bundle;
}

// ---- persistence ------------------------------------------------------------

void save_gallery(const Gallery& gallery, const std::filesystem::path& json_path,
                  const std::filesystem::path& emb_path) {
  json doc;
  doc["rarity"] = to_string(gallery.rarity);
  doc["ids"] = gallery.sentence_ids;
  doc["member_ids"] = gallery.member_ids;
  doc["texts"] = gallery.texts;
  if (gallery.has_labels()) doc["finding_labels"] = gallery.finding_labels;
  detail::write_file_text(json_path, doc.dump(1) + "\n");
  save_embedding_matrix(gallery.embeddings, emb_path);
}

Gallery load_gallery(const std::filesystem::path& json_path, const std::filesystem::path& emb_path) {
  Gallery g;
  try {
    const json doc = json::parse(detail::read_file_text(json_path));
    g.rarity = rarity_from_string(doc.at("rarity").get<std::string>());
    g.sentence_ids = doc.at("ids").get<std::vector<std::int64_t>>();
    g.texts = doc.at("texts").get<std::vector<std::string>>();
    if (doc.contains("member_ids")) {
      g.member_ids = doc.at("member_ids").get<std::vector<std::vector<std::int64_t>>>();
    } else {
      for (auto id : g.sentence_ids) g.member_ids.push_back({id});
    }
    if (doc.contains("finding_labels")) {
      g.finding_labels = doc.at("finding_labels").get<std::vector<std::vector<std::string>>>();
    }
  } catch (const json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
  g.embeddings = load_embedding_matrix(emb_path);
  if (g.embeddings.rows() != g.texts.size() || g.sentence_ids.size() != g.texts.size() ||
      g.member_ids.size() != g.texts.size() || (g.has_labels() && g.finding_labels.size() != g.texts.size())) {
    throw FormatError(json_path.string() + ": gallery fields and embedding rows disagree in length");
  }
  for (std::size_t r = 0; r < g.embeddings.rows(); ++r) {
    double sq = 0.0;
    for (float v : g.embeddings.row(r)) sq += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-5) throw FormatError(emb_path.string() + ": gallery row is not unit norm");
  }
  return g;
}

void save_gallery_bundle(const GalleryBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_gallery(bundle.common, dir / "common_gallery.json", dir / "common_gallery.emb");
  save_gallery(bundle.rare, dir / "rare_gallery.json", dir / "rare_gallery.emb");
  save_embedding_matrix(bundle.clusters.centers, dir / "centers.emb");
  json doc;
  doc["dist_threshold"] = bundle.criteria.dist_threshold;
  doc["freq_threshold"] = bundle.criteria.freq_threshold;
  doc["metric"] = to_string(bundle.criteria.metric);
  doc["k"] = bundle.clusters.k;
  doc["seed"] = bundle.clusters.seed;
  doc["inertia"] = bundle.clusters.inertia;
  doc["iterations"] = bundle.clusters.iterations;
  doc["frequencies"] = bundle.frequencies.counts;
  detail::write_file_text(dir / "rarity.json", doc.dump(1) + "\n");
}

GalleryBundle load_gallery_bundle(const std::filesystem::path& dir) {
  GalleryBundle bundle;
  bundle.common = load_gallery(dir / "common_gallery.json", dir / "common_gallery.emb");
  bundle.rare = load_gallery(dir / "rare_gallery.json", dir / "rare_gallery.emb");
  bundle.clusters.centers = load_embedding_matrix(dir / "centers.emb");
  try {
    const json doc = json::parse(detail::read_file_text(dir / "rarity.json"));
    bundle.criteria.dist_threshold = doc.at("dist_threshold").get<double>();
    bundle.criteria.freq_threshold = doc.at("freq_threshold").get<std::int64_t>();
    bundle.criteria.metric = distance_metric_from_string(doc.at("metric").get<std::string>());
    bundle.clusters.k = doc.at("k").get<std::size_t>();
    bundle.clusters.seed = doc.at("seed").get<std::uint64_t>();
    bundle.clusters.inertia = doc.at("inertia").get<double>();
    bundle.clusters.iterations = doc.at("iterations").get<std::size_t>();
    bundle.frequencies.counts = doc.at("frequencies").get<std::map<std::string, std::int64_t>>();
  } catch (const json::exception& e) {
    throw FormatError((dir / "rarity.json").string() + ": " + e.what());
  }
  if (bundle.clusters.centers.rows() != bundle.clusters.k) throw FormatError("centers.emb row count != k");
  return bundle;
}

} // namespace teaser
