#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "doctest.h"
#include "teaser/errors.hpp"
#include "teaser/gallery.hpp"
#include "test_util.hpp"

using namespace teaser;

namespace {

EmbeddingMatrix unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<float> g;
  EmbeddingMatrix m(rows, cols);
  for (auto& v : m.data()) v = g(rng);
  return normalize_rows(m);
}

double sq_dist(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
  return s;
}

// Inertia of a partition whose centers are the normalized member means.
double partition_inertia(const EmbeddingMatrix& x, const std::vector<int>& group, int k) {
  double total = 0;
  for (int c = 0; c < k; ++c) {
    std::vector<double> mean(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      if (group[i] == c)
        for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += x(i, j);
    double n = 0;
    for (double v : mean) n += v * v;
    n = std::sqrt(n);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (group[i] != c) continue;
      for (std::size_t j = 0; j < x.cols(); ++j) total += (x(i, j) - mean[j] / n) * (x(i, j) - mean[j] / n);
    }
  }
  return total;
}

std::size_t nearest(const ClusterModel& m, std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < m.k; ++c)
    if (sq_dist(row, m.centers.row(c)) < sq_dist(row, m.centers.row(best))) best = c;
  return best;
}

SentenceCorpus corpus_of(const std::vector<std::string>& texts) {
  std::vector<SentenceRecord> r;
  for (std::size_t i = 0; i < texts.size(); ++i)
    r.push_back({static_cast<std::int64_t>(i), texts[i], "s" + std::to_string(i), 0});
  return SentenceCorpus(r);
}

Gallery gallery_of(const EmbeddingMatrix& rows) {
  Gallery g;
  g.embeddings = rows;
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    g.sentence_ids.push_back(static_cast<std::int64_t>(i));
    g.member_ids.push_back({static_cast<std::int64_t>(i)});
    g.texts.push_back("row " + std::to_string(i));
  }
  return g;
}

} // namespace

TEST_CASE("k-means argument checks") {
  std::mt19937_64 rng(1);
  const EmbeddingMatrix x = unit_rows(5, 4, rng);
  CHECK_THROWS_AS(kmeans_cluster(x, 0, 0), ValidationError);
  CHECK_THROWS_AS(kmeans_cluster(x, 6, 0), ValidationError);
  CHECK_THROWS_AS(kmeans_cluster(EmbeddingMatrix(2, 2, {1, 1, 0, 1}), 1, 0), ValidationError);
}

TEST_CASE("k-means with one center per distinct point has zero inertia") {
  std::mt19937_64 rng(2);
  const EmbeddingMatrix x = unit_rows(7, 5, rng);
  const ClusterModel m = kmeans_cluster(x, 7, 3);
  CHECK(m.inertia < 1e-10);
}

TEST_CASE("k-means with k=1 returns the normalized mean direction") {
  std::mt19937_64 rng(4);
  const EmbeddingMatrix x = unit_rows(20, 6, rng);
  const ClusterModel m = kmeans_cluster(x, 1, 0);
  std::vector<double> mean(6, 0.0);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = 0; j < 6; ++j) mean[j] += x(i, j);
  double n = 0;
  for (double v : mean) n += v * v;
  n = std::sqrt(n);
  double inertia = 0;
  for (std::size_t j = 0; j < 6; ++j) CHECK(m.centers(0, j) == doctest::Approx(mean[j] / n).epsilon(1e-6));
  for (std::size_t i = 0; i < 20; ++i) inertia += sq_dist(x.row(i), m.centers.row(0));
  CHECK(m.inertia == doctest::Approx(inertia).epsilon(1e-9));
  CHECK(m.inertia == doctest::Approx(partition_inertia(x, std::vector<int>(20, 0), 1)).epsilon(1e-6));
}

TEST_CASE("four 2-D points split into the brute-force optimal partition") {
  const EmbeddingMatrix x = normalize_rows(EmbeddingMatrix(4, 2, {0, 1, 0.1f, 1, 1, 0, 1, 0.1f}));
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> best_group;
  for (int mask = 1; mask < 15; ++mask) {  // every split into two nonempty groups
    std::vector<int> group(4);
    for (int i = 0; i < 4; ++i) group[i] = mask >> i & 1;
    const double v = partition_inertia(x, group, 2);
    if (v < best - 1e-12) {
      best = v;
      best_group = group;
    }
  }
  CHECK(best_group[0] == best_group[1]);
  CHECK(best_group[2] == best_group[3]);
  CHECK(best_group[0] != best_group[2]);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ClusterModel m = kmeans_cluster(x, 2, seed);
    CHECK(nearest(m, x.row(0)) == nearest(m, x.row(1)));
    CHECK(nearest(m, x.row(2)) == nearest(m, x.row(3)));
    CHECK(nearest(m, x.row(0)) != nearest(m, x.row(2)));
    CHECK(m.inertia == doctest::Approx(best).epsilon(1e-5));
  }
}

TEST_CASE("k-means is deterministic and inertia never increases") {
  std::mt19937_64 rng(5);
  const EmbeddingMatrix x = unit_rows(300, 8, rng);
  const ClusterModel a = kmeans_cluster(x, 12, 77), b = kmeans_cluster(x, 12, 77);
  CHECK(a.centers == b.centers);
  CHECK(a.inertia == b.inertia);
  REQUIRE(a.inertia_history.size() >= 2);
  for (std::size_t i = 1; i < a.inertia_history.size(); ++i)
    CHECK(a.inertia_history[i] <= a.inertia_history[i - 1] + 1e-9);
  CHECK_FALSE(kmeans_cluster(x, 12, 78).centers == a.centers);
  // More restarts never do worse than the first run of the same stream.
  CHECK(kmeans_cluster(x, 12, 77, 100, 4).inertia <= a.inertia + 1e-9);
}

TEST_CASE("rarity rule") {
  const RarityCriteria c;
  CHECK(rarity_rule(0.95, 3, c) == Rarity::Rare);
  CHECK(rarity_rule(0.85, 3, c) == Rarity::Common);
  CHECK(rarity_rule(0.95, 10, c) == Rarity::Common);
  CHECK(rarity_rule(0.9, 3, c) == Rarity::Common);   // strictly larger
  CHECK(rarity_rule(0.95, 6, c) == Rarity::Common);  // strictly less
}

TEST_CASE("classify_rarity applies the rule with Euclidean distance on unit vectors") {
  // One center at (1, 0). Unit vectors at angle theta have distance 2 sin(theta / 2).
  ClusterModel m;
  m.k = 1;
  m.centers = EmbeddingMatrix(1, 2, {1, 0});
  auto at_distance = [](double d) {
    const double theta = 2 * std::asin(d / 2);
    return std::vector<float>{static_cast<float>(std::cos(theta)), static_cast<float>(std::sin(theta))};
  };
  std::vector<std::string> texts;
  EmbeddingMatrix emb(0, 2);
  auto add = [&](const std::string& t, double d, int copies) {
    for (int i = 0; i < copies; ++i) {
      texts.push_back(t);
      emb.append_row(at_distance(d));
    }
  };
  add("far and scarce", 0.95, 3);
  add("near and scarce", 0.85, 3);
  add("far and frequent", 0.95, 10);
  const SentenceCorpus c = corpus_of(texts);
  const RarityLabels r = classify_rarity(c, count_frequencies(c), m, emb);
  for (std::size_t i = 0; i < c.size(); ++i) {
    INFO(c[i].text);
    CHECK(r.min_distance[i] == doctest::Approx(c[i].text == "near and scarce" ? 0.85 : 0.95).epsilon(1e-6));
    CHECK(r.labels[i] == (c[i].text == "far and scarce" ? Rarity::Rare : Rarity::Common));
  }
  CHECK(r.rare_count() == 3);

  RarityCriteria cosine;
  cosine.metric = DistanceMetric::Cosine;
  const std::vector<float> row = at_distance(0.95);
  CHECK(min_center_distance(row, m, DistanceMetric::Cosine) == doctest::Approx(1.0 - row[0]).epsilon(1e-6));
  CHECK_THROWS_AS(classify_rarity(c, count_frequencies(c), m, EmbeddingMatrix(2, 2, {1, 0, 0, 1})), ValidationError);
}

TEST_CASE("rarity labels are monotone in the thresholds") {
  std::mt19937_64 rng(8);
  std::vector<std::string> texts;
  for (int i = 0; i < 200; ++i) texts.push_back("t" + std::to_string(rng() % 60));
  const SentenceCorpus c = corpus_of(texts);
  const FrequencyTable f = count_frequencies(c);
  const EmbeddingMatrix emb = unit_rows(200, 6, rng);
  const ClusterModel m = kmeans_cluster(emb, 8, 1);
  const double dists[] = {0.5, 0.7, 0.9, 1.1};
  const std::int64_t freqs[] = {2, 4, 6, 8};
  for (double d1 : dists)
    for (double d2 : dists)
      for (auto f1 : freqs)
        for (auto f2 : freqs) {
          if (!(d1 <= d2 && f1 >= f2)) continue;
          const auto a = classify_rarity(c, f, m, emb, {d1, f1, DistanceMetric::Euclidean});
          const auto b = classify_rarity(c, f, m, emb, {d2, f2, DistanceMetric::Euclidean});
          for (std::size_t i = 0; i < c.size(); ++i)
            if (b.labels[i] == Rarity::Rare) CHECK(a.labels[i] == Rarity::Rare);
        }
}

TEST_CASE("gallery construction") {
  std::mt19937_64 rng(9);
  SUBCASE("five sentences, two rare") {
    const SentenceCorpus c = corpus_of({"a", "b", "c", "d", "e"});
    RarityLabels r;
    r.labels = {Rarity::Common, Rarity::Rare, Rarity::Common, Rarity::Rare, Rarity::Common};
    const auto [common, rare] = build_galleries(c, unit_rows(5, 4, rng), r);
    CHECK(common.size() == 3);
    CHECK(rare.size() == 2);
    CHECK(common.rarity == Rarity::Common);
    CHECK(rare.rarity == Rarity::Rare);
    CHECK(rare.sentence_ids == std::vector<std::int64_t>{1, 3});
  }
  SUBCASE("duplicates collapse to one row with the lowest id") {
    const SentenceCorpus c = corpus_of({"x", "No change.", "no  change.", "NO CHANGE.", "No change."});
    RarityLabels r;
    r.labels.assign(5, Rarity::Common);
    const auto [common, rare] = build_galleries(c, unit_rows(5, 4, rng), r);
    CHECK(common.size() == 2);
    CHECK(rare.size() == 0);
    CHECK(common.sentence_ids == std::vector<std::int64_t>{0, 1});
    CHECK(common.member_ids[1] == std::vector<std::int64_t>{1, 2, 3, 4});
  }
  SUBCASE("all rare is an error") {
    const SentenceCorpus c = corpus_of({"a", "b"});
    RarityLabels r;
    r.labels.assign(2, Rarity::Rare);
    CHECK_THROWS_AS(build_galleries(c, unit_rows(2, 4, rng), r), ValidationError);
  }
}

TEST_CASE("galleries partition the corpus and keep unit rows") {
  std::mt19937_64 rng(10);
  std::vector<std::string> texts;
  for (int i = 0; i < 300; ++i) texts.push_back("s" + std::to_string(rng() % 90));
  const SentenceCorpus c = corpus_of(texts);
  GalleryBuildOptions opts;
  opts.clusters = 10;
  opts.criteria.dist_threshold = 0.6;
  const GalleryBundle b = build_gallery_bundle(c, unit_rows(300, 8, rng), opts);
  std::set<std::int64_t> seen;
  for (const Gallery* g : {&b.common, &b.rare}) {
    for (std::size_t i = 0; i < g->size(); ++i) {
      for (auto id : g->member_ids[i]) CHECK(seen.insert(id).second);
      double n = 0;
      for (float v : g->embeddings.row(i)) n += static_cast<double>(v) * v;
      CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  CHECK(seen.size() == 300);
  CHECK(b.rare.size() > 0);
  const Gallery merged = merge_galleries(b.common, b.rare);
  CHECK(merged.size() == b.common.size() + b.rare.size());
  CHECK(merged.rarity == Rarity::Common);
}

TEST_CASE("retrieval") {
  std::mt19937_64 rng(11);
  const Gallery g = gallery_of(unit_rows(3, 6, rng));
  SUBCASE("self retrieval") {
    std::vector<double> q(g.embeddings.row(1).begin(), g.embeddings.row(1).end());
    for (double& v : q) v *= 3.5;
    const RetrievalResult r = retrieve_top1(g, q);
    CHECK(r.index == 1);
    CHECK(r.score == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.text == "row 1");
  }
  SUBCASE("ties go to the lowest index") {
    const Gallery twins = gallery_of(EmbeddingMatrix(3, 2, {0, 1, 1, 0, 1, 0}));
    CHECK(retrieve_top1(twins, std::vector<double>{1, 0}).index == 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(retrieve_top1(Gallery{}, std::vector<double>{1, 0}), ValidationError);
    CHECK_THROWS_AS(retrieve_top1(g, std::vector<double>(6, 0.0)), ValidationError);
    CHECK_THROWS_AS(retrieve_top1(g, std::vector<double>(5, 1.0)), ShapeError);
    std::vector<double> nan(6, 1.0);
    nan[2] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(retrieve_top1(g, nan));
  }
}

TEST_CASE("retrieve_top1 equals an exhaustive scan on 100 galleries up to 10000 rows") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> gauss;
  const auto start = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = trial < 10 ? 10000 : 1 + rng() % 3000;
    const std::size_t dim = 1 + rng() % 32;
    const Gallery g = gallery_of(unit_rows(rows, dim, rng));
    std::vector<double> q(dim);
    for (double& v : q) v = gauss(rng);
    double n = 0;
    for (double v : q) n += v * v;
    n = std::sqrt(n);
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < dim; ++j) s += q[j] / n * g.embeddings(i, j);
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    const RetrievalResult r = retrieve_top1(g, q);
    INFO("trial " << trial << " rows " << rows << " dim " << dim);
    CHECK(r.index == best);
    CHECK(r.score == doctest::Approx(best_score).epsilon(1e-12));
  }
  MESSAGE("retrieval property: " << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()
                                 << " s");
}

TEST_CASE("gallery bundle persistence round trip") {
  TempDir dir("bundle");
  std::mt19937_64 rng(13);
  std::vector<std::string> texts;
  for (int i = 0; i < 120; ++i) texts.push_back("s" + std::to_string(rng() % 40));
  const SentenceCorpus c = corpus_of(texts);
  const EmbeddingMatrix emb = unit_rows(120, 8, rng);
  GalleryBuildOptions opts;
  opts.clusters = 6;
  opts.criteria.dist_threshold = 0.6;
  opts.seed = 4;
  GalleryBundle b = build_gallery_bundle(c, emb, opts);
  std::map<std::string, std::vector<std::string>> labels = {{"s1", {"f1"}}, {"s2", {"f2", "f3"}}};
  attach_finding_labels(b.common, labels);
  attach_finding_labels(b.rare, labels);
  save_gallery_bundle(b, dir.path());
  const GalleryBundle back = load_gallery_bundle(dir.path());
  for (auto [x, y] : {std::pair{&b.common, &back.common}, std::pair{&b.rare, &back.rare}}) {
    CHECK(x->texts == y->texts);
    CHECK(x->sentence_ids == y->sentence_ids);
    CHECK(x->member_ids == y->member_ids);
    CHECK(x->embeddings == y->embeddings);
    CHECK(x->finding_labels == y->finding_labels);
    CHECK(x->rarity == y->rarity);
  }
  CHECK(back.clusters.centers == b.clusters.centers);
  CHECK(back.criteria.dist_threshold == b.criteria.dist_threshold);
  CHECK(back.frequencies.counts == b.frequencies.counts);
  // Known sentences keep their class; classification of new ones uses the
  // stored centers and frequencies.
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(back.classify(c[i].text, emb.row(i)) == b.classify(c[i].text, emb.row(i)));
  save_gallery_bundle(back, dir / "again");
  CHECK(same_tree(dir.path() / "again", dir.path() / "again"));
  CHECK(slurp(dir / "common_gallery.json") == slurp(dir.path() / "again" / "common_gallery.json"));
}
