#include "teaser/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

#include "teaser/errors.hpp"

namespace teaser {

TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const TokenSeq& t, std::size_t n) {
  NgramCounts out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[std::vector<std::string>(t.begin() + i, t.begin() + i + n)];
  return out;
}

struct BleuCounts {
  std::vector<std::size_t> matched;  // per order
  std::vector<std::size_t> total;
  std::size_t cand_len = 0;
  std::size_t ref_len = 0;
};

void add_counts(BleuCounts& acc, const TokenSeq& candidate, std::span<const TokenSeq> references, int n) {
  for (int k = 1; k <= n; ++k) {
    const NgramCounts cand = ngrams(candidate, k);
    NgramCounts max_ref;
    for (const auto& r : references)
      for (const auto& [g, c] : ngrams(r, k)) max_ref[g] = std::max(max_ref[g], c);
    for (const auto& [g, c] : cand) {
      acc.total[k - 1] += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) acc.matched[k - 1] += std::min(c, it->second);
    }
  }
  acc.cand_len += candidate.size();
  // Closest reference length; ties go to the shorter reference.
  std::size_t best = 0;
  bool have = false;
  for (const auto& r : references) {
    const auto diff = [&](std::size_t len) {
      return len > candidate.size() ? len - candidate.size() : candidate.size() - len;
    };
    if (!have || diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) {
      best = r.size();
      have = true;
    }
  }
  acc.ref_len += best;
}

double bleu_from_counts(const BleuCounts& c, int n) {
  if (c.cand_len == 0) return 0.0;
  double log_sum = 0.0;
  int orders = 0;
  for (int k = 0; k < n; ++k) {
    if (c.total[k] == 0) continue;
    double p = static_cast<double>(c.matched[k]) / static_cast<double>(c.total[k]);
    if (p == 0.0) p = 1e-9;
    log_sum += std::log(p);
    ++orders;
  }
  if (orders == 0) return 0.0;
  double bp = 1.0;
  if (c.cand_len < c.ref_len) bp = std::exp(1.0 - static_cast<double>(c.ref_len) / static_cast<double>(c.cand_len));
  return bp * std::exp(log_sum / orders);
}

void check_order(int n) {
  if (n < 1) throw ValidationError("bleu: n must be >= 1, got " + std::to_string(n));
}

} // namespace

double bleu_n(const TokenSeq& candidate, std::span<const TokenSeq> references, int n) {
  check_order(n);
  if (candidate.empty()) return 0.0;
  if (references.empty()) throw ValidationError("bleu: no references");
  BleuCounts c{std::vector<std::size_t>(n, 0), std::vector<std::size_t>(n, 0), 0, 0};
  add_counts(c, candidate, references, n);
  return bleu_from_counts(c, n);
}

double corpus_bleu(std::span<const TokenSeq> candidates, std::span<const std::vector<TokenSeq>> references, int n) {
  check_order(n);
  if (candidates.size() != references.size()) throw ValidationError("bleu: candidate and reference counts differ");
  BleuCounts c{std::vector<std::size_t>(n, 0), std::vector<std::size_t>(n, 0), 0, 0};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (references[i].empty()) throw ValidationError("bleu: study " + std::to_string(i) + " has no references");
    add_counts(c, candidates[i], references[i], n);
  }
  return bleu_from_counts(c, n);
}

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const TokenSeq& candidate, const TokenSeq& reference, double beta) {
  const std::size_t lcs = lcs_length(candidate, reference);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

CeScores ce_scores(std::span<const FindingSet> predicted, std::span<const FindingSet> truth) {
  if (predicted.size() != truth.size()) {
    throw ValidationError("ce_scores: " + std::to_string(predicted.size()) + " predictions for " +
                          std::to_string(truth.size()) + " studies");
  }
  CeScores s;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const std::set<std::string> p(predicted[i].begin(), predicted[i].end());
    const std::set<std::string> t(truth[i].begin(), truth[i].end());
    for (const auto& l : p) (t.count(l) ? s.tp : s.fp)++;
    for (const auto& l : t)
      if (!p.count(l)) ++s.fn;
  }
  s.precision = s.tp + s.fp ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 0.0;
  s.recall = s.tp + s.fn ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

NlgScores nlg_scores(std::span<const std::vector<std::string>> generated,
                     std::span<const std::vector<std::string>> references) {
  if (generated.size() != references.size()) throw ValidationError("nlg_scores: generated and reference counts differ");
  auto join = [](const std::vector<std::string>& sentences) {
    std::string s;
    for (const auto& x : sentences) {
      if (!s.empty()) s += ' ';
      s += x;
    }
    return tokenize(s);
  };
  std::vector<TokenSeq> cands;
  std::vector<std::vector<TokenSeq>> refs;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    cands.push_back(join(generated[i]));
    refs.push_back({join(references[i])});
  }
  NlgScores out;
  for (int n = 1; n <= 4; ++n) out.bleu[n - 1] = corpus_bleu(cands, refs, n);
  double total = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) total += rouge_l(cands[i], refs[i][0]);
  out.rouge_l = cands.empty() ? 0.0 : total / static_cast<double>(cands.size());
  return out;
}

} // namespace teaser
