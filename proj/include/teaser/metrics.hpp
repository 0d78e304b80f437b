#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace teaser {

using TokenSeq = std::vector<std::string>;
using FindingSet = std::vector<std::string>;  // treated as a set

// Lowercase, split on whitespace and ASCII punctuation, drop empty tokens.
TokenSeq tokenize(std::string_view text);

// Sentence-level BLEU with clipped n-gram precision over orders 1..n, the
// closest-reference brevity penalty and 1e-9 in place of zero precisions.
// Orders longer than the candidate are left out of the geometric mean.
double bleu_n(const TokenSeq& candidate, std::span<const TokenSeq> references, int n);

// Corpus BLEU: n-gram matches and lengths are summed over all pairs before
// the same formula is applied.
double corpus_bleu(std::span<const TokenSeq> candidates, std::span<const std::vector<TokenSeq>> references, int n);

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);
double rouge_l(const TokenSeq& candidate, const TokenSeq& reference, double beta = 1.2);

struct CeScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

// Micro-averaged over every (study, label) pair.
CeScores ce_scores(std::span<const FindingSet> predicted, std::span<const FindingSet> truth);

struct NlgScores {
  double bleu[4] = {0, 0, 0, 0};
  double rouge_l = 0.0;
};

// Corpus BLEU-1..4 and mean ROUGE-L over studies. Each study's text is its
// sentences joined by spaces.
NlgScores nlg_scores(std::span<const std::vector<std::string>> generated,
                     std::span<const std::vector<std::string>> references);

} // namespace teaser
