#include "teaser/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "teaser/errors.hpp"

namespace teaser {

void InferenceConfig::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(tau_c) || !in_unit(tau_r)) throw ValidationError("thresholds tau_c and tau_r must be in [0, 1]");
  if (!(dedup_threshold >= -1.0 && dedup_threshold <= 1.0))
    throw ValidationError("dedup_threshold must be in [-1, 1]");
}

ReportDraft draft_report(const Checkpoint& ckpt, const TopicEmbeddings& topics, const Galleries& galleries,
                         const InferenceConfig& icfg) {
  icfg.validate();
  const std::size_t M = ckpt.model.M;
  ReportDraft draft;
  for (std::size_t q = 0; q < topics.p.size(); ++q) {
    const bool rare = q >= M;
    const double tau = rare ? icfg.tau_r : icfg.tau_c;
    const double p = topics.p[q];
    if (!(icfg.strict_greater ? p > tau : p >= tau)) continue;
    const Gallery* gallery = rare ? galleries.rare : galleries.common;
    if (gallery == nullptr || gallery->empty()) {
      throw ValidationError(std::string("query ") + std::to_string(q) + " was selected but the " +
                            (rare ? "rare" : "common") + " gallery is empty");
    }
    const Tensor& src = rare ? topics.rare : topics.common;
    const auto row = src.row(rare ? q - M : q);
    const RetrievalResult hit = retrieve_top1(*gallery, row);
    DraftEntry e;
    e.query_index = q;
    e.rarity_class = rare ? Rarity::Rare : Rarity::Common;
    e.gallery_index = hit.index;
    e.score = hit.score;
    e.text = hit.text;
    e.selection_prob = p;
    const bool seen = q < ckpt.positions.count.size() && ckpt.positions.count[q] > 0;
    e.sort_key = seen ? ckpt.positions.mean[q] : std::numeric_limits<double>::quiet_NaN();
    const auto emb = gallery->embeddings.row(hit.index);
    e.embedding.assign(emb.begin(), emb.end());
    if (gallery->has_labels()) e.finding_labels = gallery->finding_labels[hit.index];
    draft.entries.push_back(std::move(e));
  }
  draft.empty_warning = draft.entries.empty();
  return draft;
}

ReportDraft generate_report(const Checkpoint& ckpt, const EmbeddingMatrix& V, const Galleries& galleries,
                            const InferenceConfig& icfg) {
  return draft_report(ckpt, encode(ckpt.model, ckpt.params, V), galleries, icfg);
}

std::vector<DraftEntry> dedup_and_sort(const ReportDraft& draft, const PositionStats& stats,
                                       const InferenceConfig& icfg) {
  std::vector<std::size_t> order(draft.entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = draft.entries[a];
    const auto& eb = draft.entries[b];
    if (ea.selection_prob != eb.selection_prob) return ea.selection_prob > eb.selection_prob;
    return ea.query_index < eb.query_index;
  });

  std::vector<DraftEntry> kept;
  std::set<std::string> texts;
  for (std::size_t i : order) {
    const DraftEntry& e = draft.entries[i];
    if (!texts.insert(normalize_text(e.text)).second) continue;
    bool near_duplicate = false;
    for (const auto& k : kept) {
      if (k.embedding.size() != e.embedding.size()) continue;
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t j = 0; j < e.embedding.size(); ++j) {
        dot += static_cast<double>(e.embedding[j]) * k.embedding[j];
        na += static_cast<double>(e.embedding[j]) * e.embedding[j];
        nb += static_cast<double>(k.embedding[j]) * k.embedding[j];
      }
      if (na > 0.0 && nb > 0.0 && dot / std::sqrt(na * nb) > icfg.dedup_threshold) {
        near_duplicate = true;
        break;
      }
    }
    if (!near_duplicate) kept.push_back(e);
  }

  auto key = [&](const DraftEntry& e) {
    const std::size_t q = e.query_index;
    const bool seen = q < stats.count.size() && stats.count[q] > 0;
    return std::pair<bool, double>{!seen, seen ? stats.mean[q] : 0.0};
  };
  std::stable_sort(kept.begin(), kept.end(), [&](const DraftEntry& a, const DraftEntry& b) {
    const auto ka = key(a), kb = key(b);
    if (ka != kb) return ka < kb;
    return a.query_index < b.query_index;
  });
  return kept;
}

std::vector<std::string> report_sentences(const std::vector<DraftEntry>& entries) {
  std::vector<std::string> out;
  for (const auto& e : entries) out.push_back(e.text);
  return out;
}

std::vector<std::string> report_findings(const std::vector<DraftEntry>& entries) {
  std::set<std::string> labels;
  for (const auto& e : entries) labels.insert(e.finding_labels.begin(), e.finding_labels.end());
  return {labels.begin(), labels.end()};
}

nlohmann::json entry_to_json(const DraftEntry& e) {
  nlohmann::json j = {{"query_index", e.query_index},
                      {"rarity_class", to_string(e.rarity_class)},
                      {"gallery_index", e.gallery_index},
                      {"score", e.score},
                      {"text", e.text},
                      {"selection_prob", e.selection_prob}};
  if (std::isnan(e.sort_key)) {
    j["sort_key"] = nullptr;
  } else {
    j["sort_key"] = e.sort_key;
  }
  if (!e.finding_labels.empty()) j["finding_labels"] = e.finding_labels;
  return j;
}

} // namespace teaser
