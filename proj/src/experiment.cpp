#include "teaser/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include "teaser/errors.hpp"

namespace teaser {

GallerySet galleries_for(const GalleryBundle& bundle, const ModelConfig& model,
                         const std::map<std::string, std::vector<std::string>>& labels) {
  GallerySet g;
  if (model.J == 0) {
    g.common = merge_galleries(bundle.common, bundle.rare);
    g.rare = Gallery{};
    g.rare.rarity = Rarity::Rare;
  } else {
    g.common = bundle.common;
    g.rare = bundle.rare;
  }
  if (!labels.empty()) {
    attach_finding_labels(g.common, labels);
    attach_finding_labels(g.rare, labels);
  }
  return g;
}

std::vector<GeneratedReport> generate_reports(const Checkpoint& ckpt, const std::vector<Study>& studies,
                                              const GallerySet& galleries, const InferenceConfig& icfg) {
  std::vector<GeneratedReport> out;
  out.reserve(studies.size());
  const Galleries view{&galleries.common, &galleries.rare};
  for (const auto& s : studies) {
    const ReportDraft draft = generate_report(ckpt, s.visual, view, icfg);
    out.push_back({s.id, dedup_and_sort(draft, ckpt.positions, icfg), draft.empty_warning});
  }
  return out;
}

double mean_topic_cosine(const Checkpoint& ckpt, const std::vector<Study>& studies, std::size_t limit) {
  const std::size_t n = std::min(limit, studies.size());
  if (n == 0) throw ValidationError("topic similarity: no studies");
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const TopicEmbeddings t = encode(ckpt.model, ckpt.params, studies[s].visual);
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < t.common.rows(); ++i) rows.emplace_back(t.common.row(i).begin(), t.common.row(i).end());
    for (std::size_t i = 0; i < t.rare.rows(); ++i) rows.emplace_back(t.rare.row(i).begin(), t.rare.row(i).end());
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = i + 1; j < rows.size(); ++j) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
          dot += rows[i][k] * rows[j][k];
          na += rows[i][k] * rows[i][k];
          nb += rows[j][k] * rows[j][k];
        }
        sum += dot / std::sqrt(na * nb);
        ++pairs;
      }
    }
    total += pairs ? sum / static_cast<double>(pairs) : 0.0;
  }
  return total / static_cast<double>(n);
}

namespace {

std::map<std::string, std::vector<std::string>> reference_findings(const Dataset& dataset, const Split& split) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& s : split.studies) {
    std::set<std::string> labels;
    for (std::size_t row : s.sentence_rows)
      for (const auto& l : dataset.labels_of(split.corpus[row].text)) labels.insert(l);
    out[s.id] = {labels.begin(), labels.end()};
  }
  return out;
}

} // namespace

double rare_finding_recall(const Dataset& dataset, const Split& split, const std::vector<GeneratedReport>& reports,
                           std::size_t* pairs) {
  const std::set<std::string> rare(dataset.rare_findings.begin(), dataset.rare_findings.end());
  const auto truth = reference_findings(dataset, split);
  std::size_t hit = 0, total = 0;
  for (const auto& r : reports) {
    const auto predicted = report_findings(r.entries);
    const std::set<std::string> pred(predicted.begin(), predicted.end());
    for (const auto& l : truth.at(r.study_id)) {
      if (!rare.count(l)) continue;
      ++total;
      hit += pred.count(l);
    }
  }
  if (pairs) *pairs = total;
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

void score_reports(const Dataset& dataset, const Split& split, const std::vector<GeneratedReport>& reports,
                   ExperimentResult& out) {
  const auto truth = reference_findings(dataset, split);
  std::map<std::string, const Study*> by_id;
  for (const auto& s : split.studies) by_id[s.id] = &s;
  std::vector<FindingSet> pred, ref;
  std::vector<std::vector<std::string>> gen_text, ref_text;
  for (const auto& r : reports) {
    pred.push_back(report_findings(r.entries));
    ref.push_back(truth.at(r.study_id));
    gen_text.push_back(report_sentences(r.entries));
    std::vector<std::string> sentences;
    for (std::size_t row : by_id.at(r.study_id)->sentence_rows) sentences.push_back(split.corpus[row].text);
    ref_text.push_back(std::move(sentences));
  }
  out.ce = ce_scores(pred, ref);
  out.nlg = nlg_scores(gen_text, ref_text);
  out.rare_recall = rare_finding_recall(dataset, split, reports, &out.rare_pairs);
}

ExperimentResult run_experiment(const std::string& name, const Dataset& dataset, const GalleryBundle& bundle,
                                const ExperimentConfig& cfg, Checkpoint* checkpoint_out) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult out;
  out.name = name;
  const RarityFn rarity = rarity_from_bundle(bundle);
  const auto train_set = make_examples(dataset.train, cfg.train.model, rarity, &out.truncated_sentences);
  const auto val_set = make_examples(dataset.val, cfg.train.model, rarity, &out.truncated_sentences);
  TrainResult tr = train(cfg.train, train_set, val_set);
  out.initial_train = tr.initial_train;
  out.final_train = tr.history.back().train;
  out.final_val = tr.history.back().val;

  const GallerySet galleries = galleries_for(bundle, cfg.train.model, dataset.sentence_labels);
  const auto reports = generate_reports(tr.checkpoint, dataset.test.studies, galleries, cfg.inference);
  score_reports(dataset, dataset.test, reports, out);
  if (!dataset.val.studies.empty())
    out.topic_cosine = mean_topic_cosine(tr.checkpoint, dataset.val.studies, cfg.similarity_studies);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (checkpoint_out) *checkpoint_out = std::move(tr.checkpoint);
  return out;
}

ExperimentResult average_results(const std::string& name, const std::vector<ExperimentResult>& runs) {
  if (runs.empty()) throw ValidationError("average_results: no runs");
  ExperimentResult m;
  m.name = name;
  const double n = static_cast<double>(runs.size());
  auto add_loss = [n](LossBreakdown& acc, const LossBreakdown& x) {
    acc.l_sim += x.l_sim / n;
    acc.l_tcl_t2r += x.l_tcl_t2r / n;
    acc.l_tcl_r2t += x.l_tcl_r2t / n;
    acc.l_tcl += x.l_tcl / n;
    acc.l_select += x.l_select / n;
    acc.l_align += x.l_align / n;
    acc.l_total += x.l_total / n;
  };
  for (const auto& r : runs) {
    m.ce.precision += r.ce.precision / n;
    m.ce.recall += r.ce.recall / n;
    m.ce.f1 += r.ce.f1 / n;
    m.ce.tp += r.ce.tp;
    m.ce.fp += r.ce.fp;
    m.ce.fn += r.ce.fn;
    for (int k = 0; k < 4; ++k) m.nlg.bleu[k] += r.nlg.bleu[k] / n;
    m.nlg.rouge_l += r.nlg.rouge_l / n;
    m.rare_recall += r.rare_recall / n;
    m.rare_pairs += r.rare_pairs;
    m.topic_cosine += r.topic_cosine / n;
    add_loss(m.initial_train, r.initial_train);
    add_loss(m.final_train, r.final_train);
    add_loss(m.final_val, r.final_val);
    m.truncated_sentences += r.truncated_sentences;
    m.seconds += r.seconds;
  }
  return m;
}

nlohmann::json to_json(const ExperimentResult& r) {
  return {{"name", r.name},
          {"precision", r.ce.precision},
          {"recall", r.ce.recall},
          {"f1", r.ce.f1},
          {"bleu1", r.nlg.bleu[0]},
          {"bleu2", r.nlg.bleu[1]},
          {"bleu3", r.nlg.bleu[2]},
          {"bleu4", r.nlg.bleu[3]},
          {"rouge_l", r.nlg.rouge_l},
          {"rare_recall", r.rare_recall},
          {"rare_pairs", r.rare_pairs},
          {"topic_cosine", r.topic_cosine},
          {"initial_train_loss", r.initial_train.l_total},
          {"final_train_loss", r.final_train.l_total},
          {"final_val_loss", r.final_val.l_total},
          {"truncated_sentences", r.truncated_sentences},
          {"seconds", r.seconds}};
}

std::string format_table(const std::vector<ExperimentResult>& results) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %7s %7s %7s %7s %7s %8s %8s %9s\n", "run", "F1", "P", "R", "BLEU-1",
                "ROUGE-L", "rare_rec", "topicos", "val_loss");
  out += line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-22s %7.4f %7.4f %7.4f %7.4f %7.4f %8.4f %8.4f %9.4f\n", r.name.c_str(),
                  r.ce.f1, r.ce.precision, r.ce.recall, r.nlg.bleu[0], r.nlg.rouge_l, r.rare_recall, r.topic_cosine,
                  r.final_val.l_total);
    out += line;
  }
  return out;
}

} // namespace teaser
