#include "teaser/dataset.hpp"

#include <algorithm>

#include "binary_io.hpp"
#include "json.hpp"
#include "teaser/errors.hpp"

namespace teaser {

using nlohmann::json;

double Split::normalized_position(const Study& study, std::size_t k) const {
  const std::size_t n = study.sentence_rows.size();
  if (n <= 1) return 0.0;
  return static_cast<double>(k) / static_cast<double>(n - 1);
}

std::vector<std::string> Dataset::labels_of(const std::string& text) const {
  auto it = sentence_labels.find(normalize_text(text));
  return it == sentence_labels.end() ? std::vector<std::string>{} : it->second;
}

bool Dataset::is_designated_rare(const std::string& text) const {
  const std::string key = normalize_text(text);
  return std::find(rare_texts.begin(), rare_texts.end(), key) != rare_texts.end();
}

std::vector<Study> assemble_studies(const SentenceCorpus& corpus,
                                    const std::map<std::string, EmbeddingMatrix>& visual) {
  std::vector<Study> studies;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& id = corpus[i].study_id;
    auto [it, inserted] = index.emplace(id, studies.size());
    if (inserted) {
      Study s;
      s.id = id;
      auto v = visual.find(id);
      if (v == visual.end()) throw ValidationError("no visual features for study \"" + id + "\"");
      s.visual = v->second;
      studies.push_back(std::move(s));
    }
    studies[it->second].sentence_rows.push_back(i);
  }
  for (auto& s : studies) {
    std::stable_sort(s.sentence_rows.begin(), s.sentence_rows.end(),
                     [&](std::size_t a, std::size_t b) { return corpus[a].position < corpus[b].position; });
  }
  // Studies with features but no report sentences still take part.
  for (const auto& [id, feats] : visual) {
    if (!index.count(id)) {
      index.emplace(id, studies.size());
      studies.push_back(Study{id, feats, {}});
    }
  }
  return studies;
}

void save_features(const FeatureSet& features, const std::filesystem::path& manifest_path) {
  if (features.study_ids.size() != features.features.size()) throw ValidationError("features: id/matrix count mismatch");
  std::size_t dim = features.features.empty() ? 0 : features.features.front().cols();
  json doc;
  doc["dim"] = dim;
  doc["studies"] = json::array();
  EmbeddingMatrix all(0, dim);
  for (std::size_t i = 0; i < features.features.size(); ++i) {
    const auto& m = features.features[i];
    if (m.cols() != dim && m.rows() > 0) throw ValidationError("features: study \"" + features.study_ids[i] + "\" has a different dimension");
    doc["studies"].push_back({{"study_id", features.study_ids[i]}, {"offset", all.rows()}, {"rows", m.rows()}});
    for (std::size_t r = 0; r < m.rows(); ++r) all.append_row(m.row(r));
  }
  detail::write_file_text(manifest_path, doc.dump(1) + "\n");
  auto emb = manifest_path;
  save_embedding_matrix(all, emb.replace_extension(".emb"));
}

FeatureSet load_features(const std::filesystem::path& manifest_path) {
  auto emb_path = manifest_path;
  emb_path.replace_extension(".emb");
  const EmbeddingMatrix all = load_embedding_matrix(emb_path);
  FeatureSet out;
  try {
    const json doc = json::parse(detail::read_file_text(manifest_path));
    const std::size_t dim = doc.at("dim").get<std::size_t>();
    if (all.rows() > 0 && all.cols() != dim) throw FormatError(manifest_path.string() + ": dim does not match the matrix");
    for (const auto& s : doc.at("studies")) {
      const std::size_t offset = s.at("offset").get<std::size_t>();
      const std::size_t rows = s.at("rows").get<std::size_t>();
      if (offset + rows > all.rows()) throw FormatError(manifest_path.string() + ": study rows exceed the matrix");
      std::vector<std::size_t> idx(rows);
      for (std::size_t r = 0; r < rows; ++r) idx[r] = offset + r;
      EmbeddingMatrix m = all.select_rows(idx);
      if (rows == 0) m = EmbeddingMatrix(0, dim);
      out.study_ids.push_back(s.at("study_id").get<std::string>());
      out.features.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  return out;
}

namespace {

void save_split(const Split& split, const std::filesystem::path& dir, const std::string& name) {
  save_sentence_corpus(split.corpus, dir / (name + "_corpus.jsonl"));
  save_embedding_matrix(split.embeddings, dir / (name + "_corpus.emb"));
  FeatureSet fs;
  for (const auto& s : split.studies) {
    fs.study_ids.push_back(s.id);
    fs.features.push_back(s.visual);
  }
  save_features(fs, dir / (name + "_features.json"));
}

Split load_split(const std::filesystem::path& dir, const std::string& name) {
  Split split;
  split.corpus = load_sentence_corpus(dir / (name + "_corpus.jsonl"));
  split.embeddings = load_embedding_matrix(dir / (name + "_corpus.emb"));
  if (split.embeddings.rows() != split.corpus.size()) {
    throw FormatError(name + "_corpus.emb has " + std::to_string(split.embeddings.rows()) + " rows for " +
                      std::to_string(split.corpus.size()) + " sentences");
  }
  const FeatureSet fs = load_features(dir / (name + "_features.json"));
  std::map<std::string, EmbeddingMatrix> visual;
  for (std::size_t i = 0; i < fs.study_ids.size(); ++i) visual[fs.study_ids[i]] = fs.features[i];
  // Keep the manifest's study order.
  std::vector<Study> studies = assemble_studies(split.corpus, visual);
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < fs.study_ids.size(); ++i) pos[fs.study_ids[i]] = i;
  std::stable_sort(studies.begin(), studies.end(),
                   [&](const Study& a, const Study& b) { return pos[a.id] < pos[b.id]; });
  split.studies = std::move(studies);
  return split;
}

} // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_split(dataset.train, dir, "train");
  save_split(dataset.val, dir, "val");
  save_split(dataset.test, dir, "test");
  json doc;
  doc["sentence_labels"] = dataset.sentence_labels;
  doc["rare_texts"] = dataset.rare_texts;
  doc["rare_findings"] = dataset.rare_findings;
  doc["findings"] = dataset.findings;
  detail::write_file_text(dir / "labels.json", doc.dump(1) + "\n");
}

std::map<std::string, std::vector<std::string>> load_sentence_labels(const std::filesystem::path& path) {
  try {
    const json doc = json::parse(detail::read_file_text(path));
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [text, labels] : doc.at("sentence_labels").items())
      out[normalize_text(text)] = labels.get<std::vector<std::string>>();
    return out;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.train = load_split(dir, "train");
  d.val = load_split(dir, "val");
  d.test = load_split(dir, "test");
  const auto labels_path = dir / "labels.json";
  if (std::filesystem::exists(labels_path)) {
    d.sentence_labels = load_sentence_labels(labels_path);
    try {
      const json doc = json::parse(detail::read_file_text(labels_path));
      d.rare_texts = doc.value("rare_texts", std::vector<std::string>{});
      d.rare_findings = doc.value("rare_findings", std::vector<std::string>{});
      d.findings = doc.value("findings", std::vector<std::string>{});
    } catch (const json::exception& e) {
      throw FormatError(labels_path.string() + ": " + e.what());
    }
  }
  return d;
}

} // namespace teaser
