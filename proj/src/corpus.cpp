#include "teaser/corpus.hpp"

#include <cctype>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "teaser/errors.hpp"

namespace teaser {

using nlohmann::json;

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

SentenceCorpus::SentenceCorpus(std::vector<SentenceRecord> records) : records_(std::move(records)) {
  std::set<std::int64_t> seen;
  for (const auto& r : records_) {
    if (r.id < 0) throw ValidationError("negative sentence id " + std::to_string(r.id));
    if (r.position < 0) throw ValidationError("negative position for id " + std::to_string(r.id));
    if (r.text.empty()) throw ValidationError("empty text for id " + std::to_string(r.id));
    if (!seen.insert(r.id).second) throw ValidationError("duplicate sentence id " + std::to_string(r.id));
    canonical_[normalize_text(r.text)].push_back(r.id);
  }
}

std::int64_t FrequencyTable::count_of(std::string_view normalized_text) const {
  auto it = counts.find(std::string(normalized_text));
  return it == counts.end() ? 0 : it->second;
}

std::int64_t FrequencyTable::total() const {
  std::int64_t t = 0;
  for (const auto& [_, c] : counts) t += c;
  return t;
}

namespace {

SentenceRecord parse_record(const std::string& line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(where + ": invalid JSON (" + e.what() + ")");
  }
  if (!obj.is_object()) throw ParseError(where + ": expected a JSON object");
  auto require = [&](const char* key) -> const json& {
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(where + ": missing field \"" + key + "\"");
    return *it;
  };
  const json& id = require("id");
  const json& text = require("text");
  const json& study = require("study_id");
  const json& position = require("position");
  if (!id.is_number_integer()) throw ParseError(where + ": \"id\" must be an integer");
  if (!text.is_string()) throw ParseError(where + ": \"text\" must be a string");
  if (!study.is_string()) throw ParseError(where + ": \"study_id\" must be a string");
  if (!position.is_number_integer()) throw ParseError(where + ": \"position\" must be an integer");
  SentenceRecord r{id.get<std::int64_t>(), text.get<std::string>(), study.get<std::string>(),
                   position.get<std::int64_t>()};
  if (r.text.empty()) throw ParseError(where + ": \"text\" must be nonempty");
  if (r.id < 0 || r.position < 0) throw ParseError(where + ": id and position must be >= 0");
  return r;
}

} // namespace

SentenceCorpus parse_sentence_corpus(std::string_view jsonl) {
  std::vector<SentenceRecord> records;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    records.push_back(parse_record(line, line_no));
  }
  std::set<std::int64_t> ids;
  std::map<std::string, std::int64_t> study_sizes;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw ValidationError("duplicate sentence id " + std::to_string(r.id));
    ++study_sizes[r.study_id];
  }
  for (const auto& r : records) {
    if (r.position >= study_sizes[r.study_id]) {
      throw ValidationError("sentence " + std::to_string(r.id) + ": position " + std::to_string(r.position) +
                            " >= sentence count of study " + r.study_id);
    }
  }
  return SentenceCorpus(std::move(records));
}

SentenceCorpus load_sentence_corpus(const std::filesystem::path& path) {
  const std::string text = detail::read_file_text(path);
  try {
    return parse_sentence_corpus(text);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_sentence_corpus(const SentenceCorpus& corpus, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : corpus.records()) {
    json obj = {{"id", r.id}, {"text", r.text}, {"study_id", r.study_id}, {"position", r.position}};
    out += obj.dump();
    out += '\n';
  }
  detail::write_file_text(path, out);
}

FrequencyTable count_frequencies(const SentenceCorpus& corpus) {
  if (corpus.empty()) throw ValidationError("count_frequencies: empty corpus");
  FrequencyTable table;
  for (const auto& r : corpus.records()) ++table.counts[normalize_text(r.text)];
  return table;
}

} // namespace teaser
