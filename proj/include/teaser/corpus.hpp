#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace teaser {

struct SentenceRecord {
  std::int64_t id = 0;
  std::string text;
  std::string study_id;
  std::int64_t position = 0;

  bool operator==(const SentenceRecord&) const = default;
};

class SentenceCorpus {
 public:
  SentenceCorpus() = default;
  // Validates ids and fills the canonical text map.
  explicit SentenceCorpus(std::vector<SentenceRecord> records);

  const std::vector<SentenceRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const SentenceRecord& operator[](std::size_t i) const { return records_[i]; }

  // normalized text -> ids sharing it, in file order
  const std::map<std::string, std::vector<std::int64_t>>& canonical_text_map() const {
    return canonical_;
  }

 private:
  std::vector<SentenceRecord> records_;
  std::map<std::string, std::vector<std::int64_t>> canonical_;
};

struct FrequencyTable {
  std::map<std::string, std::int64_t> counts;

  std::int64_t count_of(std::string_view normalized_text) const;
  std::int64_t total() const;
};

// Trim, collapse internal whitespace runs to one space, ASCII lowercase.
std::string normalize_text(std::string_view text);

SentenceCorpus load_sentence_corpus(const std::filesystem::path& path);
SentenceCorpus parse_sentence_corpus(std::string_view jsonl);
void save_sentence_corpus(const SentenceCorpus& corpus, const std::filesystem::path& path);

FrequencyTable count_frequencies(const SentenceCorpus& corpus);

} // namespace teaser
