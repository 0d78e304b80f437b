#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace teaser {

// Dense row-major float32 matrix. Used for every file-level vector set:
// visual features, sentence embeddings and gallery rows.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t cols);
  EmbeddingMatrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  void append_row(std::span<const float> values);

  // Copy of the given rows, in order.
  EmbeddingMatrix select_rows(std::span<const std::size_t> indices) const;

  bool operator==(const EmbeddingMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// EMB1 binary format: "EMB1", u32 rows, u32 cols, rows*cols float32, all
// little-endian.
EmbeddingMatrix load_embedding_matrix(const std::filesystem::path& path);
void save_embedding_matrix(const EmbeddingMatrix& matrix, const std::filesystem::path& path);

// In-memory codec behind the file functions.
std::vector<unsigned char> encode_emb1(const EmbeddingMatrix& matrix);
EmbeddingMatrix decode_emb1(std::span<const unsigned char> bytes);

// Rows rescaled to unit L2 norm. Zero rows are rejected.
EmbeddingMatrix normalize_rows(const EmbeddingMatrix& matrix);

} // namespace teaser
