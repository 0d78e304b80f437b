#include "teaser/embedding.hpp"

#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "teaser/errors.hpp"

namespace teaser {

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("embedding data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

void EmbeddingMatrix::append_row(std::span<const float> values) {
  if (cols_ == 0 && rows_ == 0) cols_ = values.size();
  if (values.size() != cols_) throw ShapeError("append_row: dimension mismatch");
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

EmbeddingMatrix EmbeddingMatrix::select_rows(std::span<const std::size_t> indices) const {
  EmbeddingMatrix out(0, cols_);
  out.data_.reserve(indices.size() * cols_);
  for (std::size_t i : indices) {
    if (i >= rows_) throw ShapeError("select_rows: index out of range");
    out.append_row(row(i));
  }
  return out;
}

std::vector<unsigned char> encode_emb1(const EmbeddingMatrix& matrix) {
  std::vector<unsigned char> out{'E', 'M', 'B', '1'};
  out.reserve(12 + matrix.data().size() * 4);
  detail::put_u32(out, static_cast<std::uint32_t>(matrix.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(matrix.cols()));
  for (float v : matrix.data()) detail::put_f32(out, v);
  return out;
}

EmbeddingMatrix decode_emb1(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4 || bytes[0] != 'E' || bytes[1] != 'M' || bytes[2] != 'B' || bytes[3] != '1') {
    throw FormatError("bad magic: expected EMB1");
  }
  detail::ByteReader reader(bytes.subspan(4));
  const std::uint32_t rows = reader.u32("rows");
  const std::uint32_t cols = reader.u32("cols");
  if (cols == 0) throw FormatError("EMB1 cols must be >= 1");
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
  if (reader.remaining() / 4 < count) {
    throw FormatError("truncated payload: header declares " + std::to_string(rows) + "x" +
                      std::to_string(cols) + " but only " + std::to_string(reader.remaining()) +
                      " payload bytes present");
  }
  if (reader.remaining() != count * 4) throw FormatError("trailing bytes after EMB1 payload");
  std::vector<float> data(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    data[i] = reader.f32("value");
    if (!std::isfinite(data[i])) {
      throw FormatError("non-finite value at row " + std::to_string(i / cols) + " col " +
                        std::to_string(i % cols));
    }
  }
  return EmbeddingMatrix(rows, cols, std::move(data));
}

EmbeddingMatrix load_embedding_matrix(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  try {
    return decode_emb1(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_embedding_matrix(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  for (float v : matrix.data()) {
    if (!std::isfinite(v)) throw FormatError("refusing to save non-finite embedding value");
  }
  detail::write_file_bytes(path, encode_emb1(matrix));
}

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& matrix) {
  EmbeddingMatrix out = matrix;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double sq = 0.0;
    for (float v : row) sq += static_cast<double>(v) * v;
    if (sq <= 0.0) throw ValidationError("cannot normalize zero row " + std::to_string(r));
    const double inv = 1.0 / std::sqrt(sq);
    for (float& v : row) v = static_cast<float>(v * inv);
  }
  return out;
}

} // namespace teaser
