#include "teaser/tensor.hpp"

#include <cmath>

#include "teaser/errors.hpp"

namespace teaser {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw ShapeError("tensor data length does not match " + shape_string());
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::from_embeddings(const EmbeddingMatrix& m) {
  Tensor t(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.data().size(); ++i) t.data_[i] = m.data()[i];
  return t;
}

std::string Tensor::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string());
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

EmbeddingMatrix Tensor::to_embeddings() const {
  std::vector<float> out(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<float>(data_[i]);
  return EmbeddingMatrix(rows_, cols_, std::move(out));
}

} // namespace teaser
