#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "teaser/tensor.hpp"

// Tape-based reverse-mode differentiation over float64 matrices.
//
// A Graph records nodes in creation order, which is a topological order, so
// backward() simply walks the tape in reverse. Parameters are leaves bound to
// caller-owned tensors under an integer slot; gradients come back indexed by
// slot. One Graph per sample; graphs are not shared between threads.

namespace teaser::ad {

using NodeId = std::size_t;
class Graph;

struct Var {
  Graph* graph = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Indexed by parameter slot. Slots never bound in the graph stay empty.
using Gradients = std::vector<Tensor>;

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // The tensor must outlive the graph; it is referenced, not copied.
  Var parameter(const Tensor& value, std::size_t slot);

  Var record(Tensor value, std::vector<NodeId> inputs, BackwardFn backward);

  const Tensor& value(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Exact reverse-mode gradients of a 1x1 loss. Bound parameters that the
  // loss does not depend on receive zero tensors.
  Gradients backward(Var loss);

  // Used inside backward functions.
  const Tensor& grad(NodeId id) const { return grads_[id]; }
  Tensor& grad_accumulator(NodeId id);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    long slot = -1;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
// Adds a 1xC row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double factor);
// factor * a + shift, elementwise
Var affine(Var a, double factor, double shift);

Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var gather_rows(Var a, std::span<const std::size_t> indices);

// exp((x - rowmax) / T) / sum
Var softmax_rows(Var x, double temperature = 1.0);
Var log_softmax_rows(Var x, double temperature = 1.0);
// Normalizes each row over its columns; gamma and beta are 1xC.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var gelu(Var x);
Var sigmoid(Var x);
Var log(Var x);
Var clamp(Var x, double lo, double hi);
// x^exponent for x >= 0
Var pow(Var x, double exponent);
// x / max(||x||, eps) per row
Var l2_normalize_rows(Var x, double eps = 1e-12);
// Row-wise dot products, Nx1.
Var row_dot(Var a, Var b);
Var sum(Var a);
Var mean(Var a);

// Two-layer perceptron: gelu(x W1 + b1) W2 + b2.
Var gelu_mlp(Var x, Var w1, Var b1, Var w2, Var b2);

struct AttentionWeights {
  // D x D weights and 1 x D biases. Keys carry no bias because softmax is
  // invariant to it.
  Var wq, bq, wk, wv, bv, wo, bo;
};

// Scaled dot-product attention with `heads` heads of width D / heads and an
// output projection. keys and values must have the same, nonzero row
// count. When mean_weights is given it receives the head-averaged
// attention matrix (queries x keys).
Var multi_head_attention(Var queries, Var keys, Var values, const AttentionWeights& w, std::size_t heads,
                         Tensor* mean_weights = nullptr);

// ---- gradient verification ------------------------------------------------

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t param_index = 0;
  std::size_t element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  // Largest |g_ad - g_fd| over all coordinates.
  double max_abs_error = 0.0;
};

using ScalarBuilder = std::function<Var(Graph&, std::span<const Var>)>;
using ScalarFunction = std::function<double(const std::vector<Tensor>&)>;

// Central differences (f(p+eps) - f(p-eps)) / 2eps for every coordinate,
// compared against the supplied analytic gradients with
// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
GradCheckReport compare_gradients(const ScalarFunction& f, const std::vector<Tensor>& params,
                                  const std::vector<Tensor>& analytic, double eps);

// Builds f on a fresh graph, backpropagates, then runs compare_gradients.
GradCheckReport finite_diff_check(const ScalarBuilder& f, const std::vector<Tensor>& params, double eps);

} // namespace teaser::ad
