#include "teaser/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <type_traits>

#include "teaser/errors.hpp"

namespace teaser::ad {

namespace {

// detail is a string or a callable producing one, evaluated only on failure.
template <typename Detail>
void require(bool ok, const char* op, Detail&& detail) {
  if (ok) return;
  if constexpr (std::is_invocable_v<Detail>)
    throw ShapeError(std::string(op) + ": " + detail());
  else
    throw ShapeError(std::string(op) + ": " + detail);
}

std::string shapes(const Tensor& a, const Tensor& b) { return a.shape_string() + " vs " + b.shape_string(); }

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw ShapeError("variable is not attached to a graph");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw ShapeError("variables belong to different graphs");
  return graph_of(a);
}

// out += a * b  (a: n x k, b: k x m)
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* __restrict ad = a.data().data();
  const double* __restrict bd = b.data().data();
  double* __restrict od = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* __restrict o = od + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* __restrict br = bd + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

// out += a * b^T  (a: n x k, b: m x k)
void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  const double* __restrict ad = a.data().data();
  const double* __restrict bd = b.data().data();
  double* __restrict od = out.data().data();
  const std::size_t k4 = k - k % 4;
  for (std::size_t i = 0; i < n; ++i) {
    const double* __restrict ar = ad + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* __restrict br = bd + j * k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t p = 0;
      for (; p < k4; p += 4) {
        s0 += ar[p] * br[p];
        s1 += ar[p + 1] * br[p + 1];
        s2 += ar[p + 2] * br[p + 2];
        s3 += ar[p + 3] * br[p + 3];
      }
      for (; p < k; ++p) s0 += ar[p] * br[p];
      od[i * m + j] += (s0 + s1) + (s2 + s3);
    }
  }
}

// out += a^T * b  (a: n x k, b: n x m)
void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* __restrict ad = a.data().data();
  const double* __restrict bd = b.data().data();
  double* __restrict od = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* __restrict ar = ad + i * k;
    const double* __restrict br = bd + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      double* __restrict o = od + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

template <typename Fn>
Var unary_elementwise(Var x, Fn&& forward_and_derivative) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  Tensor deriv(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    auto [y, dy] = forward_and_derivative(xv[i]);
    out[i] = y;
    deriv[i] = dy;
  }
  const NodeId xi = x.id;
  return g.record(std::move(out), {xi}, [xi, deriv = std::move(deriv)](Graph& gr, NodeId self) {
    if (!gr.requires_grad(xi)) return;
    const Tensor& go = gr.grad(self);
    Tensor& gx = gr.grad_accumulator(xi);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * deriv[i];
  });
}

} // namespace

// ---- Graph ------------------------------------------------------------------

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(const Tensor& value, std::size_t slot) {
  for (const auto& n : nodes_) {
    if (n.slot == static_cast<long>(slot)) throw ShapeError("parameter slot bound twice");
  }
  Node n;
  n.external = &value;
  n.requires_grad = true;
  n.slot = static_cast<long>(slot);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (NodeId in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::value(NodeId id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

Tensor& Graph::grad_accumulator(NodeId id) {
  Tensor& g = grads_[id];
  if (g.empty() && !value(id).empty()) g = Tensor(value(id).rows(), value(id).cols());
  return g;
}

Gradients Graph::backward(Var loss) {
  if (loss.graph != this) throw ShapeError("backward: loss belongs to another graph");
  if (value(loss.id).size() != 1) throw ShapeError("backward: loss must be scalar, got " + value(loss.id).shape_string());
  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.id] = Tensor::scalar(1.0);
  for (NodeId id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || grads_[id].empty()) continue;
    n.backward(*this, id);
  }
  long max_slot = -1;
  for (const auto& n : nodes_) max_slot = std::max(max_slot, n.slot);
  Gradients out(static_cast<std::size_t>(max_slot + 1));
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.slot < 0) continue;
    const Tensor& v = value(id);
    out[n.slot] = grads_[id].empty() ? Tensor(v.rows(), v.cols()) : std::move(grads_[id]);
  }
  grads_.clear();
  return out;
}

// ---- linear algebra ----------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.rows(), "matmul", [&] { return shapes(av, bv); });
  Tensor out(av.rows(), bv.cols());
  gemm_acc(av, bv, out);
  const NodeId ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [ai, bi](Graph& gr, NodeId self) {
    const Tensor& go = gr.grad(self);
    if (gr.requires_grad(ai)) gemm_nt_acc(go, gr.value(bi), gr.grad_accumulator(ai));
    if (gr.requires_grad(bi)) gemm_tn_acc(gr.value(ai), go, gr.grad_accumulator(bi));
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.cols(), "matmul_nt", [&] { return shapes(av, bv); });
  Tensor out(av.rows(), bv.rows());
  gemm_nt_acc(av, bv, out);
  const NodeId ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [ai, bi](Graph& gr, NodeId self) {
    const Tensor& go = gr.grad(self);
    if (gr.requires_grad(ai)) gemm_acc(go, gr.value(bi), gr.grad_accumulator(ai));
    if (gr.requires_grad(bi)) gemm_tn_acc(go, gr.value(ai), gr.grad_accumulator(bi));
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  Tensor out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  const NodeId ai = a.id;
  return g.record(std::move(out), {ai}, [ai](Graph& gr, NodeId self) {
    if (!gr.requires_grad(ai)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad_accumulator(ai);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += go(j, i);
  });
}

namespace {

Var binary_same_shape(Var a, Var b, const char* op, double sign_b, bool product) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.same_shape(bv), op, [&] { return shapes(av, bv); });
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = product ? av[i] * bv[i] : av[i] + sign_b * bv[i];
  const NodeId ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [ai, bi, sign_b, product](Graph& gr, NodeId self) {
    const Tensor& go = gr.grad(self);
    if (gr.requires_grad(ai)) {
      Tensor& ga = gr.grad_accumulator(ai);
      const Tensor& bv2 = gr.value(bi);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += product ? go[i] * bv2[i] : go[i];
    }
    if (gr.requires_grad(bi)) {
      Tensor& gb = gr.grad_accumulator(bi);
      const Tensor& av2 = gr.value(ai);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += product ? go[i] * av2[i] : sign_b * go[i];
    }
  });
}

} // namespace

Var add(Var a, Var b) { return binary_same_shape(a, b, "add", 1.0, false); }
Var sub(Var a, Var b) { return binary_same_shape(a, b, "sub", -1.0, false); }
Var hadamard(Var a, Var b) { return binary_same_shape(a, b, "hadamard", 1.0, true); }

Var add_row(Var a, Var row) {
  Graph& g = graph_of(a, row);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  require(rv.rows() == 1 && rv.cols() == av.cols(), "add_row", [&] { return shapes(av, rv); });
  Tensor out = av;
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) += rv[j];
  const NodeId ai = a.id, ri = row.id;
  return g.record(std::move(out), {ai, ri}, [ai, ri](Graph& gr, NodeId self) {
    const Tensor& go = gr.grad(self);
    if (gr.requires_grad(ai)) {
      Tensor& ga = gr.grad_accumulator(ai);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (gr.requires_grad(ri)) {
      Tensor& gb = gr.grad_accumulator(ri);
      for (std::size_t i = 0; i < go.rows(); ++i)
        for (std::size_t j = 0; j < go.cols(); ++j) gb[j] += go(i, j);
    }
  });
}

Var affine(Var a, double factor, double shift) {
  return unary_elementwise(a, [=](double x) { return std::pair{factor * x + shift, factor}; });
}

Var scale(Var a, double factor) { return affine(a, factor, 0.0); }

// ---- structural ---------------------------------------------------------------

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Graph& g = graph_of(parts[0]);
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<NodeId> ids;
  for (Var p : parts) {
    graph_of(parts[0], p);
    require(p.cols() == cols, "concat_rows", [&] { return "column mismatch " + p.value().shape_string(); });
    rows += p.rows();
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + offset);
    offset += p.value().size();
  }
  return g.record(std::move(out), ids, [ids](Graph& gr, NodeId self) {
    const Tensor& go = gr.grad(self);
    std::size_t off = 0;
    for (NodeId id : ids) {
      const std::size_t n = gr.value(id).size();
      if (gr.requires_grad(id) && n > 0) {
        Tensor& gi = gr.grad_accumulator(id);
        for (std::size_t i = 0; i < n; ++i) gi[i] += go[off + i];
      }
      off += n;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  require(begin + count <= av.rows(), "slice_rows", [&] { return "range exceeds " + av.shape_string(); });
  const std::size_t c = av.cols();
  Tensor out(count, c,
             std::vector<double>(av.data().begin() + begin * c, av.data().begin() + (begin + count) * c));
  const NodeId ai = a.id;
  return g.record(std::move(out), {ai}, [ai, begin, c](Graph& gr, NodeId self) {
    if (!gr.requires_grad(ai)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad_accumulator(ai);
    for (std::size_t i = 0; i < go.size(); ++i) ga[begin * c + i] += go[i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Graph& g = graph_of(parts[0]);
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<NodeId> ids;
  for (Var p : parts) {
    graph_of(parts[0], p);
    require(p.rows() == rows, "concat_cols", [&] { return "row mismatch " + p.value().shape_string(); });
    cols += p.cols();
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, offset + j) = pv(i, j);
    offset += pv.cols();
  }
  return g.record(std::move(out), ids, [ids](Graph& gr, NodeId self) {
    const Tensor& go = gr.grad(self);
    std::size_t off = 0;
    for (NodeId id : ids) {
      const std::size_t w = gr.value(id).cols();
      if (gr.requires_grad(id) && gr.value(id).size() > 0) {
        Tensor& gi = gr.grad_accumulator(id);
        for (std::size_t i = 0; i < go.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) gi(i, j) += go(i, off + j);
      }
      off += w;
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  require(begin + count <= av.cols(), "slice_cols", [&] { return "range exceeds " + av.shape_string(); });
  Tensor out(av.rows(), count);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, begin + j);
  const NodeId ai = a.id;
  return g.record(std::move(out), {ai}, [ai, begin](Graph& gr, NodeId self) {
    if (!gr.requires_grad(ai)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad_accumulator(ai);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) ga(i, begin + j) += go(i, j);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const std::size_t c = av.cols();
  Tensor out(indices.size(), c);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] < av.rows(), "gather_rows", [&] { return "index out of range for " + av.shape_string(); });
    std::copy_n(av.row(indices[r]).begin(), c, out.row(r).begin());
  }
  const NodeId ai = a.id;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return g.record(std::move(out), {ai}, [ai, idx = std::move(idx)](Graph& gr, NodeId self) {
    if (!gr.requires_grad(ai)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad_accumulator(ai);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < go.cols(); ++j) ga(idx[r], j) += go(r, j);
  });
}

// ---- nonlinearities ---------------------------------------------------------

Var softmax_rows(Var x, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("softmax_rows: temperature must be > 0");
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    auto in = xv.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp((in[j] - mx) / temperature);
      total += o[j];
    }
    for (double& v : o) v /= total;
  }
  const NodeId xi = x.id;
  return g.record(std::move(out), {xi}, [xi, temperature](Graph& gr, NodeId self) {
    if (!gr.requires_grad(xi)) return;
    const Tensor& go = gr.grad(self);
    const Tensor& y = gr.value(self);
    Tensor& gx = gr.grad_accumulator(xi);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += go(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) gx(i, j) += y(i, j) * (go(i, j) - dot) / temperature;
    }
  });
}

Var log_softmax_rows(Var x, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("log_softmax_rows: temperature must be > 0");
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    auto in = xv.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (double v : in) total += std::exp((v - mx) / temperature);
    const double lse = std::log(total);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = (in[j] - mx) / temperature - lse;
  }
  const NodeId xi = x.id;
  return g.record(std::move(out), {xi}, [xi, temperature](Graph& gr, NodeId self) {
    if (!gr.requires_grad(xi)) return;
    const Tensor& go = gr.grad(self);
    const Tensor& y = gr.value(self);
    Tensor& gx = gr.grad_accumulator(xi);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) gsum += go(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j)
        gx(i, j) += (go(i, j) - std::exp(y(i, j)) * gsum) / temperature;
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  if (!(eps > 0.0)) throw ValidationError("layer_norm: eps must be > 0");
  Graph& g = graph_of(x, gamma);
  graph_of(x, beta);
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  require(gamma.rows() == 1 && gamma.cols() == c, "layer_norm", [&] { return "gamma " + shapes(gamma.value(), xv); });
  require(beta.rows() == 1 && beta.cols() == c, "layer_norm", [&] { return "beta " + shapes(beta.value(), xv); });
  Tensor normalized(n, c);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto in = xv.row(i);
    double mu = 0.0;
    for (double v : in) mu += v;
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (double v : in) var += (v - mu) * (v - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) normalized(i, j) = (in[j] - mu) * inv_std[i];
  }
  Tensor out(n, c);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = normalized(i, j) * gv[j] + bv[j];
  const NodeId xi = x.id, gi = gamma.id, bi = beta.id;
  return g.record(std::move(out), {xi, gi, bi},
                  [xi, gi, bi, normalized = std::move(normalized), inv_std = std::move(inv_std)](Graph& gr, NodeId self) {
                    const Tensor& go = gr.grad(self);
                    const std::size_t rows = go.rows(), cols = go.cols();
                    if (gr.requires_grad(gi)) {
                      Tensor& gg = gr.grad_accumulator(gi);
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j) gg[j] += go(i, j) * normalized(i, j);
                    }
                    if (gr.requires_grad(bi)) {
                      Tensor& gb = gr.grad_accumulator(bi);
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j) gb[j] += go(i, j);
                    }
                    if (gr.requires_grad(xi)) {
                      const Tensor& gamma_v = gr.value(gi);
                      Tensor& gx = gr.grad_accumulator(xi);
                      std::vector<double> dxhat(cols);
                      for (std::size_t i = 0; i < rows; ++i) {
                        double mean_d = 0.0, mean_dx = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) {
                          dxhat[j] = go(i, j) * gamma_v[j];
                          mean_d += dxhat[j];
                          mean_dx += dxhat[j] * normalized(i, j);
                        }
                        mean_d /= static_cast<double>(cols);
                        mean_dx /= static_cast<double>(cols);
                        for (std::size_t j = 0; j < cols; ++j)
                          gx(i, j) += inv_std[i] * (dxhat[j] - mean_d - normalized(i, j) * mean_dx);
                      }
                    }
                  });
}

Var gelu(Var x) {
  return unary_elementwise(x, [](double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
    return std::pair{v * cdf, cdf + v * pdf};
  });
}

Var sigmoid(Var x) {
  return unary_elementwise(x, [](double v) {
    const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return std::pair{y, y * (1.0 - y)};
  });
}

Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
  }
  return unary_elementwise(x, [](double v) { return std::pair{std::log(v), 1.0 / v}; });
}

Var clamp(Var x, double lo, double hi) {
  if (lo > hi) throw ValidationError("clamp: lo > hi");
  return unary_elementwise(x, [=](double v) {
    if (v < lo) return std::pair{lo, 0.0};
    if (v > hi) return std::pair{hi, 0.0};
    return std::pair{v, 1.0};
  });
}

Var pow(Var x, double exponent) {
  for (double v : x.value().data()) {
    if (v < 0.0) throw NumericError("pow of negative value");
  }
  return unary_elementwise(x, [=](double v) {
    const double d = exponent == 0.0 ? 0.0 : exponent * std::pow(v, exponent - 1.0);
    return std::pair{std::pow(v, exponent), d};
  });
}

Var l2_normalize_rows(Var x, double eps) {
  if (!(eps > 0.0)) throw ValidationError("l2_normalize_rows: eps must be > 0");
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  std::vector<double> denom(xv.rows());
  std::vector<bool> clipped(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double sq = 0.0;
    for (double v : xv.row(i)) sq += v * v;
    const double norm = std::sqrt(sq);
    clipped[i] = norm <= eps;
    denom[i] = clipped[i] ? eps : norm;
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) = xv(i, j) / denom[i];
  }
  const NodeId xi = x.id;
  return g.record(std::move(out), {xi},
                  [xi, denom = std::move(denom), clipped = std::move(clipped)](Graph& gr, NodeId self) {
                    if (!gr.requires_grad(xi)) return;
                    const Tensor& go = gr.grad(self);
                    const Tensor& y = gr.value(self);
                    Tensor& gx = gr.grad_accumulator(xi);
                    for (std::size_t i = 0; i < y.rows(); ++i) {
                      double dot = 0.0;
                      if (!clipped[i]) {
                        for (std::size_t j = 0; j < y.cols(); ++j) dot += go(i, j) * y(i, j);
                      }
                      for (std::size_t j = 0; j < y.cols(); ++j)
                        gx(i, j) += (go(i, j) - y(i, j) * dot) / denom[i];
                    }
                  });
}

Var row_dot(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.same_shape(bv), "row_dot", [&] { return shapes(av, bv); });
  Tensor out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) s += av(i, j) * bv(i, j);
    out[i] = s;
  }
  const NodeId ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [ai, bi](Graph& gr, NodeId self) {
    const Tensor& go = gr.grad(self);
    const Tensor& av2 = gr.value(ai);
    const Tensor& bv2 = gr.value(bi);
    if (gr.requires_grad(ai)) {
      Tensor& ga = gr.grad_accumulator(ai);
      for (std::size_t i = 0; i < av2.rows(); ++i)
        for (std::size_t j = 0; j < av2.cols(); ++j) ga(i, j) += go[i] * bv2(i, j);
    }
    if (gr.requires_grad(bi)) {
      Tensor& gb = gr.grad_accumulator(bi);
      for (std::size_t i = 0; i < av2.rows(); ++i)
        for (std::size_t j = 0; j < av2.cols(); ++j) gb(i, j) += go[i] * av2(i, j);
    }
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const NodeId ai = a.id;
  return g.record(Tensor::scalar(s), {ai}, [ai](Graph& gr, NodeId self) {
    if (!gr.requires_grad(ai)) return;
    const double go = gr.grad(self)[0];
    Tensor& ga = gr.grad_accumulator(ai);
    for (double& v : ga.data()) v += go;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var gelu_mlp(Var x, Var w1, Var b1, Var w2, Var b2) {
  return add_row(matmul(gelu(add_row(matmul(x, w1), b1)), w2), b2);
}

Var multi_head_attention(Var queries, Var keys, Var values, const AttentionWeights& w, std::size_t heads,
                         Tensor* mean_weights) {
  const std::size_t D = w.wq.cols();
  if (heads == 0 || D % heads != 0) {
    throw ShapeError("multi_head_attention: width " + std::to_string(D) + " is not divisible by " +
                     std::to_string(heads) + " heads");
  }
  require(keys.rows() > 0, "multi_head_attention", "no keys");
  require(keys.rows() == values.rows(), "multi_head_attention", "key/value row counts differ");
  const Var q = add_row(matmul(queries, w.wq), w.bq);
  const Var k = matmul(keys, w.wk);
  const Var v = add_row(matmul(values, w.wv), w.bv);
  const std::size_t dh = D / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  if (mean_weights) *mean_weights = Tensor(q.rows(), k.rows());
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    const Var kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
    const Var vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
    const Var a = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
    if (mean_weights) {
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < av.size(); ++i) (*mean_weights)[i] += av[i] / static_cast<double>(heads);
    }
    outs.push_back(matmul(a, vh));
  }
  const Var merged = heads == 1 ? outs[0] : concat_cols(outs);
  return add_row(matmul(merged, w.wo), w.bo);
}

// ---- gradient verification ----------------------------------------------------

GradCheckReport compare_gradients(const ScalarFunction& f, const std::vector<Tensor>& params,
                                  const std::vector<Tensor>& analytic, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ValidationError("finite difference eps must be in (0, 1e-2]");
  if (analytic.size() != params.size()) throw ShapeError("analytic gradient count mismatch");
  GradCheckReport report;
  std::vector<Tensor> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!analytic[p].same_shape(params[p])) throw ShapeError("analytic gradient shape mismatch");
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double original = params[p][i];
      probe[p][i] = original + eps;
      const double plus = f(probe);
      probe[p][i] = original - eps;
      const double minus = f(probe);
      probe[p][i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) throw NumericError("finite_diff_check: non-finite f");
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[p][i];
      const double diff = std::abs(a - numeric);
      const double rel = diff / std::max(1e-8, std::abs(a) + std::abs(numeric));
      report.max_abs_error = std::max(report.max_abs_error, diff);
      if (rel > report.max_relative_error || (p == 0 && i == 0)) {
        report.max_relative_error = rel;
        report.param_index = p;
        report.element = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

GradCheckReport finite_diff_check(const ScalarBuilder& f, const std::vector<Tensor>& params, double eps) {
  auto evaluate = [&](const std::vector<Tensor>& ps, Gradients* grads) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) vars.push_back(g.parameter(ps[i], i));
    Var out = f(g, vars);
    const double v = out.value().item();
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite f");
    if (grads) *grads = g.backward(out);
    return v;
  };
  Gradients analytic;
  evaluate(params, &analytic);
  analytic.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (analytic[i].empty()) analytic[i] = Tensor(params[i].rows(), params[i].cols());
  }
  return compare_gradients([&](const std::vector<Tensor>& ps) { return evaluate(ps, nullptr); }, params, analytic,
                           eps);
}

} // namespace teaser::ad
