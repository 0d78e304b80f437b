#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "teaser/autodiff.hpp"
#include "teaser/embedding.hpp"
#include "teaser/tensor.hpp"

namespace teaser {

struct ModelConfig {
  std::size_t D = 32;
  std::size_t K = 8;   // visual queries
  std::size_t M = 6;   // common topic queries
  std::size_t J = 3;   // rare topic queries
  std::size_t L_a = 2; // abstractor layers
  std::size_t L = 2;   // topic encoder layers
  std::size_t heads = 4;
  std::uint64_t seed = 0;
  std::size_t mlp_ratio = 4;
  // false: the topic encoder cross-attends to the raw visual rows.
  bool use_abstractor = true;
  bool abstractor_self_attention = true;
  // Adds fixed sinusoidal encodings to visual rows and query banks.
  bool positional_encoding = false;

  // Throws ValidationError on a bad combination.
  void validate() const;
  std::size_t queries() const { return M + J; }
  bool operator==(const ModelConfig&) const = default;
};

// Named parameter tensors in a fixed order. The order is part of the
// checkpoint layout and of the gradient slot numbering.
class ModelParams {
 public:
  ModelParams() = default;

  std::size_t add(const std::string& name, Tensor value);
  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  std::size_t scalar_count() const;
  bool all_finite() const;

  bool operator==(const ModelParams& o) const { return names_ == o.names_ && tensors_ == o.tensors_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

// Weights and query banks ~ N(0, 0.02), LayerNorm gains 1, biases 0. Deterministic in config.seed.
ModelParams init_params(const ModelConfig& config);

// Throws ShapeError when a tensor is missing or has the wrong shape.
void check_params(const ModelConfig& config, const ModelParams& params);

struct TopicEmbeddings {
  Tensor common;  // M x D
  Tensor rare;    // J x D
  std::vector<double> p;  // M + J selection probabilities
};

// Graph-level forward pass. Parameters are bound to slots equal to their
// index in ModelParams.
struct ForwardVars {
  ad::Var topics;  // (M + J) x D, common rows first
  ad::Var logits;  // (M + J) x 1
  ad::Var probs;   // sigmoid(logits)
  // Head-averaged cross-attention weights of each layer (queries x keys),
  // abstractor layers first. Empty for layers that skip cross-attention.
  std::vector<Tensor> cross_attention;
};

std::vector<ad::Var> bind_params(ad::Graph& graph, const ModelParams& params);

struct ParamSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

// Names and shapes of every parameter, in storage order.
std::vector<ParamSpec> param_layout(const ModelConfig& config);

ForwardVars model_forward(ad::Graph& graph, const ModelConfig& config, std::span<const ad::Var> params,
                          ad::Var visual);
// Pieces of model_forward, exposed for the value-level helpers and tests.
ad::Var abstractor_vars(ad::Graph& graph, const ModelConfig& config, std::span<const ad::Var> params,
                        ad::Var visual, std::vector<Tensor>* attention = nullptr);
ForwardVars tse_vars(ad::Graph& graph, const ModelConfig& config, std::span<const ad::Var> params,
                     ad::Var memory);

// Value-level helpers built on the graph forward.
// K x D, or the raw rows of V when the abstractor is disabled.
Tensor abstractor_forward(const ModelConfig& config, const ModelParams& params, const EmbeddingMatrix& V);
// A may have zero rows, in which case cross-attention is skipped.
TopicEmbeddings tse_forward(const ModelConfig& config, const ModelParams& params, const Tensor& A);
TopicEmbeddings encode(const ModelConfig& config, const ModelParams& params, const EmbeddingMatrix& V);

} // namespace teaser
