#include "teaser/model.hpp"

#include <cmath>
#include <numeric>

#include "teaser/errors.hpp"
#include "teaser/rng.hpp"

namespace teaser {

using ad::Var;

void ModelConfig::validate() const {
  if (D == 0) throw ValidationError("model: D must be positive");
  if (heads == 0 || D % heads != 0) {
    throw ValidationError("model: D=" + std::to_string(D) + " is not divisible by heads=" + std::to_string(heads));
  }
  if (M < 1) throw ValidationError("model: M must be >= 1");
  if (L < 1) throw ValidationError("model: L must be >= 1");
  if (mlp_ratio < 1) throw ValidationError("model: mlp_ratio must be >= 1");
}

std::size_t ModelParams::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ValidationError("duplicate parameter " + name);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

std::size_t ModelParams::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("missing parameter tensor \"" + name + "\"");
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const { return tensors_[index_of(name)]; }
Tensor& ModelParams::at(const std::string& name) { return tensors_[index_of(name)]; }

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors_)
    if (!t.all_finite()) return false;
  return true;
}

namespace {

void add_attention_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t D) {
  // No key bias: it shifts every score of a query equally, so softmax
  // ignores it and its gradient is identically zero.
  for (const char* w : {"q", "k", "v", "o"}) {
    out.push_back({prefix + ".w" + w, D, D});
    if (w[0] != 'k') out.push_back({prefix + ".b" + w, 1, D});
  }
}

void add_ln_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t D) {
  out.push_back({prefix + ".g", 1, D});
  out.push_back({prefix + ".b", 1, D});
}

void add_mlp_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in, std::size_t hidden,
                   std::size_t outd) {
  out.push_back({prefix + ".w1", in, hidden});
  out.push_back({prefix + ".b1", 1, hidden});
  out.push_back({prefix + ".w2", hidden, outd});
  out.push_back({prefix + ".b2", 1, outd});
}

void add_layer_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t D, std::size_t hidden,
                     bool self_attention) {
  if (self_attention) {
    add_ln_specs(out, prefix + ".ln_sa", D);
    add_attention_specs(out, prefix + ".sa", D);
  }
  add_ln_specs(out, prefix + ".ln_ca", D);
  add_ln_specs(out, prefix + ".ln_mem", D);
  add_attention_specs(out, prefix + ".ca", D);
  add_ln_specs(out, prefix + ".ln_mlp", D);
  add_mlp_specs(out, prefix + ".mlp", D, hidden, D);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_ln_gain(const std::string& name) { return name.find(".ln_") != std::string::npos && ends_with(name, ".g"); }

bool is_ln(const std::string& name) { return name.find(".ln_") != std::string::npos || name.rfind("tse.final", 0) == 0; }

bool is_bias(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot != std::string::npos && name[dot + 1] == 'b' && name.size() > dot + 1;
}

} // namespace

std::vector<ParamSpec> param_layout(const ModelConfig& config) {
  config.validate();
  const std::size_t D = config.D, hidden = config.mlp_ratio * config.D;
  std::vector<ParamSpec> out;
  if (config.use_abstractor) out.push_back({"Q_v", config.K, D});
  out.push_back({"Q_c", config.M, D});
  out.push_back({"Q_r", config.J, D});
  if (config.use_abstractor) {
    for (std::size_t l = 0; l < config.L_a; ++l)
      add_layer_specs(out, "abs." + std::to_string(l), D, hidden, config.abstractor_self_attention);
  }
  add_mlp_specs(out, "tse.in", D, hidden, D);
  for (std::size_t l = 0; l < config.L; ++l) add_layer_specs(out, "tse." + std::to_string(l), D, hidden, true);
  out.push_back({"tse.final.g", 1, D});
  out.push_back({"tse.final.b", 1, D});
  add_mlp_specs(out, "head", D, D, 1);
  return out;
}

ModelParams init_params(const ModelConfig& config) {
  const auto layout = param_layout(config);
  Rng rng(config.seed);
  ModelParams params;
  for (const auto& spec : layout) {
    Tensor t(spec.rows, spec.cols);
    const bool gain = is_ln_gain(spec.name) || spec.name == "tse.final.g";
    if (gain) {
      for (auto& v : t.data()) v = 1.0;
    } else if (!(is_bias(spec.name) || is_ln(spec.name))) {
      for (auto& v : t.data()) v = rng.normal(0.0, 0.02);
    }
    // Start from float32-representable values so checkpoints are exact.
    for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
    params.add(spec.name, std::move(t));
  }
  return params;
}

void check_params(const ModelConfig& config, const ModelParams& params) {
  const auto layout = param_layout(config);
  if (params.size() != layout.size()) {
    throw ShapeError("parameter count " + std::to_string(params.size()) + " does not match config (" +
                     std::to_string(layout.size()) + ")");
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params.name(i) != layout[i].name) throw ShapeError("parameter " + std::to_string(i) + " should be \"" + layout[i].name + "\", found \"" + params.name(i) + "\"");
    const Tensor& t = params[i];
    if (t.rows() != layout[i].rows || t.cols() != layout[i].cols) {
      throw ShapeError("parameter \"" + layout[i].name + "\" has shape " + t.shape_string());
    }
  }
}

// ---- forward --------------------------------------------------------------

namespace {

class Lookup {
 public:
  Lookup(const ModelConfig& config, std::span<const Var> vars) : vars_(vars) {
    const auto layout = param_layout(config);
    if (layout.size() != vars.size()) {
      throw ShapeError("forward: expected " + std::to_string(layout.size()) + " parameter variables, got " +
                       std::to_string(vars.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) index_[layout[i].name] = i;
  }
  Var operator()(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("forward: no parameter \"" + name + "\"");
    return vars_[it->second];
  }

 private:
  std::span<const Var> vars_;
  std::map<std::string, std::size_t> index_;
};

Var ln(const Lookup& p, const std::string& prefix, Var x) { return ad::layer_norm(x, p(prefix + ".g"), p(prefix + ".b")); }

Var mlp(const Lookup& p, const std::string& prefix, Var x) {
  return ad::gelu_mlp(x, p(prefix + ".w1"), p(prefix + ".b1"), p(prefix + ".w2"), p(prefix + ".b2"));
}

Var attention(const Lookup& p, const std::string& prefix, Var queries, Var keys, std::size_t heads,
              Tensor* weights_out) {
  const ad::AttentionWeights w{p(prefix + ".wq"), p(prefix + ".bq"), p(prefix + ".wk"),
                               p(prefix + ".wv"), p(prefix + ".bv"), p(prefix + ".wo"), p(prefix + ".bo")};
  return ad::multi_head_attention(queries, keys, keys, w, heads, weights_out);
}

// Pre-LN decoder layer shared by the abstractor and the topic encoder.
Var decoder_layer(const Lookup& p, const std::string& prefix, Var h, Var memory, std::size_t heads,
                  bool self_attention, Tensor* cross_weights) {
  if (self_attention) {
    const Var x = ln(p, prefix + ".ln_sa", h);
    h = ad::add(attention(p, prefix + ".sa", x, x, heads, nullptr), h);
  }
  if (memory.rows() > 0) {
    const Var x = ln(p, prefix + ".ln_ca", h);
    const Var m = ln(p, prefix + ".ln_mem", memory);
    h = ad::add(attention(p, prefix + ".ca", x, m, heads, cross_weights), h);
  } else if (cross_weights) {
    *cross_weights = Tensor();
  }
  return ad::add(mlp(p, prefix + ".mlp", ln(p, prefix + ".ln_mlp", h)), h);
}

Tensor sinusoidal(std::size_t rows, std::size_t cols) {
  Tensor pe(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(cols));
      pe(i, j) = (j % 2 == 0) ? std::sin(static_cast<double>(i) * freq) : std::cos(static_cast<double>(i) * freq);
    }
  }
  return pe;
}

Var with_positions(ad::Graph& g, const ModelConfig& config, Var x) {
  if (!config.positional_encoding || x.rows() == 0) return x;
  return ad::add(x, g.constant(sinusoidal(x.rows(), x.cols())));
}

} // namespace

std::vector<Var> bind_params(ad::Graph& graph, const ModelParams& params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(graph.parameter(params[i], i));
  return vars;
}

Var abstractor_vars(ad::Graph& graph, const ModelConfig& config, std::span<const Var> params, Var visual,
                    std::vector<Tensor>* attention_out) {
  if (visual.cols() != config.D) {
    throw ShapeError("abstractor: visual features have " + std::to_string(visual.cols()) + " columns, model D=" +
                     std::to_string(config.D));
  }
  visual = with_positions(graph, config, visual);
  if (!config.use_abstractor) return visual;
  const Lookup p(config, params);
  Var h = p("Q_v");
  if (config.K == 0) return h;
  for (std::size_t l = 0; l < config.L_a; ++l) {
    Tensor weights;
    h = decoder_layer(p, "abs." + std::to_string(l), h, visual, config.heads, config.abstractor_self_attention,
                      attention_out ? &weights : nullptr);
    if (attention_out) attention_out->push_back(std::move(weights));
  }
  return h;
}

ForwardVars tse_vars(ad::Graph& graph, const ModelConfig& config, std::span<const Var> params, Var memory) {
  if (memory.rows() > 0 && memory.cols() != config.D) {
    throw ShapeError("topic encoder: memory has " + std::to_string(memory.cols()) + " columns, model D=" +
                     std::to_string(config.D));
  }
  const Lookup p(config, params);
  Var queries = p("Q_c");
  if (config.J > 0) {
    const Var parts[] = {queries, p("Q_r")};
    queries = ad::concat_rows(parts);
  }
  ForwardVars out;
  Var h = mlp(p, "tse.in", queries);
  for (std::size_t l = 0; l < config.L; ++l) {
    Tensor weights;
    h = decoder_layer(p, "tse." + std::to_string(l), h, memory, config.heads, true, &weights);
    out.cross_attention.push_back(std::move(weights));
  }
  (void)graph;
  out.topics = ad::layer_norm(h, p("tse.final.g"), p("tse.final.b"));
  out.logits = ad::gelu_mlp(out.topics, p("head.w1"), p("head.b1"), p("head.w2"), p("head.b2"));
  out.probs = ad::sigmoid(out.logits);
  return out;
}

ForwardVars model_forward(ad::Graph& graph, const ModelConfig& config, std::span<const Var> params, Var visual) {
  std::vector<Tensor> abstractor_attention;
  const Var memory = abstractor_vars(graph, config, params, visual, &abstractor_attention);
  ForwardVars out = tse_vars(graph, config, params, memory);
  abstractor_attention.insert(abstractor_attention.end(), std::make_move_iterator(out.cross_attention.begin()),
                              std::make_move_iterator(out.cross_attention.end()));
  out.cross_attention = std::move(abstractor_attention);
  return out;
}

namespace {

TopicEmbeddings to_topics(const ModelConfig& config, const ForwardVars& f) {
  const Tensor& t = f.topics.value();
  TopicEmbeddings out;
  out.common = Tensor(config.M, config.D);
  out.rare = Tensor(config.J, config.D);
  for (std::size_t i = 0; i < config.M; ++i)
    for (std::size_t j = 0; j < config.D; ++j) out.common(i, j) = t(i, j);
  for (std::size_t i = 0; i < config.J; ++i)
    for (std::size_t j = 0; j < config.D; ++j) out.rare(i, j) = t(config.M + i, j);
  out.p = f.probs.value().data();
  return out;
}

} // namespace

Tensor abstractor_forward(const ModelConfig& config, const ModelParams& params, const EmbeddingMatrix& V) {
  check_params(config, params);
  ad::Graph g;
  const auto vars = bind_params(g, params);
  return abstractor_vars(g, config, vars, g.constant(Tensor::from_embeddings(V))).value();
}

TopicEmbeddings tse_forward(const ModelConfig& config, const ModelParams& params, const Tensor& A) {
  check_params(config, params);
  ad::Graph g;
  const auto vars = bind_params(g, params);
  return to_topics(config, tse_vars(g, config, vars, g.constant(A)));
}

TopicEmbeddings encode(const ModelConfig& config, const ModelParams& params, const EmbeddingMatrix& V) {
  check_params(config, params);
  ad::Graph g;
  const auto vars = bind_params(g, params);
  return to_topics(config, model_forward(g, config, vars, g.constant(Tensor::from_embeddings(V))));
}

} // namespace teaser
