#pragma once

// Deterministic toy model zoo: a plain MLP and a single-block transformer,
// both assembled from the graph ops so the trainer can differentiate through
// any parameter substitution (latent, soft-quantized, or effective weights).
//
// Quantizable tensors are exactly the linear-map weights; biases, embeddings
// and normalization gains stay in full precision.

#include <memory>
#include <optional>
#include <string>

#include "hestia/autodiff.hpp"
#include "hestia/ops.hpp"
#include "hestia/random.hpp"

namespace hestia::model {

struct ParamSpec {
  std::string name;
  ad::Shape shape;
  bool quantizable = false;
};

// One batch of any task. Regression fills inputs/targets, classification
// fills inputs/labels, sequence tasks fill tokens (rows x seq_len).
struct Batch {
  std::size_t rows = 0;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t seq_len = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
  std::vector<int> labels;
  std::vector<int> tokens;
};

class Model {
 public:
  virtual ~Model() = default;
  virtual const std::vector<ParamSpec>& params() const = 0;
  virtual const std::vector<std::vector<double>>& initial_values() const = 0;
  virtual ad::Tensor loss(const std::vector<ad::Tensor>& params, const Batch& batch) const = 0;
  virtual std::optional<double> accuracy(const std::vector<ad::Tensor>& params,
                                         const Batch& batch) const {
    (void)params;
    (void)batch;
    return std::nullopt;
  }

  std::vector<std::size_t> quantizable_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < params().size(); ++i)
      if (params()[i].quantizable) out.push_back(i);
    return out;
  }
};

struct MlpSpec {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims = {64, 64};
  std::size_t output_dim = 1;
  std::string nonlinearity = "gelu";  // or "relu"
  std::uint64_t seed = 0;

  void validate() const {
    if (input_dim < 1 || output_dim < 1)
      throw std::invalid_argument("MlpSpec: dims must be >= 1");
    for (auto h : hidden_dims)
      if (h < 1) throw std::invalid_argument("MlpSpec: hidden dims must be >= 1");
    if (nonlinearity != "gelu" && nonlinearity != "relu")
      throw std::invalid_argument("MlpSpec: unknown nonlinearity '" + nonlinearity + "'");
  }
};

struct TinyTransformerSpec {
  std::size_t vocab = 32;
  std::size_t dim = 32;
  std::size_t heads = 1;
  std::size_t layers = 1;
  std::size_t seq_len = 16;
  std::uint64_t seed = 0;

  void validate() const {
    if (vocab < 2) throw std::invalid_argument("TinyTransformerSpec: vocab must be >= 2");
    if (heads != 1 || layers != 1)
      throw std::invalid_argument("TinyTransformerSpec: this zoo builds 1 layer, 1 head");
    if (dim % heads != 0)
      throw std::invalid_argument("TinyTransformerSpec: dim not divisible by heads");
    if (seq_len < 2) throw std::invalid_argument("TinyTransformerSpec: seq_len must be >= 2");
  }
};

namespace detail {

// Scaled uniform fan-in init: U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
inline std::vector<double> fan_in_init(std::size_t fan_in, std::size_t count,
                                       std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng::uniform(count, seed, -bound, bound);
}

inline ad::Tensor apply_nonlinearity(const ad::Tensor& x, const std::string& kind) {
  return kind == "relu" ? ad::relu(x) : ad::gelu(x);
}

}  // namespace detail

class Mlp : public Model {
 public:
  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    std::vector<std::size_t> dims;
    dims.push_back(spec_.input_dim);
    for (auto h : spec_.hidden_dims) dims.push_back(h);
    dims.push_back(spec_.output_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const std::string base = "fc" + std::to_string(l);
      specs_.push_back({base + ".weight", {dims[l], dims[l + 1]}, true});
      values_.push_back(detail::fan_in_init(dims[l], dims[l] * dims[l + 1],
                                            rng::derive_seed(spec_.seed, "mlp.w", l)));
      specs_.push_back({base + ".bias", {1, dims[l + 1]}, false});
      values_.push_back(std::vector<double>(dims[l + 1], 0.0));
    }
  }

  const std::vector<ParamSpec>& params() const override { return specs_; }
  const std::vector<std::vector<double>>& initial_values() const override { return values_; }

  ad::Tensor forward(const std::vector<ad::Tensor>& p, const ad::Tensor& x) const {
    ad::Tensor h = x;
    const std::size_t layers = specs_.size() / 2;
    for (std::size_t l = 0; l < layers; ++l) {
      h = ad::add(ad::matmul(h, p[2 * l]), ad::col_broadcast(p[2 * l + 1], h.shape()[0]));
      if (l + 1 < layers) h = detail::apply_nonlinearity(h, spec_.nonlinearity);
    }
    return h;
  }

  ad::Tensor loss(const std::vector<ad::Tensor>& p, const Batch& batch) const override {
    ad::Tensor x = ad::Tensor::leaf({batch.rows, batch.in_dim}, batch.inputs);
    ad::Tensor pred = forward(p, x);
    if (!batch.labels.empty()) {
      std::vector<double> onehot(batch.rows * spec_.output_dim, 0.0);
      for (std::size_t i = 0; i < batch.rows; ++i)
        onehot[i * spec_.output_dim + static_cast<std::size_t>(batch.labels[i])] = 1.0;
      return ad::cross_entropy_loss(pred,
                                    ad::Tensor::leaf({batch.rows, spec_.output_dim}, onehot));
    }
    ad::Tensor y = ad::Tensor::leaf({batch.rows, batch.out_dim}, batch.targets);
    return ad::mse_loss(pred, y);
  }

  std::optional<double> accuracy(const std::vector<ad::Tensor>& p,
                                 const Batch& batch) const override {
    if (batch.labels.empty()) return std::nullopt;
    ad::Tensor x = ad::Tensor::leaf({batch.rows, batch.in_dim}, batch.inputs);
    ad::Tensor logits = forward(p, x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < batch.rows; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < spec_.output_dim; ++j)
        if (logits.at(i * spec_.output_dim + j) > logits.at(i * spec_.output_dim + best))
          best = j;
      if (static_cast<int>(best) == batch.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(batch.rows);
  }

  const MlpSpec& spec() const { return spec_; }

 private:
  MlpSpec spec_;
  std::vector<ParamSpec> specs_;
  std::vector<std::vector<double>> values_;
};

// One pre-norm transformer block with causal single-head attention, a GELU
// MLP at 4x width, learned positional embeddings, and a tied unembedding.
class TinyTransformer : public Model {
 public:
  explicit TinyTransformer(TinyTransformerSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const std::size_t v = spec_.vocab, d = spec_.dim, L = spec_.seq_len, h = 4 * d;
    auto push = [&](const std::string& name, ad::Shape shape, bool quant,
                    std::vector<double> init) {
      specs_.push_back({name, std::move(shape), quant});
      values_.push_back(std::move(init));
    };
    auto ds = [&](const char* tag) { return rng::derive_seed(spec_.seed, tag); };
    push("embed", {v, d}, false, rng::gaussian(v * d, ds("embed"), 0.0, 0.5));
    push("pos", {L, d}, false, rng::gaussian(L * d, ds("pos"), 0.0, 0.1));
    push("norm_attn", {1, d}, false, std::vector<double>(d, 1.0));
    push("q_proj", {d, d}, true, detail::fan_in_init(d, d * d, ds("q_proj")));
    push("k_proj", {d, d}, true, detail::fan_in_init(d, d * d, ds("k_proj")));
    push("v_proj", {d, d}, true, detail::fan_in_init(d, d * d, ds("v_proj")));
    push("o_proj", {d, d}, true, detail::fan_in_init(d, d * d, ds("o_proj")));
    push("norm_mlp", {1, d}, false, std::vector<double>(d, 1.0));
    push("mlp_up", {d, h}, true, detail::fan_in_init(d, d * h, ds("mlp_up")));
    push("mlp_down", {h, d}, true, detail::fan_in_init(h, h * d, ds("mlp_down")));
    push("norm_out", {1, d}, false, std::vector<double>(d, 1.0));

    // strictly-causal additive mask
    std::vector<double> mask(L * L, 0.0);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = i + 1; j < L; ++j) mask[i * L + j] = -1e9;
    mask_ = ad::Tensor::leaf({L, L}, std::move(mask));
  }

  const std::vector<ParamSpec>& params() const override { return specs_; }
  const std::vector<std::vector<double>>& initial_values() const override { return values_; }

  // Logits for one sequence: (seq_len x vocab).
  ad::Tensor sequence_logits(const std::vector<ad::Tensor>& p,
                             const std::vector<int>& tokens) const {
    const std::size_t v = spec_.vocab, d = spec_.dim, L = spec_.seq_len;
    std::vector<double> onehot(L * v, 0.0);
    for (std::size_t i = 0; i < L; ++i)
      onehot[i * v + static_cast<std::size_t>(tokens[i])] = 1.0;
    ad::Tensor ids = ad::Tensor::leaf({L, v}, std::move(onehot));

    const ad::Tensor& embed = p[0];
    ad::Tensor x = ad::add(ad::matmul(ids, embed), p[1]);

    ad::Tensor a_in = rms_norm(x, p[2]);
    ad::Tensor q = ad::matmul(a_in, p[3]);
    ad::Tensor k = ad::matmul(a_in, p[4]);
    ad::Tensor val = ad::matmul(a_in, p[5]);
    ad::Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k)),
                                  1.0 / std::sqrt(static_cast<double>(d)));
    ad::Tensor attn = ad::softmax_rows(ad::add(scores, mask_));
    ad::Tensor ctx = ad::matmul(ad::matmul(attn, val), p[6]);
    ad::Tensor h1 = ad::add(x, ctx);

    ad::Tensor m_in = rms_norm(h1, p[7]);
    ad::Tensor m_out = ad::matmul(ad::gelu(ad::matmul(m_in, p[8])), p[9]);
    ad::Tensor h2 = ad::add(h1, m_out);

    return ad::matmul(rms_norm(h2, p[10]), ad::transpose(embed));
  }

  ad::Tensor loss(const std::vector<ad::Tensor>& p, const Batch& batch) const override {
    const std::size_t v = spec_.vocab, L = spec_.seq_len;
    ad::Tensor total = ad::Tensor::scalar(0.0);
    for (std::size_t s = 0; s < batch.rows; ++s) {
      std::vector<int> seq(batch.tokens.begin() + static_cast<long>(s * L),
                           batch.tokens.begin() + static_cast<long>((s + 1) * L));
      ad::Tensor logits = sequence_logits(p, seq);
      // next-token targets; the final row carries no target and is masked out
      std::vector<double> onehot(L * v, 0.0);
      for (std::size_t i = 0; i + 1 < L; ++i)
        onehot[i * v + static_cast<std::size_t>(seq[i + 1])] = 1.0;
      total = ad::add(total,
                      ad::cross_entropy_loss(logits, ad::Tensor::leaf({L, v}, onehot)));
    }
    return ad::scale(total, 1.0 / static_cast<double>(batch.rows));
  }

  std::optional<double> accuracy(const std::vector<ad::Tensor>& p,
                                 const Batch& batch) const override {
    const std::size_t v = spec_.vocab, L = spec_.seq_len;
    std::size_t hits = 0, total = 0;
    for (std::size_t s = 0; s < batch.rows; ++s) {
      std::vector<int> seq(batch.tokens.begin() + static_cast<long>(s * L),
                           batch.tokens.begin() + static_cast<long>((s + 1) * L));
      ad::Tensor logits = sequence_logits(p, seq);
      for (std::size_t i = 0; i + 1 < L; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < v; ++j)
          if (logits.at(i * v + j) > logits.at(i * v + best)) best = j;
        hits += static_cast<int>(best) == seq[i + 1] ? 1u : 0u;
        ++total;
      }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
  }

  const TinyTransformerSpec& spec() const { return spec_; }

 private:
  static ad::Tensor rms_norm(const ad::Tensor& x, const ad::Tensor& gain) {
    const std::size_t rows = x.shape()[0], d = x.shape()[1];
    ad::Tensor ms = ad::scale(ad::row_sum(ad::square(x)), 1.0 / static_cast<double>(d));
    ad::Tensor inv = ad::sqrt(ad::add_const(ms, 1e-8));
    return ad::mul(ad::div(x, ad::row_broadcast(inv, d)), ad::col_broadcast(gain, rows));
  }

  TinyTransformerSpec spec_;
  std::vector<ParamSpec> specs_;
  std::vector<std::vector<double>> values_;
  ad::Tensor mask_;
};

inline std::unique_ptr<Model> build_model(const MlpSpec& spec) {
  return std::make_unique<Mlp>(spec);
}

inline std::unique_ptr<Model> build_model(const TinyTransformerSpec& spec) {
  return std::make_unique<TinyTransformer>(spec);
}

// Leaf tensors over a parameter value set; requires_grad marks all of them.
inline std::vector<ad::Tensor> as_leaves(const Model& model,
                                         const std::vector<std::vector<double>>& values,
                                         bool requires_grad) {
  std::vector<ad::Tensor> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out.push_back(ad::Tensor::leaf(model.params()[i].shape, values[i], requires_grad));
  return out;
}

}  // namespace hestia::model
