#pragma once

// Offline calibration: per-tensor Hessian-trace estimation with Hutch++,
// sigmoid score normalization, and the 1-D search for the initial
// temperature. Traces are estimated once on the full-precision model over a
// fixed calibration subset and then frozen to a JSON file the trainer reads.

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <string>

#include <json.hpp>

#include "hestia/data.hpp"
#include "hestia/models.hpp"
#include "hestia/quantizer.hpp"
#include "hestia/random.hpp"

namespace hestia::sens {

struct HutchConfig {
  std::size_t sketch_rank = 10;       // r
  std::size_t hutchinson_samples = 20;  // m
  std::uint64_t seed = 0;
  double kappa = 1.0;
  double epsilon = 1e-8;

  void validate() const {
    if (sketch_rank < 1) throw std::invalid_argument("HutchConfig: sketch_rank < 1");
    if (hutchinson_samples < 1) throw std::invalid_argument("HutchConfig: samples < 1");
  }
};

struct TensorSensitivity {
  std::string name;
  double raw_trace = 0.0;   // h_i after the positivity floor
  double score = 0.5;       // s_i in (0,1)
  bool clamped = false;     // true when the raw estimate hit the floor
  std::size_t dim = 0;      // parameter count, for the h/d diagnostic
};

struct SensitivityReport {
  std::vector<TensorSensitivity> tensors;
  double mu_h = 0.0;     // mean of log h
  double sigma_h = 0.0;  // population std of log h
  double kappa = 1.0;
  double epsilon = 1e-8;
  std::size_t clamp_count = 0;
  std::uint64_t dataset_fingerprint = 0;
  HutchConfig config;

  std::vector<double> scores() const {
    std::vector<double> out;
    out.reserve(tensors.size());
    for (const auto& t : tensors) out.push_back(t.score);
    return out;
  }
};

using MatVec = std::function<std::vector<double>(const std::vector<double>&)>;

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Project v onto the orthogonal complement of the columns of q (twice, for
// orthogonality at working precision).
inline void project_out(std::vector<double>& v, const std::vector<std::vector<double>>& q) {
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& col : q) {
      const double c = dot(col, v);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * col[i];
    }
}

// Column-pivoted modified Gram-Schmidt. Keeps columns while the pivot norm
// stays above 1e-10 of the largest pivot; dropped directions are covered by
// the residual probes.
inline std::vector<std::vector<double>> orthonormal_range(std::vector<std::vector<double>> cols) {
  std::vector<std::vector<double>> q;
  double max_pivot = 0.0;
  while (!cols.empty()) {
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double n = std::sqrt(dot(cols[j], cols[j]));
      if (n > best_norm) {
        best_norm = n;
        best = j;
      }
    }
    if (max_pivot == 0.0) max_pivot = best_norm;
    if (best_norm <= 1e-10 * max_pivot) break;
    std::vector<double> col = std::move(cols[best]);
    cols.erase(cols.begin() + static_cast<long>(best));
    project_out(col, q);
    const double n = std::sqrt(dot(col, col));
    if (n <= 1e-10 * max_pivot || n == 0.0) continue;
    for (auto& v : col) v /= n;
    q.push_back(std::move(col));
    for (auto& rest : cols) {
      const double c = dot(q.back(), rest);
      for (std::size_t i = 0; i < rest.size(); ++i) rest[i] -= c * q.back()[i];
    }
  }
  return q;
}

}  // namespace detail

// Hutch++ trace estimate: exact on the sketched range, Girard-Hutchinson on
// the orthogonal complement, averaged over the probes.
inline double hutchpp_trace(const MatVec& apply, std::size_t dim, const HutchConfig& cfg) {
  cfg.validate();
  if (dim < 1) throw std::invalid_argument("hutchpp_trace: dim < 1");
  const std::size_t r = std::min(cfg.sketch_rank, dim);

  std::vector<std::vector<double>> sketched(r);
  for (std::size_t j = 0; j < r; ++j)
    sketched[j] = apply(rng::rademacher(dim, rng::derive_seed(cfg.seed, "sketch", j)));
  std::vector<std::vector<double>> q = detail::orthonormal_range(std::move(sketched));

  double head = 0.0;
  for (const auto& col : q) head += detail::dot(col, apply(col));

  double residual = 0.0;
  for (std::size_t j = 0; j < cfg.hutchinson_samples; ++j) {
    std::vector<double> g = rng::rademacher(dim, rng::derive_seed(cfg.seed, "probe", j));
    detail::project_out(g, q);
    residual += detail::dot(g, apply(g));
  }
  residual /= static_cast<double>(cfg.hutchinson_samples);
  return head + residual;
}

// Callable v -> H_i v for quantizable tensor #tensor_index, where the loss is
// the mean over the calibration batches on the full-precision model. The
// forward and first-backward graphs are built once and reused per probe.
inline MatVec hvp_oracle(const model::Model& m,
                         const std::vector<std::vector<double>>& values,
                         const std::vector<model::Batch>& calibration_batches,
                         std::size_t tensor_index) {
  const auto quant_idx = m.quantizable_indices();
  if (tensor_index >= quant_idx.size())
    throw std::invalid_argument("hvp_oracle: tensor_index out of range");
  if (calibration_batches.empty())
    throw std::invalid_argument("hvp_oracle: no calibration batches");
  const std::size_t pi = quant_idx[tensor_index];

  std::vector<ad::Tensor> leaves;
  leaves.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    leaves.push_back(ad::Tensor::leaf(m.params()[i].shape, values[i], i == pi));

  ad::Tensor loss = ad::Tensor::scalar(0.0);
  for (const auto& batch : calibration_batches) loss = ad::add(loss, m.loss(leaves, batch));
  loss = ad::scale(loss, 1.0 / static_cast<double>(calibration_batches.size()));

  ad::Tensor param = leaves[pi];
  ad::Tensor g = ad::grad(loss, {param})[0];
  const ad::Shape shape = m.params()[pi].shape;

  return [g, param, shape](const std::vector<double>& v) {
    ad::Tensor vt = ad::Tensor::leaf(shape, v);
    if (!g.requires_grad()) return std::vector<double>(v.size(), 0.0);
    ad::Tensor hv = ad::grad(ad::sum(ad::mul(g, vt)), {param})[0];
    return hv.values();
  };
}

// Standardized sigmoid scores over log-traces. Traces are floored at 1e-12
// first (the loss Hessian need not be PSD); sigma is the population std so a
// single tensor degenerates to score 0.5.
inline std::vector<double> normalize_scores(const std::vector<double>& traces, double kappa,
                                            double epsilon, std::size_t* clamp_count = nullptr,
                                            std::vector<bool>* clamped = nullptr) {
  if (traces.empty()) throw std::invalid_argument("normalize_scores: empty trace list");
  constexpr double floor = 1e-12;
  std::vector<double> logs(traces.size());
  std::size_t clamps = 0;
  if (clamped) clamped->assign(traces.size(), false);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    double h = traces[i];
    if (h < floor) {
      h = floor;
      ++clamps;
      if (clamped) (*clamped)[i] = true;
    }
    logs[i] = std::log(h);
  }
  double mu = 0.0;
  for (double v : logs) mu += v;
  mu /= static_cast<double>(logs.size());
  double var = 0.0;
  for (double v : logs) var += (v - mu) * (v - mu);
  var /= static_cast<double>(logs.size());
  const double sigma = std::sqrt(var);

  std::vector<double> scores(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const double z = kappa * (logs[i] - mu) / (sigma + epsilon);
    scores[i] = 1.0 / (1.0 + std::exp(-z));
  }
  if (clamp_count) *clamp_count = clamps;
  return scores;
}

// argmin over tau of the total squared gap between the latent weights and
// their relaxed images, via golden-section search on log tau.
inline double init_temperature(const std::vector<ad::Tensor>& weights,
                               const std::vector<quant::GroupScales>& scales,
                               double tau_lo = 1e-3, double tau_hi = 10.0) {
  if (weights.empty()) throw std::invalid_argument("init_temperature: empty weight list");
  if (!(tau_lo > 0.0 && tau_lo < tau_hi))
    throw std::invalid_argument("init_temperature: bad search range");
  if (weights.size() != scales.size())
    throw std::invalid_argument("init_temperature: scales/weights mismatch");

  auto objective = [&](double tau) {
    double acc = 0.0;
    for (std::size_t t = 0; t < weights.size(); ++t) {
      const auto& w = weights[t];
      for (std::size_t i = 0; i < w.numel(); ++i) {
        const double gamma = scales[t].gamma[scales[t].group_of(i)];
        const double wi = w.at(i);
        const double soft = gamma * quant::soft_eval(wi / gamma, tau).mean;
        acc += (wi - soft) * (wi - soft);
      }
    }
    return acc;
  };

  constexpr double inv_phi = 0.6180339887498949;
  double a = std::log(tau_lo), b = std::log(tau_hi);
  double c = b - (b - a) * inv_phi;
  double d = a + (b - a) * inv_phi;
  double fc = objective(std::exp(c)), fd = objective(std::exp(d));
  for (int it = 0; it < 60; ++it) {
    // ties break toward the colder probe: the objective can plateau at an
    // exact 0 once the soft-hard gap falls below machine epsilon
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - (b - a) * inv_phi;
      fc = objective(std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + (b - a) * inv_phi;
      fd = objective(std::exp(d));
    }
  }
  return std::exp(0.5 * (a + b));
}

// Full calibration pass over a model: one Hutch++ estimate per quantizable
// tensor, each with a seed stream derived from (seed, tensor index).
inline SensitivityReport compute_sensitivity(const model::Model& m,
                                             const std::vector<std::vector<double>>& values,
                                             const std::vector<model::Batch>& calib,
                                             const HutchConfig& cfg,
                                             std::uint64_t dataset_fingerprint = 0) {
  cfg.validate();
  const auto quant_idx = m.quantizable_indices();
  if (quant_idx.empty()) throw std::invalid_argument("compute_sensitivity: nothing to score");

  std::vector<double> traces(quant_idx.size());
  for (std::size_t t = 0; t < quant_idx.size(); ++t) {
    MatVec oracle = hvp_oracle(m, values, calib, t);
    HutchConfig per_tensor = cfg;
    per_tensor.seed = rng::derive_seed(cfg.seed, "tensor", t);
    traces[t] = hutchpp_trace(oracle, ad::numel_of(m.params()[quant_idx[t]].shape), per_tensor);
  }

  SensitivityReport report;
  report.config = cfg;
  report.kappa = cfg.kappa;
  report.epsilon = cfg.epsilon;
  report.dataset_fingerprint = dataset_fingerprint;

  std::vector<bool> clamped;
  auto scores = normalize_scores(traces, cfg.kappa, cfg.epsilon, &report.clamp_count, &clamped);

  constexpr double floor = 1e-12;
  std::vector<double> logs(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) logs[i] = std::log(std::max(traces[i], floor));
  double mu = 0.0;
  for (double v : logs) mu += v;
  mu /= static_cast<double>(logs.size());
  double var = 0.0;
  for (double v : logs) var += (v - mu) * (v - mu);
  report.mu_h = mu;
  report.sigma_h = std::sqrt(var / static_cast<double>(logs.size()));

  for (std::size_t t = 0; t < quant_idx.size(); ++t) {
    TensorSensitivity ts;
    ts.name = m.params()[quant_idx[t]].name;
    ts.raw_trace = std::max(traces[t], floor);
    ts.score = scores[t];
    ts.clamped = clamped[t];
    ts.dim = ad::numel_of(m.params()[quant_idx[t]].shape);
    report.tensors.push_back(std::move(ts));
  }
  return report;
}

// --- calibration file (JSON) ------------------------------------------------

inline nlohmann::json to_json(const SensitivityReport& r) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& t : r.tensors) {
    tensors[t.name] = {{"h", t.raw_trace}, {"s", t.score}, {"clamped", t.clamped}};
    if (t.dim) {
      tensors[t.name]["dim"] = t.dim;
      // diagnostic only; scoring uses the raw trace per Eq.-13 standardization
      tensors[t.name]["h_per_param"] = t.raw_trace / static_cast<double>(t.dim);
    }
  }
  return nlohmann::json{
      {"tensors", tensors},
      {"tensor_count", r.tensors.size()},
      {"mu_h", r.mu_h},
      {"sigma_h", r.sigma_h},
      {"kappa", r.kappa},
      {"epsilon", r.epsilon},
      {"clamp_count", r.clamp_count},
      {"dataset_fingerprint", r.dataset_fingerprint},
      {"hutch", {{"sketch_rank", r.config.sketch_rank},
                 {"hutchinson_samples", r.config.hutchinson_samples},
                 {"noise", "rademacher"},
                 {"seed", r.config.seed}}},
  };
}

inline void save_calibration(const SensitivityReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_calibration: cannot open " + path);
  out << to_json(r).dump(2) << "\n";
}

inline SensitivityReport load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_calibration: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  SensitivityReport r;
  r.mu_h = j.at("mu_h").get<double>();
  r.sigma_h = j.at("sigma_h").get<double>();
  r.kappa = j.at("kappa").get<double>();
  r.epsilon = j.at("epsilon").get<double>();
  r.clamp_count = j.at("clamp_count").get<std::size_t>();
  r.dataset_fingerprint = j.at("dataset_fingerprint").get<std::uint64_t>();
  r.config.sketch_rank = j.at("hutch").at("sketch_rank").get<std::size_t>();
  r.config.hutchinson_samples = j.at("hutch").at("hutchinson_samples").get<std::size_t>();
  r.config.seed = j.at("hutch").at("seed").get<std::uint64_t>();
  r.config.kappa = r.kappa;
  r.config.epsilon = r.epsilon;
  // keys are sorted by nlohmann; stable for a fixed tensor set
  for (const auto& [name, entry] : j.at("tensors").items()) {
    TensorSensitivity t;
    t.name = name;
    t.raw_trace = entry.at("h").get<double>();
    t.score = entry.at("s").get<double>();
    t.clamped = entry.at("clamped").get<bool>();
    if (entry.contains("dim")) t.dim = entry.at("dim").get<std::size_t>();
    r.tensors.push_back(std::move(t));
  }
  return r;
}

// Scores aligned with a model's quantizable tensors, by name.
inline std::vector<double> scores_for_model(const SensitivityReport& r, const model::Model& m) {
  std::map<std::string, double> by_name;
  for (const auto& t : r.tensors) by_name[t.name] = t.score;
  std::vector<double> out;
  for (std::size_t i : m.quantizable_indices()) {
    auto it = by_name.find(m.params()[i].name);
    if (it == by_name.end())
      throw std::runtime_error("calibration file lacks tensor '" + m.params()[i].name + "'");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace hestia::sens
