#pragma once

// Ternary quantization over the codebook {-1, 0, +1}.
//
// Three views of the same mapping live here: the hard quantizer
// gamma * clip(round(w/gamma), -1, +1), its straight-through surrogate, and
// the temperature-controlled softmax relaxation whose expectation smoothly
// approaches the hard quantizer as tau -> 0+. The closed-form Jacobian of the
// relaxation is (2/tau) * Var[q], with the variance taken under the per-weight
// code assignment distribution.
//
// Scales are grouped: the flattened weight tensor is split into contiguous
// runs of group_size elements (the final run may be shorter); group_size 0
// means one group for the whole tensor. Scales never receive gradients.

#include <cmath>
#include <cstdint>
#include <utility>

#include "hestia/autodiff.hpp"
#include "hestia/ops.hpp"

namespace hestia::quant {

struct QuantizerConfig {
  std::size_t group_size = 128;  // 0 = per-tensor
  double eps_gamma = 1e-8;
  double tau_min = 1e-4;

  void validate() const {
    if (eps_gamma < 0.0) throw std::invalid_argument("QuantizerConfig: eps_gamma < 0");
    if (tau_min <= 0.0) throw std::invalid_argument("QuantizerConfig: tau_min <= 0");
  }
};

// Per-group scales for one tensor, plus the kernel floor they were built with.
struct GroupScales {
  std::vector<double> gamma;
  std::size_t group_size = 0;  // effective element count per group
  std::size_t numel = 0;
  double tau_min = 1e-4;

  std::size_t group_of(std::size_t flat_index) const { return flat_index / group_size; }

  void check_alignment(const ad::Tensor& w, const char* op) const {
    if (w.numel() != numel)
      throw std::invalid_argument(std::string(op) + ": scales built for " +
                                  std::to_string(numel) + " elements, tensor has " +
                                  std::to_string(w.numel()));
  }
};

// Soft assignment probabilities, one tensor per code.
struct CodeAssignment {
  ad::Tensor p_neg;   // code -1
  ad::Tensor p_zero;  // code  0
  ad::Tensor p_pos;   // code +1
};

// gamma_g = mean |w| over the group, plus the stabilizer.
inline GroupScales compute_scale(const ad::Tensor& w, const QuantizerConfig& cfg) {
  if (w.numel() == 0) throw std::invalid_argument("compute_scale: empty tensor");
  GroupScales scales;
  scales.numel = w.numel();
  scales.group_size = (cfg.group_size == 0 || cfg.group_size >= w.numel())
                          ? w.numel()
                          : cfg.group_size;
  scales.tau_min = cfg.tau_min;
  const std::size_t groups = (w.numel() + scales.group_size - 1) / scales.group_size;
  scales.gamma.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t lo = g * scales.group_size;
    const std::size_t hi = std::min(w.numel(), lo + scales.group_size);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += std::abs(w.at(i));
    scales.gamma[g] = acc / static_cast<double>(hi - lo) + cfg.eps_gamma;
  }
  return scales;
}

namespace detail {

inline ad::Tensor gamma_tensor(const GroupScales& scales, const ad::Shape& shape) {
  std::vector<double> v(scales.numel);
  for (std::size_t i = 0; i < scales.numel; ++i) v[i] = scales.gamma[scales.group_of(i)];
  return ad::Tensor::leaf(shape, std::move(v));
}

inline int ternary_code(double w, double gamma) {
  const double r = std::round(w / gamma);  // ties away from zero
  return r <= -1.0 ? -1 : (r >= 1.0 ? 1 : 0);
}

inline double clamp_tau(double tau, double tau_min, const char* op) {
  if (tau <= 0.0)
    throw std::invalid_argument(std::string(op) + ": tau must be positive before clamping");
  return std::max(tau, tau_min);
}

}  // namespace detail

// Scalar evaluation of the softmax kernel at z = w/gamma. Shift-by-minimum
// keeps the exponents non-positive so the kernel is stable for tiny tau.
struct SoftEval {
  double p_neg, p_zero, p_pos;
  double mean;      // sum_q q pi(q|z)
  double variance;  // sum_q q^2 pi(q|z) - mean^2
};

inline SoftEval soft_eval(double z, double tau) {
  const double dn = (z + 1.0) * (z + 1.0);
  const double d0 = z * z;
  const double dp = (z - 1.0) * (z - 1.0);
  const double m = std::min(dn, std::min(d0, dp));
  const double c = -1.0 / tau;
  const double en = std::exp((dn - m) * c);
  const double e0 = std::exp((d0 - m) * c);
  const double ep = std::exp((dp - m) * c);
  const double s = (en + e0) + ep;
  SoftEval out;
  out.p_neg = en / s;
  out.p_zero = e0 / s;
  out.p_pos = ep / s;
  out.mean = out.p_pos - out.p_neg;
  out.variance = (out.p_pos + out.p_neg) - out.mean * out.mean;
  return out;
}

// Hard ternary codes as integers in {-1, 0, +1}.
inline std::vector<std::int8_t> hard_codes(const ad::Tensor& w, const GroupScales& scales) {
  scales.check_alignment(w, "hard_codes");
  std::vector<std::int8_t> codes(w.numel());
  for (std::size_t i = 0; i < w.numel(); ++i)
    codes[i] = static_cast<std::int8_t>(
        detail::ternary_code(w.at(i), scales.gamma[scales.group_of(i)]));
  return codes;
}

// Dequantized hard weights gamma * code. Constant: no gradient path.
inline ad::Tensor hard_quantize(const ad::Tensor& w, const GroupScales& scales) {
  scales.check_alignment(w, "hard_quantize");
  std::vector<double> out(w.numel());
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const double gamma = scales.gamma[scales.group_of(i)];
    out[i] = gamma * static_cast<double>(detail::ternary_code(w.at(i), gamma));
  }
  return ad::Tensor::leaf(w.shape(), std::move(out));
}

// Hard forward, identity backward.
inline ad::Tensor ste_quantize(const ad::Tensor& w, const GroupScales& scales) {
  scales.check_alignment(w, "ste_quantize");
  ad::Tensor hard = hard_quantize(w, scales);
  return ad::make_op(
      w.shape(), hard.values(), {w},
      [](const ad::Tensor& g, const std::vector<ad::Tensor>&, const ad::Tensor&) {
        return std::vector<ad::Tensor>{g};
      },
      "ste_quantize");
}

// Softmax code assignment pi(q | w) at temperature tau (clamped to the floor).
// Built from graph ops, so it is differentiable with respect to w.
inline CodeAssignment soft_assign(const ad::Tensor& w, const GroupScales& scales, double tau) {
  scales.check_alignment(w, "soft_assign");
  const double t = detail::clamp_tau(tau, scales.tau_min, "soft_assign");
  ad::Tensor z = ad::div(w, detail::gamma_tensor(scales, w.shape()));
  ad::Tensor dn = ad::square(ad::add_const(z, 1.0));
  ad::Tensor d0 = ad::square(z);
  ad::Tensor dp = ad::square(ad::add_const(z, -1.0));
  ad::Tensor m = ad::minimum(dn, ad::minimum(d0, dp));
  const double c = -1.0 / t;
  ad::Tensor en = ad::exp(ad::scale(ad::sub(dn, m), c));
  ad::Tensor e0 = ad::exp(ad::scale(ad::sub(d0, m), c));
  ad::Tensor ep = ad::exp(ad::scale(ad::sub(dp, m), c));
  ad::Tensor s = ad::add(ad::add(en, e0), ep);
  return CodeAssignment{ad::div(en, s), ad::div(e0, s), ad::div(ep, s)};
}

// Relaxed weights gamma * E[q]; differentiable in w, constant in gamma.
inline ad::Tensor soft_quantize(const ad::Tensor& w, const GroupScales& scales, double tau) {
  CodeAssignment pi = soft_assign(w, scales, tau);
  return ad::mul(detail::gamma_tensor(scales, w.shape()), ad::sub(pi.p_pos, pi.p_neg));
}

// Closed-form per-weight Jacobian (2/tau) * Var[q]. Matches the reverse-mode
// gradient of soft_quantize; kept as an independent arithmetic route.
inline ad::Tensor soft_jacobian(const ad::Tensor& w, const GroupScales& scales, double tau) {
  scales.check_alignment(w, "soft_jacobian");
  const double t = detail::clamp_tau(tau, scales.tau_min, "soft_jacobian");
  std::vector<double> out(w.numel());
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const double gamma = scales.gamma[scales.group_of(i)];
    out[i] = (2.0 / t) * soft_eval(w.at(i) / gamma, t).variance;
  }
  return ad::Tensor::leaf(w.shape(), std::move(out));
}

// (1 - p) * W + p * W_soft.
inline ad::Tensor effective_weights(const ad::Tensor& w, const ad::Tensor& w_soft, double p) {
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument("effective_weights: p must lie in [0,1]");
  if (w.shape() != w_soft.shape())
    throw std::invalid_argument("effective_weights: shape mismatch");
  return ad::add(ad::scale(w, 1.0 - p), ad::scale(w_soft, p));
}

// The hard quantizer's transition points, {-gamma/2, +gamma/2} per group.
inline std::vector<std::pair<double, double>> boundaries(const GroupScales& scales) {
  std::vector<std::pair<double, double>> out;
  out.reserve(scales.gamma.size());
  for (double gamma : scales.gamma) out.emplace_back(-0.5 * gamma, 0.5 * gamma);
  return out;
}

// 1.0 where the update fails to change the ternary code (the dead zone of the
// step), 0.0 where the code flips. Both codes use the same original scales.
inline ad::Tensor dead_zone_mask(const ad::Tensor& w, const ad::Tensor& delta_w,
                                 const GroupScales& scales) {
  scales.check_alignment(w, "dead_zone_mask");
  if (w.shape() != delta_w.shape())
    throw std::invalid_argument("dead_zone_mask: shape mismatch");
  std::vector<double> out(w.numel());
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const double gamma = scales.gamma[scales.group_of(i)];
    out[i] = detail::ternary_code(w.at(i) + delta_w.at(i), gamma) ==
                     detail::ternary_code(w.at(i), gamma)
                 ? 1.0
                 : 0.0;
  }
  return ad::Tensor::leaf(w.shape(), std::move(out));
}

}  // namespace hestia::quant
