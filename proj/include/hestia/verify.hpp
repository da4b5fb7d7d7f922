#pragma once

// Runtime verification of the closed-form identities and estimator contracts,
// reported machine-readably. cmd_check runs everything here; the acceptance
// suite drives the same routines at the pinned tolerances.

#include <functional>

#include <json.hpp>

#include "hestia/autodiff.hpp"
#include "hestia/quantizer.hpp"
#include "hestia/random.hpp"
#include "hestia/schedules.hpp"
#include "hestia/sensitivity.hpp"

namespace hestia::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  nlohmann::json details;
};

// Scalar Jacobian route used by the closed-form checks. Tests can substitute
// a corrupted formula here to confirm the checker catches it.
using JacobianFn = std::function<double(double w, double gamma, double tau)>;

inline double closed_form_jacobian(double w, double gamma, double tau) {
  return (2.0 / tau) * quant::soft_eval(w / gamma, tau).variance;
}

namespace detail {

inline quant::GroupScales scalar_scales(double gamma) {
  quant::GroupScales s;
  s.gamma = {gamma};
  s.group_size = 1;
  s.numel = 1;
  return s;
}

inline double soft_value(double w, double gamma, double tau) {
  return gamma * quant::soft_eval(w / gamma, tau).mean;
}

// Simpson quadrature of the closed-form Jacobian over [-span*gamma, span*gamma].
// Also accumulates the mass within +/- window*gamma of the two boundaries.
struct QuadratureResult {
  double integral = 0.0;
  double boundary_fraction = 0.0;
};

inline QuadratureResult jacobian_quadrature(double gamma, double tau, double span = 10.0,
                                            double window = 0.1, std::size_t n = 40000) {
  const double lo = -span * gamma, hi = span * gamma;
  const double h = (hi - lo) / static_cast<double>(n);
  double total = 0.0, near = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double w = lo + h * static_cast<double>(i);
    const double j = closed_form_jacobian(w, gamma, tau);
    const double coef = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    total += coef * j;
    if (std::abs(w - 0.5 * gamma) <= window * gamma ||
        std::abs(w + 0.5 * gamma) <= window * gamma)
      near += coef * j;
  }
  QuadratureResult out;
  out.integral = total * h / 3.0;
  out.boundary_fraction = total > 0.0 ? near / total : 0.0;
  return out;
}

}  // namespace detail

// Lemma-1 check over a (w, tau) grid: the supplied Jacobian formula against
// central finite differences of the relaxed quantizer, and against the
// reverse-mode gradient. Errors are normalized by the grid's peak magnitude.
inline CheckResult check_jacobian_closed_form(
    const JacobianFn& jacobian = closed_form_jacobian, double gamma = 0.45,
    std::size_t grid_points = 2001, std::vector<double> tau_set = {1.0, 0.3, 0.05},
    double fd_tol = 1e-6, double ad_tol = 1e-10) {
  CheckResult r;
  r.name = "jacobian_closed_form";
  auto scales = detail::scalar_scales(gamma);

  double worst_fd = 0.0, worst_ad = 0.0;
  nlohmann::json offender;
  for (double tau : tau_set) {
    const double peak = 2.0 / tau;  // |J| <= (2/tau) Var <= (2/tau)
    for (std::size_t i = 0; i < grid_points; ++i) {
      const double w =
          -3.0 * gamma + 6.0 * gamma * static_cast<double>(i) / (grid_points - 1);
      const double closed = jacobian(w, gamma, tau);
      const double h = 1e-5;
      const double fd =
          (detail::soft_value(w + h, gamma, tau) - detail::soft_value(w - h, gamma, tau)) /
          (2.0 * h);
      ad::Tensor wt = ad::Tensor::leaf({1}, {w}, true);
      const double adg =
          ad::grad(ad::sum(quant::soft_quantize(wt, scales, tau)), {wt})[0].at(0);

      const double fd_err = std::abs(closed - fd) / peak;
      const double ad_err = std::abs(closed - adg) / peak;
      if (fd_err > worst_fd) {
        worst_fd = fd_err;
        if (fd_err > fd_tol) offender = {{"w", w}, {"tau", tau}, {"fd_error", fd_err}};
      }
      worst_ad = std::max(worst_ad, ad_err);
    }
  }
  r.pass = worst_fd < fd_tol && worst_ad < ad_tol;
  r.details = {{"max_fd_relative_error", worst_fd},
               {"max_autodiff_relative_error", worst_ad},
               {"fd_tolerance", fd_tol},
               {"autodiff_tolerance", ad_tol}};
  if (!offender.is_null()) r.details["offending_point"] = offender;
  return r;
}

// Appendix-A identity: d pi(q|z)/dz = (2/tau) pi (q - mu) for all three codes.
inline CheckResult check_kernel_derivative_identity(std::size_t grid_points = 2001,
                                                    std::vector<double> tau_set = {1.0, 0.3,
                                                                                   0.05},
                                                    double tol = 1e-6) {
  CheckResult r;
  r.name = "kernel_derivative_identity";
  double worst = 0.0;
  for (double tau : tau_set) {
    const double peak = 2.0 / tau;
    for (std::size_t i = 0; i < grid_points; ++i) {
      const double z = -3.0 + 6.0 * static_cast<double>(i) / (grid_points - 1);
      const auto ev = quant::soft_eval(z, tau);
      const double probs[3] = {ev.p_neg, ev.p_zero, ev.p_pos};
      const double codes[3] = {-1.0, 0.0, 1.0};
      const double h = 1e-5;
      const auto up = quant::soft_eval(z + h, tau);
      const auto dn = quant::soft_eval(z - h, tau);
      const double fd[3] = {(up.p_neg - dn.p_neg) / (2 * h), (up.p_zero - dn.p_zero) / (2 * h),
                            (up.p_pos - dn.p_pos) / (2 * h)};
      for (int q = 0; q < 3; ++q) {
        const double closed = (2.0 / tau) * probs[q] * (codes[q] - ev.mean);
        worst = std::max(worst, std::abs(closed - fd[q]) / peak);
      }
    }
  }
  r.pass = worst < tol;
  r.details = {{"max_relative_error", worst}, {"tolerance", tol}};
  return r;
}

// Lemma-2 numerics: total variation of the Jacobian equals 2 gamma for every
// tau, and its mass concentrates at the boundaries as tau decreases.
inline CheckResult check_total_variation(double gamma = 0.45,
                                         std::vector<double> tau_set = {1.0, 0.3, 0.05, 0.01},
                                         double tol_factor = 1e-3) {
  CheckResult r;
  r.name = "quadrature_total_variation";
  bool ok = true;
  nlohmann::json per_tau = nlohmann::json::array();
  for (double tau : tau_set) {
    const auto q = detail::jacobian_quadrature(gamma, tau);
    const double err = std::abs(q.integral - 2.0 * gamma);
    ok = ok && err <= tol_factor * gamma;
    per_tau.push_back({{"tau", tau}, {"integral", q.integral}, {"abs_error", err}});
  }
  r.pass = ok;
  r.details = {{"expected", 2.0 * gamma}, {"per_tau", per_tau}, {"tolerance", tol_factor * gamma}};
  return r;
}

inline CheckResult check_boundary_localization(double gamma = 0.45,
                                               std::vector<double> tau_set = {1.0, 0.3, 0.05,
                                                                              0.01},
                                               double final_threshold = 0.99) {
  CheckResult r;
  r.name = "boundary_localization";
  std::vector<double> fractions;
  for (double tau : tau_set)
    fractions.push_back(detail::jacobian_quadrature(gamma, tau).boundary_fraction);
  bool monotone = true;
  for (std::size_t i = 1; i < fractions.size(); ++i)
    monotone = monotone && fractions[i] >= fractions[i - 1] - 1e-12;
  r.pass = monotone && fractions.back() > final_threshold;
  nlohmann::json per_tau = nlohmann::json::array();
  for (std::size_t i = 0; i < tau_set.size(); ++i)
    per_tau.push_back({{"tau", tau_set[i]}, {"fraction_within_0.1gamma", fractions[i]}});
  r.details = {{"fractions", per_tau},
               {"monotone", monotone},
               {"final_fraction", fractions.back()},
               {"final_threshold", final_threshold}};
  return r;
}

inline CheckResult check_hard_limit(double gamma = 0.45, double tau = 1e-3,
                                    double exclusion = 0.05, double tol_factor = 0.01) {
  CheckResult r;
  r.name = "hard_limit_convergence";
  auto scales = detail::scalar_scales(gamma);
  double worst = 0.0;
  for (double z = -3.0; z <= 3.0; z += 1e-3) {
    const double w = z * gamma;
    if (std::min(std::abs(w - 0.5 * gamma), std::abs(w + 0.5 * gamma)) <= exclusion * gamma)
      continue;
    const double soft = detail::soft_value(w, gamma, tau);
    const double hard =
        quant::hard_quantize(ad::Tensor::leaf({1}, {w}), scales).at(0);
    worst = std::max(worst, std::abs(soft - hard));
  }
  r.pass = worst < tol_factor * gamma;
  r.details = {{"max_gap", worst}, {"tolerance", tol_factor * gamma}, {"tau", tau}};
  return r;
}

inline CheckResult check_hutchpp_lowrank_exactness() {
  CheckResult r;
  r.name = "hutchpp_lowrank_exact";
  const std::size_t d = 40, rank = 4;
  auto b = rng::gaussian(d * rank, 97);
  std::vector<double> m(d * d, 0.0);
  double exact = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < rank; ++k) acc += b[i * rank + k] * b[j * rank + k];
      m[i * d + j] = acc;
    }
    exact += m[i * d + i];
  }
  sens::HutchConfig cfg;
  cfg.sketch_rank = 10;
  cfg.hutchinson_samples = 20;
  cfg.seed = 11;
  const double est = sens::hutchpp_trace(
      [&](const std::vector<double>& v) {
        std::vector<double> out(d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) out[i] += m[i * d + j] * v[j];
        return out;
      },
      d, cfg);
  const double rel = std::abs(est - exact) / std::abs(exact);
  r.pass = rel < 1e-8;
  r.details = {{"relative_error", rel}, {"tolerance", 1e-8}};
  return r;
}

inline CheckResult check_hutchpp_psd_median(std::size_t d = 200, std::size_t seeds = 50) {
  CheckResult r;
  r.name = "hutchpp_psd_median_error";
  sens::HutchConfig cfg;
  cfg.sketch_rank = 10;
  cfg.hutchinson_samples = 20;
  std::vector<double> errors;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    auto a = rng::gaussian(d * d, 2000 + s);
    std::vector<double> m(d * d, 0.0);
    double exact = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += a[k * d + i] * a[k * d + j];
        m[i * d + j] = acc / static_cast<double>(d);
      }
      exact += m[i * d + i];
    }
    cfg.seed = s;
    const double est = sens::hutchpp_trace(
        [&](const std::vector<double>& v) {
          std::vector<double> out(d, 0.0);
          for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) out[i] += m[i * d + j] * v[j];
          return out;
        },
        d, cfg);
    errors.push_back(std::abs(est - exact) / exact);
  }
  std::sort(errors.begin(), errors.end());
  const double median = errors[errors.size() / 2];
  r.pass = median < 0.05;
  r.details = {{"median_relative_error", median}, {"tolerance", 0.05}, {"seeds", seeds}};
  return r;
}

inline CheckResult check_schedule_units() {
  CheckResult r;
  r.name = "schedule_units";
  sched::ScheduleConfig cfg;
  cfg.total_steps = 1000;
  cfg.rho = 0.2;
  cfg.tau_init = 0.3;
  cfg.alpha = 0.4;

  bool ok = true;
  const double p100 = sched::pressure(100, cfg);
  ok = ok && std::abs(p100 - 0.5) < 1e-12;
  const double tau_comp = sched::base_temperature(cfg.compress_end(), cfg);
  ok = ok && std::abs(tau_comp - cfg.tau_init) < 1e-12;
  const double tau_end = sched::base_temperature(cfg.total_steps, cfg);
  ok = ok && std::abs(tau_end) < 1e-12;
  const double ratio = sched::scaled_temperature(50, 0.7, cfg) / sched::base_temperature(50, cfg);
  ok = ok && std::abs(ratio - std::exp(cfg.alpha * 0.7)) < 1e-12;

  // ordering/monotonicity over random configurations
  bool props = true;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto draws = rng::uniform(6, 7000 + s, 0.0, 1.0);
    sched::ScheduleConfig c;
    c.total_steps = 20 + static_cast<std::size_t>(draws[0] * 2000);
    c.rho = 0.95 * draws[1];
    c.tau_init = 0.01 + draws[2];
    c.alpha = 2.0 * draws[3];
    const double s_hi = std::max(draws[4], draws[5]);
    const double s_lo = std::min(draws[4], draws[5]);
    double prev_p = -1.0, prev_tau = 1e300;
    for (std::size_t t = 0; t <= c.total_steps; ++t) {
      const double p = sched::pressure(t, c);
      props = props && p >= prev_p && p <= 1.0;
      prev_p = p;
      const double tb = sched::base_temperature(t, c);
      if (t >= c.compress_end()) {
        props = props && tb <= prev_tau + 1e-15;
        prev_tau = tb;
      }
      props = props &&
              sched::scaled_temperature(t, s_hi, c) >= sched::scaled_temperature(t, s_lo, c);
    }
  }
  r.pass = ok && props;
  r.details = {{"unit_values_exact", ok}, {"random_config_properties", props},
               {"p_100", p100},           {"tau_at_compress_end", tau_comp},
               {"tau_at_end", tau_end},   {"scale_ratio_error",
                                           std::abs(ratio - std::exp(cfg.alpha * 0.7))}};
  return r;
}

inline CheckResult check_soft_assign_normalization() {
  CheckResult r;
  r.name = "soft_assign_normalization";
  double worst = 0.0;
  for (double tau : {1e6, 1.0, 0.3, 0.05, 1e-3, 1e-4}) {
    for (double z = -8.0; z <= 8.0; z += 0.01) {
      const auto ev = quant::soft_eval(z, tau);
      worst = std::max(worst, std::abs(ev.p_neg + ev.p_zero + ev.p_pos - 1.0));
    }
  }
  r.pass = worst < 1e-12;
  r.details = {{"max_deviation", worst}, {"tolerance", 1e-12}};
  return r;
}

// Gradcheck over the engine's primitives at random points; the trainer relies
// on these same rules end to end.
inline CheckResult check_gradcheck_primitives() {
  CheckResult r;
  r.name = "gradcheck_primitives";
  double worst = 0.0;
  std::size_t points = 0;
  auto check = [&](const std::function<ad::Tensor(const ad::Tensor&)>& f,
                   const std::vector<double>& xs) {
    for (double x : xs) {
      ad::Tensor t = ad::Tensor::leaf({1}, {x}, true);
      const double adg = ad::grad(ad::sum(f(t)), {t})[0].at(0);
      const double h = 1e-5;
      const double fp = ad::sum(f(ad::Tensor::leaf({1}, {x + h}))).item();
      const double fm = ad::sum(f(ad::Tensor::leaf({1}, {x - h}))).item();
      const double fd = (fp - fm) / (2.0 * h);
      worst = std::max(worst, std::abs(adg - fd) / (std::max(std::abs(adg), std::abs(fd)) + 1.0));
      ++points;
    }
  };
  auto pts = rng::uniform(30, 1234, -2.0, 2.0);
  auto pos = rng::uniform(30, 1235, 0.3, 2.5);
  check([](const ad::Tensor& x) { return ad::square(x); }, pts);
  check([](const ad::Tensor& x) { return ad::exp(x); }, pts);
  check([](const ad::Tensor& x) { return ad::log(x); }, pos);
  check([](const ad::Tensor& x) { return ad::sqrt(x); }, pos);
  check([](const ad::Tensor& x) { return ad::gelu(x); }, pts);
  check([](const ad::Tensor& x) { return ad::sigmoid(x); }, pts);
  check([](const ad::Tensor& x) { return ad::erf(x); }, pts);
  r.pass = worst < 1e-6;
  r.details = {{"max_relative_error", worst}, {"points", points}, {"tolerance", 1e-6}};
  return r;
}

inline std::vector<CheckResult> run_all_checks() {
  return {
      check_gradcheck_primitives(),
      check_soft_assign_normalization(),
      check_jacobian_closed_form(),
      check_kernel_derivative_identity(),
      check_total_variation(),
      check_boundary_localization(),
      check_hard_limit(),
      check_hutchpp_lowrank_exactness(),
      check_hutchpp_psd_median(),
      check_schedule_units(),
  };
}

inline nlohmann::json checks_to_json(const std::vector<CheckResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  bool all = true;
  for (const auto& r : results) {
    arr.push_back({{"name", r.name}, {"pass", r.pass}, {"details", r.details}});
    all = all && r.pass;
  }
  return nlohmann::json{{"all_pass", all}, {"checks", arr}};
}

}  // namespace hestia::verify
