#pragma once

// Pressure ramp for the compress stage and the Hessian-aware temperature
// annealing that follows it.
//
// Pressure rises linearly from 0 to 1 over the first rho*T steps. The base
// temperature stays at tau_init for that whole window (the kernel is fully
// soft while representational responsibility shifts to it), then follows a
// cosine decay to exactly 0 at t = T. Per-tensor temperatures are the base
// curve lifted by e^{alpha * s_i}, so more curvature-sensitive tensors harden
// later at every step.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace hestia::sched {

struct ScheduleConfig {
  std::size_t total_steps = 2000;  // T
  double rho = 0.2;                // compress-stage fraction
  double tau_init = 0.3;
  double alpha = 0.4;              // temperature scaling strength

  std::size_t compress_end() const {
    return static_cast<std::size_t>(std::floor(rho * static_cast<double>(total_steps)));
  }

  void validate() const {
    if (total_steps < 1) throw std::invalid_argument("ScheduleConfig: total_steps < 1");
    if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("ScheduleConfig: rho outside [0,1]");
    if (rho == 1.0)
      throw std::invalid_argument("ScheduleConfig: rho = 1 leaves no annealing window");
    if (tau_init <= 0.0) throw std::invalid_argument("ScheduleConfig: tau_init <= 0");
    if (alpha < 0.0) throw std::invalid_argument("ScheduleConfig: alpha < 0");
  }
};

struct ScheduleState {
  std::size_t step = 0;
  double pressure = 0.0;
  std::vector<double> temperatures;  // per tensor
};

namespace detail {
inline void check_step(std::size_t t, const ScheduleConfig& cfg, const char* op) {
  if (t > cfg.total_steps)
    throw std::invalid_argument(std::string(op) + ": step exceeds total_steps");
}
}  // namespace detail

inline double pressure(std::size_t t, const ScheduleConfig& cfg) {
  detail::check_step(t, cfg, "pressure");
  if (cfg.rho == 0.0) return 1.0;
  const double raw = static_cast<double>(t) / (cfg.rho * static_cast<double>(cfg.total_steps));
  return std::min(1.0, raw);
}

inline double base_temperature(std::size_t t, const ScheduleConfig& cfg) {
  detail::check_step(t, cfg, "base_temperature");
  const std::size_t t_comp = cfg.compress_end();
  if (t < t_comp) return cfg.tau_init;
  const double span = static_cast<double>(cfg.total_steps - t_comp);
  const double phase = M_PI * static_cast<double>(t - t_comp) / span;
  return (cfg.tau_init / 2.0) * (1.0 + std::cos(phase));
}

inline double scaled_temperature(std::size_t t, double score, const ScheduleConfig& cfg) {
  if (!(score >= 0.0 && score <= 1.0))
    throw std::invalid_argument("scaled_temperature: score outside [0,1]");
  return base_temperature(t, cfg) * std::exp(cfg.alpha * score);
}

inline ScheduleState schedule_at(std::size_t t, const std::vector<double>& scores,
                                 const ScheduleConfig& cfg) {
  ScheduleState s;
  s.step = t;
  s.pressure = pressure(t, cfg);
  s.temperatures.reserve(scores.size());
  for (double score : scores) s.temperatures.push_back(scaled_temperature(t, score, cfg));
  return s;
}

}  // namespace hestia::sched
