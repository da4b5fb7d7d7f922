#pragma once

// The training loop: per-step effective-weight assembly, backprop through the
// chosen surrogate, AdamW with a warmup-stable-decay learning rate, training
// telemetry, checkpointing, and the final hard export.
//
// Three modes share the loop. hestia mixes the latent weights with the soft
// quantizer under the pressure/temperature schedules; ste runs the hard
// quantizer with an identity backward and pressure pinned at 1; full_precision
// bypasses quantization entirely.

#include <array>
#include <chrono>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "hestia/data.hpp"
#include "hestia/io.hpp"
#include "hestia/models.hpp"
#include "hestia/quantizer.hpp"
#include "hestia/schedules.hpp"

namespace hestia::train {

enum class Mode { hestia, ste, full_precision };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::hestia: return "hestia";
    case Mode::ste: return "ste";
    case Mode::full_precision: return "full_precision";
  }
  return "?";
}

inline Mode mode_from(const std::string& s) {
  if (s == "hestia") return Mode::hestia;
  if (s == "ste") return Mode::ste;
  if (s == "full_precision") return Mode::full_precision;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

struct TrainConfig {
  Mode mode = Mode::hestia;
  std::size_t total_steps = 2000;
  std::size_t batch_size = 64;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double grad_clip = 1.0;  // global norm; 0 disables
  std::size_t log_every = 10;
  std::uint64_t seed = 42;
  // warmup-stable-decay phases as fractions of total_steps
  double warmup_frac = 0.05;
  double stable_frac = 0.80;
  double final_lr_ratio = 0.10;

  sched::ScheduleConfig schedule;
  quant::QuantizerConfig quantizer;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size = 0");
    if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr <= 0");
    if (grad_clip < 0.0) throw std::invalid_argument("TrainConfig: grad_clip < 0");
    if (log_every == 0) throw std::invalid_argument("TrainConfig: log_every = 0");
    if (warmup_frac < 0.0 || stable_frac < warmup_frac || stable_frac > 1.0)
      throw std::invalid_argument("TrainConfig: bad warmup/stable fractions");
    if (final_lr_ratio <= 0.0 || final_lr_ratio > 1.0)
      throw std::invalid_argument("TrainConfig: final_lr_ratio outside (0,1]");
    quantizer.validate();
    if (mode == Mode::hestia) {
      sched::ScheduleConfig s = schedule;
      s.total_steps = std::max<std::size_t>(total_steps, 1);
      s.validate();
    }
  }

  sched::ScheduleConfig schedule_for_run() const {
    sched::ScheduleConfig s = schedule;
    s.total_steps = std::max<std::size_t>(total_steps, 1);
    return s;
  }
};

inline double wsd_lr(std::size_t t, const TrainConfig& cfg) {
  const auto T = cfg.total_steps;
  if (T == 0) return cfg.lr;
  const auto warm = static_cast<std::size_t>(cfg.warmup_frac * static_cast<double>(T));
  const auto stable_end = static_cast<std::size_t>(cfg.stable_frac * static_cast<double>(T));
  if (t < warm) return cfg.lr * static_cast<double>(t + 1) / static_cast<double>(warm);
  if (t < stable_end || stable_end >= T) return cfg.lr;
  const double frac =
      static_cast<double>(t - stable_end + 1) / static_cast<double>(T - stable_end);
  return cfg.lr * (1.0 - (1.0 - cfg.final_lr_ratio) * frac);
}

struct TrainState {
  std::size_t step = 0;
  std::vector<std::vector<double>> latent;  // aligned with model params
  std::vector<std::vector<double>> adam_m;
  std::vector<std::vector<double>> adam_v;
  // quantization telemetry, aligned with quantizable tensors
  std::vector<std::vector<std::int8_t>> prev_codes;
  std::vector<std::vector<std::uint8_t>> ever_flipped;
};

struct MetricsRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  bool has_quant = false;
  double pressure = 0.0;
  std::vector<double> taus;
  double dead_zone_fraction = 0.0;
  double flip_fraction = 0.0;   // cumulative: share of weights that ever flipped
  double quant_error = 0.0;     // mean |W - Q(W)|

  nlohmann::json to_json(const std::vector<std::string>& tensor_names) const {
    nlohmann::json j{{"step", step}, {"loss", loss}, {"grad_norm", grad_norm}, {"lr", lr}};
    if (has_quant) {
      j["pressure"] = pressure;
      nlohmann::json tau_map = nlohmann::json::object();
      for (std::size_t i = 0; i < taus.size(); ++i) tau_map[tensor_names[i]] = taus[i];
      j["tau"] = tau_map;
      j["dead_zone_fraction"] = dead_zone_fraction;
      j["flip_fraction"] = flip_fraction;
      j["quant_error"] = quant_error;
    }
    return j;
  }
};

struct EvalResult {
  double loss = 0.0;
  std::optional<double> accuracy;
};

struct TrainReport {
  bool ok = true;
  std::string error;
  std::size_t steps_run = 0;
  EvalResult initial_eval;
  EvalResult final_eval;          // with the mode's own forward weights
  EvalResult exported_eval;       // after hard export (quantized modes only)
  bool has_export = false;
  double final_effective_gap = 0.0;  // mean |W_eff(T) - hard(W)| over quant weights
  double final_flip_fraction = 0.0;
  double final_dead_zone_fraction = 0.0;
  double wall_seconds = 0.0;
};

// Deterministic held-out evaluation in fixed-size chunks.
inline EvalResult evaluate(const model::Model& m,
                           const std::vector<std::vector<double>>& values,
                           const model::Batch& batch) {
  EvalResult out;
  const std::size_t chunk = 256;
  double total_loss = 0.0, total_acc = 0.0;
  std::size_t acc_chunks = 0;
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < batch.rows; lo += chunk) {
    const std::size_t hi = std::min(batch.rows, lo + chunk);
    idx.clear();
    for (std::size_t i = lo; i < hi; ++i) idx.push_back(i);
    model::Batch part = data::take_batch(batch, idx);
    auto leaves = model::as_leaves(m, values, false);
    total_loss += m.loss(leaves, part).item() * static_cast<double>(part.rows);
    if (auto a = m.accuracy(leaves, part)) {
      total_acc += *a * static_cast<double>(part.rows);
      ++acc_chunks;
    }
  }
  out.loss = total_loss / static_cast<double>(batch.rows);
  if (acc_chunks > 0) out.accuracy = total_acc / static_cast<double>(batch.rows);
  return out;
}

class Trainer {
 public:
  Trainer(const model::Model& m, const data::Dataset& ds, TrainConfig cfg,
          std::vector<double> scores = {})
      : model_(m), data_(ds), cfg_(std::move(cfg)), scores_(std::move(scores)) {
    cfg_.validate();
    quant_idx_ = model_.quantizable_indices();
    if (cfg_.mode == Mode::hestia) {
      if (scores_.empty()) scores_.assign(quant_idx_.size(), 0.5);  // uniform fallback
      if (scores_.size() != quant_idx_.size())
        throw std::invalid_argument("Trainer: scores do not match quantizable tensors");
    }
    for (std::size_t i : quant_idx_) quant_names_.push_back(model_.params()[i].name);
  }

  const std::vector<std::string>& quantizable_names() const { return quant_names_; }
  const TrainConfig& config() const { return cfg_; }

  TrainState init_state() const {
    TrainState st;
    st.latent = model_.initial_values();
    st.adam_m.resize(st.latent.size());
    st.adam_v.resize(st.latent.size());
    for (std::size_t i = 0; i < st.latent.size(); ++i) {
      st.adam_m[i].assign(st.latent[i].size(), 0.0);
      st.adam_v[i].assign(st.latent[i].size(), 0.0);
    }
    if (cfg_.mode != Mode::full_precision) {
      for (std::size_t q = 0; q < quant_idx_.size(); ++q) {
        const auto& w = st.latent[quant_idx_[q]];
        auto wt = ad::Tensor::leaf(model_.params()[quant_idx_[q]].shape, w);
        st.prev_codes.push_back(quant::hard_codes(wt, quant::compute_scale(wt, cfg_.quantizer)));
        st.ever_flipped.push_back(std::vector<std::uint8_t>(w.size(), 0));
      }
    }
    return st;
  }

  // One optimizer step. Returns the metrics record; sets *aborted and the
  // diagnostic when the loss or a gradient goes non-finite.
  MetricsRecord train_step(TrainState& st, const model::Batch& batch, bool* aborted = nullptr,
                           std::string* diagnostic = nullptr) const {
    const std::size_t t = st.step;
    const auto schedule = cfg_.schedule_for_run();

    std::vector<ad::Tensor> leaves = model::as_leaves(model_, st.latent, true);
    std::vector<ad::Tensor> effective = leaves;
    std::vector<quant::GroupScales> scales(quant_idx_.size());
    double p = 0.0;
    std::vector<double> taus;

    if (cfg_.mode != Mode::full_precision) {
      for (std::size_t q = 0; q < quant_idx_.size(); ++q)
        scales[q] = quant::compute_scale(leaves[quant_idx_[q]], cfg_.quantizer);
    }
    if (cfg_.mode == Mode::hestia) {
      p = sched::pressure(std::min(t, schedule.total_steps), schedule);
      for (std::size_t q = 0; q < quant_idx_.size(); ++q) {
        const double tau = sched::scaled_temperature(std::min(t, schedule.total_steps),
                                                     scores_[q], schedule);
        const double tau_eval = std::max(tau, cfg_.quantizer.tau_min);
        taus.push_back(tau_eval);
        ad::Tensor soft = quant::soft_quantize(leaves[quant_idx_[q]], scales[q], tau_eval);
        effective[quant_idx_[q]] = quant::effective_weights(leaves[quant_idx_[q]], soft, p);
      }
    } else if (cfg_.mode == Mode::ste) {
      p = 1.0;
      for (std::size_t q = 0; q < quant_idx_.size(); ++q)
        effective[quant_idx_[q]] = quant::ste_quantize(leaves[quant_idx_[q]], scales[q]);
    }

    ad::Tensor loss = model_.loss(effective, batch);
    MetricsRecord rec;
    rec.step = t;
    rec.loss = loss.item();
    rec.lr = wsd_lr(t, cfg_);
    if (!std::isfinite(rec.loss)) {
      if (aborted) *aborted = true;
      if (diagnostic) *diagnostic = "non-finite loss at step " + std::to_string(t);
      return rec;
    }

    std::vector<ad::Tensor> grads = ad::grad(loss, leaves);
    double sq_norm = 0.0;
    for (const auto& g : grads)
      for (double v : g.values()) sq_norm += v * v;
    rec.grad_norm = std::sqrt(sq_norm);
    if (!std::isfinite(rec.grad_norm)) {
      if (aborted) *aborted = true;
      if (diagnostic) *diagnostic = "non-finite gradient at step " + std::to_string(t);
      return rec;
    }
    const double clip_scale =
        (cfg_.grad_clip > 0.0 && rec.grad_norm > cfg_.grad_clip) ? cfg_.grad_clip / rec.grad_norm
                                                                 : 1.0;

    // AdamW with decoupled weight decay on the quantizable matrices only
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t + 1));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t + 1));
    for (std::size_t i = 0; i < st.latent.size(); ++i) {
      const bool decayed = model_.params()[i].quantizable;
      auto& w = st.latent[i];
      auto& mbuf = st.adam_m[i];
      auto& vbuf = st.adam_v[i];
      const auto& g = grads[i].values();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j] * clip_scale;
        mbuf[j] = cfg_.beta1 * mbuf[j] + (1.0 - cfg_.beta1) * gj;
        vbuf[j] = cfg_.beta2 * vbuf[j] + (1.0 - cfg_.beta2) * gj * gj;
        double update = rec.lr * (mbuf[j] / bc1) / (std::sqrt(vbuf[j] / bc2) + 1e-8);
        if (decayed) update += rec.lr * cfg_.weight_decay * w[j];
        w[j] -= update;
      }
    }

    if (cfg_.mode != Mode::full_precision) {
      rec.has_quant = true;
      rec.pressure = p;
      rec.taus = taus;
      std::size_t dead = 0, flipped_total = 0, count = 0;
      double err = 0.0;
      for (std::size_t q = 0; q < quant_idx_.size(); ++q) {
        const std::size_t pi = quant_idx_[q];
        const auto& shape = model_.params()[pi].shape;
        const auto& w_new = st.latent[pi];
        const auto& w_old = leaves[pi].values();  // pre-update values
        std::vector<double> delta(w_new.size());
        for (std::size_t j = 0; j < w_new.size(); ++j) delta[j] = w_new[j] - w_old[j];

        ad::Tensor w_old_t = ad::Tensor::leaf(shape, w_old);
        ad::Tensor delta_t = ad::Tensor::leaf(shape, delta);
        ad::Tensor mask = quant::dead_zone_mask(w_old_t, delta_t, scales[q]);
        for (double v : mask.values()) dead += v == 1.0 ? 1u : 0u;

        ad::Tensor hard_old = quant::hard_quantize(w_old_t, scales[q]);
        for (std::size_t j = 0; j < w_new.size(); ++j)
          err += std::abs(w_old[j] - hard_old.at(j));

        // code flips against the previous step, each with its own scales
        ad::Tensor w_new_t = ad::Tensor::leaf(shape, w_new);
        auto codes_new = quant::hard_codes(w_new_t, quant::compute_scale(w_new_t, cfg_.quantizer));
        auto& prev = st.prev_codes[q];
        auto& ever = st.ever_flipped[q];
        for (std::size_t j = 0; j < codes_new.size(); ++j) {
          if (codes_new[j] != prev[j]) ever[j] = 1;
          flipped_total += ever[j];
        }
        prev = std::move(codes_new);
        count += w_new.size();
      }
      rec.dead_zone_fraction = static_cast<double>(dead) / static_cast<double>(count);
      rec.flip_fraction = static_cast<double>(flipped_total) / static_cast<double>(count);
      rec.quant_error = err / static_cast<double>(count);
    }

    st.step = t + 1;
    if (aborted) *aborted = false;
    return rec;
  }

  // Effective forward weights at the current state (what inference would see
  // before a hard export).
  std::vector<std::vector<double>> effective_values(const TrainState& st) const {
    std::vector<std::vector<double>> out = st.latent;
    if (cfg_.mode == Mode::full_precision) return out;
    const auto schedule = cfg_.schedule_for_run();
    const std::size_t t = std::min(st.step, schedule.total_steps);
    for (std::size_t q = 0; q < quant_idx_.size(); ++q) {
      const std::size_t pi = quant_idx_[q];
      ad::Tensor w = ad::Tensor::leaf(model_.params()[pi].shape, st.latent[pi]);
      auto scales = quant::compute_scale(w, cfg_.quantizer);
      if (cfg_.mode == Mode::ste) {
        out[pi] = quant::hard_quantize(w, scales).values();
      } else {
        const double tau = std::max(sched::scaled_temperature(t, scores_[q], schedule),
                                    cfg_.quantizer.tau_min);
        const double p = sched::pressure(t, schedule);
        ad::Tensor soft = quant::soft_quantize(w, scales, tau);
        out[pi] = quant::effective_weights(w, soft, p).values();
      }
    }
    return out;
  }

  // Hard-exported weights: codes * gamma everywhere quantizable.
  std::vector<std::vector<double>> exported_values(const TrainState& st) const {
    std::vector<std::vector<double>> out = st.latent;
    for (std::size_t pi : quant_idx_) {
      ad::Tensor w = ad::Tensor::leaf(model_.params()[pi].shape, st.latent[pi]);
      out[pi] = quant::hard_quantize(w, quant::compute_scale(w, cfg_.quantizer)).values();
    }
    return out;
  }

  // Full loop from an existing state (supports resume). Emits one record per
  // log_every steps plus the final step. A non-zero `until` pauses the run at
  // that step so it can be checkpointed and resumed under the same config.
  TrainReport train_loop(TrainState& st,
                         const std::function<void(const MetricsRecord&)>& on_record = {},
                         std::size_t until = 0) const {
    TrainReport report;
    const auto t0 = std::chrono::steady_clock::now();
    report.initial_eval = evaluate(model_, effective_values(st), data_.heldout);

    const std::size_t stop = until == 0 ? cfg_.total_steps : std::min(until, cfg_.total_steps);
    MetricsRecord last;
    while (st.step < stop) {
      model::Batch batch =
          data::batch_for_step(data_.train, cfg_.batch_size, cfg_.seed, st.step);
      bool aborted = false;
      std::string diagnostic;
      MetricsRecord rec = train_step(st, batch, &aborted, &diagnostic);
      if (aborted) {
        report.ok = false;
        report.error = diagnostic;
        if (on_record) on_record(rec);
        break;
      }
      last = rec;
      if (on_record && (rec.step % cfg_.log_every == 0 || rec.step + 1 == cfg_.total_steps))
        on_record(rec);
    }
    report.steps_run = st.step;
    report.final_eval = evaluate(model_, effective_values(st), data_.heldout);
    if (cfg_.mode != Mode::full_precision) {
      report.has_export = true;
      report.exported_eval = evaluate(model_, exported_values(st), data_.heldout);
      report.final_flip_fraction = last.flip_fraction;
      report.final_dead_zone_fraction = last.dead_zone_fraction;

      auto eff = effective_values(st);
      auto hard = exported_values(st);
      double gap = 0.0;
      std::size_t count = 0;
      for (std::size_t pi : quant_idx_) {
        for (std::size_t j = 0; j < eff[pi].size(); ++j) gap += std::abs(eff[pi][j] - hard[pi][j]);
        count += eff[pi].size();
      }
      report.final_effective_gap = count ? gap / static_cast<double>(count) : 0.0;
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
  }

  // --- checkpointing ---------------------------------------------------------

  void save_checkpoint(const TrainState& st, const std::string& path) const {
    io::Container c;
    c.meta = {{"format", "hestia-checkpoint-v1"},
              {"step", st.step},
              {"mode", to_string(cfg_.mode)},
              {"seed", cfg_.seed}};
    for (std::size_t i = 0; i < st.latent.size(); ++i) {
      const auto& name = model_.params()[i].name;
      c.blobs.push_back({"latent." + name, st.latent[i], {}});
      c.blobs.push_back({"adam_m." + name, st.adam_m[i], {}});
      c.blobs.push_back({"adam_v." + name, st.adam_v[i], {}});
    }
    for (std::size_t q = 0; q < st.prev_codes.size(); ++q) {
      const auto& name = quant_names_[q];
      c.blobs.push_back({"codes." + name, {}, st.prev_codes[q]});
      std::vector<std::int8_t> fl(st.ever_flipped[q].begin(), st.ever_flipped[q].end());
      c.blobs.push_back({"flipped." + name, {}, fl});
    }
    io::save_container(c, path);
  }

  TrainState load_checkpoint(const std::string& path) const {
    io::Container c = io::load_container(path);
    if (c.meta.at("format") != "hestia-checkpoint-v1")
      throw std::runtime_error("load_checkpoint: unknown format in " + path);
    TrainState st;
    st.step = c.meta.at("step").get<std::size_t>();
    for (const auto& spec : model_.params()) {
      st.latent.push_back(c.blob("latent." + spec.name).f64);
      st.adam_m.push_back(c.blob("adam_m." + spec.name).f64);
      st.adam_v.push_back(c.blob("adam_v." + spec.name).f64);
    }
    for (const auto& name : quant_names_) {
      if (!c.has_blob("codes." + name)) continue;
      st.prev_codes.push_back(c.blob("codes." + name).i8);
      const auto& fl = c.blob("flipped." + name).i8;
      st.ever_flipped.push_back(std::vector<std::uint8_t>(fl.begin(), fl.end()));
    }
    return st;
  }

  // --- quantized artifact ------------------------------------------------------

  void export_quantized(const TrainState& st, const std::string& path) const {
    io::Container c;
    nlohmann::json tensors = nlohmann::json::array();
    for (std::size_t i = 0; i < st.latent.size(); ++i) {
      const auto& spec = model_.params()[i];
      nlohmann::json entry{{"name", spec.name},
                           {"shape", spec.shape},
                           {"quantized", spec.quantizable}};
      if (spec.quantizable) {
        ad::Tensor w = ad::Tensor::leaf(spec.shape, st.latent[i]);
        auto scales = quant::compute_scale(w, cfg_.quantizer);
        entry["group_size"] = scales.group_size;
        c.blobs.push_back({"codes." + spec.name, {}, quant::hard_codes(w, scales)});
        c.blobs.push_back({"gamma." + spec.name, scales.gamma, {}});
      } else {
        c.blobs.push_back({"values." + spec.name, st.latent[i], {}});
      }
      tensors.push_back(entry);
    }
    c.meta = {{"format", "hestia-ternary-v1"},
              {"tensors", tensors},
              {"eps_gamma", cfg_.quantizer.eps_gamma}};
    io::save_container(c, path);
  }

 private:
  const model::Model& model_;
  const data::Dataset& data_;
  TrainConfig cfg_;
  std::vector<double> scores_;
  std::vector<std::size_t> quant_idx_;
  std::vector<std::string> quant_names_;
};

// Reconstruct parameter values from an exported artifact: codes * gamma for
// quantized tensors, stored values elsewhere. Bit-exact against
// hard_quantize on the latent weights it was exported from.
inline std::vector<std::vector<double>> reconstruct_artifact(const io::Container& c) {
  std::vector<std::vector<double>> out;
  for (const auto& entry : c.meta.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    if (entry.at("quantized").get<bool>()) {
      const auto& codes = c.blob("codes." + name).i8;
      const auto& gamma = c.blob("gamma." + name).f64;
      const auto group = entry.at("group_size").get<std::size_t>();
      std::vector<double> v(codes.size());
      for (std::size_t j = 0; j < codes.size(); ++j)
        v[j] = gamma[j / group] * static_cast<double>(codes[j]);
      out.push_back(std::move(v));
    } else {
      out.push_back(c.blob("values." + name).f64);
    }
  }
  return out;
}

inline std::vector<std::vector<double>> reconstruct_artifact(const std::string& path) {
  return reconstruct_artifact(io::load_container(path));
}

// Code histogram of an artifact: fractions of {-1, 0, +1} over all quantized
// tensors.
inline std::array<double, 3> code_histogram(const io::Container& c) {
  std::array<std::size_t, 3> counts{0, 0, 0};
  std::size_t total = 0;
  for (const auto& entry : c.meta.at("tensors")) {
    if (!entry.at("quantized").get<bool>()) continue;
    for (std::int8_t code : c.blob("codes." + entry.at("name").get<std::string>()).i8) {
      ++counts[static_cast<std::size_t>(code + 1)];
      ++total;
    }
  }
  std::array<double, 3> out{0.0, 0.0, 0.0};
  if (total)
    for (int i = 0; i < 3; ++i) out[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  return out;
}

}  // namespace hestia::train
