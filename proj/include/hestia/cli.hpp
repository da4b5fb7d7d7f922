#pragma once

// Command implementations behind the `hestia` tool: sens, train, check,
// sweep, export. Kept in a header so the test suite can drive the same entry
// points the binary uses.

#include <filesystem>
#include <iomanip>
#include <iostream>

#include "hestia/config.hpp"
#include "hestia/verify.hpp"

namespace hestia::cli {

namespace fs = std::filesystem;

inline std::uint64_t config_hash(const RunConfig& cfg) { return rng::fnv1a(cfg.to_json().dump()); }

// Precedence: defaults < config file < HESTIA_SEED < explicit overrides.
inline RunConfig assemble_config(const std::string& config_file,
                                 const std::vector<std::string>& overrides) {
  RunConfig cfg = config_file.empty() ? RunConfig{} : RunConfig::from_file(config_file);
  if (const char* env = std::getenv("HESTIA_SEED"))
    cfg.seed = static_cast<std::uint64_t>(std::stoull(env));
  for (const auto& kv : overrides) cfg.apply_override(kv);
  return cfg;
}

// The fixed calibration subset: leading slices of the training split.
inline std::vector<model::Batch> calibration_batches(const data::Dataset& ds,
                                                     const RunConfig& cfg) {
  std::vector<model::Batch> out;
  const std::size_t n = std::min(cfg.calib_batch_size, ds.train.rows);
  for (std::size_t b = 0; b < cfg.calib_batches; ++b) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) idx.push_back((b * n + i) % ds.train.rows);
    out.push_back(data::take_batch(ds.train, idx));
  }
  return out;
}

inline nlohmann::json eval_to_json(const train::EvalResult& e) {
  nlohmann::json j{{"loss", e.loss}};
  if (e.accuracy) j["accuracy"] = *e.accuracy;
  return j;
}

struct TrainOutcome {
  train::TrainReport report;
  std::vector<double> scores;
};

// Shared by cmd_train and cmd_sweep. Writes run artifacts when out_dir is
// non-empty; sweep cells run with artifacts disabled.
inline TrainOutcome run_training(const RunConfig& cfg, const data::Dataset& ds,
                                 const model::Model& m, const std::string& out_dir) {
  TrainOutcome outcome;
  train::TrainConfig tcfg = cfg.make_train();

  if (tcfg.mode == train::Mode::hestia) {
    if (cfg.fallback_uniform) {
      outcome.scores.assign(m.quantizable_indices().size(), 0.5);
    } else {
      const std::string path = cfg.resolved_calibration_path();
      if (!fs::exists(path))
        throw std::runtime_error("hestia mode needs a calibration file (" + path +
                                 "); run `hestia sens` first or pass "
                                 "--set sens.fallback_uniform=true");
      auto report = sens::load_calibration(path);
      if (report.dataset_fingerprint != ds.fingerprint)
        std::cerr << "warning: calibration dataset fingerprint differs from this run's data\n";
      outcome.scores = sens::scores_for_model(report, m);
      if (cfg.search_tau_init) {
        std::ifstream in(path);
        nlohmann::json j = nlohmann::json::parse(in);
        if (j.contains("tau_init_searched"))
          tcfg.schedule.tau_init = j["tau_init_searched"].get<double>();
      }
    }
  }

  train::Trainer trainer(m, ds, tcfg, outcome.scores);
  train::TrainState st = cfg.checkpoint_path.empty()
                             ? trainer.init_state()
                             : trainer.load_checkpoint(cfg.checkpoint_path);

  std::unique_ptr<io::JsonlWriter> metrics;
  if (!out_dir.empty())
    metrics = std::make_unique<io::JsonlWriter>((fs::path(out_dir) / "metrics.jsonl").string());

  outcome.report = trainer.train_loop(st, [&](const train::MetricsRecord& rec) {
    if (metrics) metrics->write(rec.to_json(trainer.quantizable_names()));
  });

  if (!out_dir.empty()) {
    trainer.save_checkpoint(st, (fs::path(out_dir) / "checkpoint.bin").string());
    nlohmann::json report{{"ok", outcome.report.ok},
                          {"mode", cfg.mode},
                          {"steps_run", outcome.report.steps_run},
                          {"config_hash", config_hash(cfg)},
                          {"initial_eval", eval_to_json(outcome.report.initial_eval)},
                          {"final_eval", eval_to_json(outcome.report.final_eval)},
                          {"wall_seconds", outcome.report.wall_seconds},
                          {"lr_schedule",
                           {{"shape", "warmup-stable-decay"},
                            {"warmup_frac", cfg.warmup_frac},
                            {"stable_frac", cfg.stable_frac},
                            {"final_lr_ratio", cfg.final_lr_ratio}}}};
    if (!outcome.report.ok) report["error"] = outcome.report.error;
    if (outcome.report.has_export) {
      trainer.export_quantized(st, (fs::path(out_dir) / "artifact.bin").string());
      report["exported_eval"] = eval_to_json(outcome.report.exported_eval);
      report["final_effective_gap"] = outcome.report.final_effective_gap;
      report["flip_fraction"] = outcome.report.final_flip_fraction;
      report["dead_zone_fraction"] = outcome.report.final_dead_zone_fraction;
    }
    std::ofstream out((fs::path(out_dir) / "report.json").string());
    out << report.dump(2) << "\n";
  }
  return outcome;
}

inline int cmd_sens(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  cfg.save((fs::path(cfg.out_dir) / "config.json").string());

  data::Dataset ds = data::generate_task(cfg.make_task());
  auto m = cfg.make_model();
  auto calib = calibration_batches(ds, cfg);

  auto report = sens::compute_sensitivity(*m, m->initial_values(), calib, cfg.make_hutch(),
                                          ds.fingerprint);
  nlohmann::json j = sens::to_json(report);

  if (cfg.search_tau_init) {
    std::vector<ad::Tensor> weights;
    std::vector<quant::GroupScales> scales;
    quant::QuantizerConfig qcfg = cfg.make_train().quantizer;
    for (std::size_t i : m->quantizable_indices()) {
      weights.push_back(ad::Tensor::leaf(m->params()[i].shape, m->initial_values()[i]));
      scales.push_back(quant::compute_scale(weights.back(), qcfg));
    }
    const double searched = sens::init_temperature(weights, scales, 1e-3, 10.0);
    j["tau_init_searched"] = searched;
    j["tau_init_default"] = 0.3;
    std::cout << "tau_init search: " << searched << " (default 0.3)\n";
  }

  const std::string path = cfg.resolved_calibration_path();
  fs::create_directories(fs::path(path).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(path).parent_path());
  {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
  }

  std::cout << std::left << std::setw(16) << "tensor" << std::setw(16) << "h" << std::setw(12)
            << "s" << "clamped\n";
  for (const auto& t : report.tensors)
    std::cout << std::left << std::setw(16) << t.name << std::setw(16) << t.raw_trace
              << std::setw(12) << t.score << (t.clamped ? "yes" : "no") << "\n";
  std::cout << "wrote " << path << "\n";
  return 0;
}

inline int cmd_train(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  cfg.save((fs::path(cfg.out_dir) / "config.json").string());

  data::Dataset ds = data::generate_task(cfg.make_task());
  auto m = cfg.make_model();
  TrainOutcome outcome = run_training(cfg, ds, *m, cfg.out_dir);

  const auto& r = outcome.report;
  std::cout << "mode=" << cfg.mode << " steps=" << r.steps_run
            << " heldout_loss=" << r.final_eval.loss;
  if (r.final_eval.accuracy) std::cout << " heldout_acc=" << *r.final_eval.accuracy;
  if (r.has_export) std::cout << " exported_loss=" << r.exported_eval.loss;
  std::cout << "\n";
  if (!r.ok) {
    std::cerr << "training aborted: " << r.error << "\n";
    return 1;
  }
  return 0;
}

inline int cmd_check(const RunConfig& cfg, bool emit_curves) {
  fs::create_directories(cfg.out_dir);
  auto results = verify::run_all_checks();
  nlohmann::json j = verify::checks_to_json(results);
  {
    std::ofstream out((fs::path(cfg.out_dir) / "check.json").string());
    out << j.dump(2) << "\n";
  }
  for (const auto& r : results)
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "\n";

  if (emit_curves) {
    // per-tensor temperature curves (calibration scores when available)
    std::vector<double> scores{0.1, 0.5, 0.9};
    std::vector<std::string> names{"s=0.1", "s=0.5", "s=0.9"};
    const std::string calib = cfg.resolved_calibration_path();
    if (fs::exists(calib)) {
      auto rep = sens::load_calibration(calib);
      scores.clear();
      names.clear();
      for (const auto& t : rep.tensors) {
        scores.push_back(t.score);
        names.push_back(t.name);
      }
    }
    sched::ScheduleConfig scfg;
    scfg.total_steps = cfg.train_steps ? cfg.train_steps : 1000;
    scfg.rho = cfg.rho;
    scfg.tau_init = cfg.tau_init;
    scfg.alpha = cfg.alpha;
    {
      std::ofstream out((fs::path(cfg.out_dir) / "temperature_curves.csv").string());
      out << "step,pressure,base_tau";
      for (const auto& n : names) out << "," << n;
      out << "\n";
      const std::size_t stride = std::max<std::size_t>(1, scfg.total_steps / 500);
      for (std::size_t t = 0; t <= scfg.total_steps; t += stride) {
        out << t << "," << sched::pressure(t, scfg) << "," << sched::base_temperature(t, scfg);
        for (double s : scores) out << "," << sched::scaled_temperature(t, s, scfg);
        out << "\n";
      }
    }
    {
      std::ofstream out((fs::path(cfg.out_dir) / "localization_curves.csv").string());
      out << "tau,fraction_within_0.1gamma,total_variation\n";
      for (double tau : {1.0, 0.3, 0.05, 0.01}) {
        auto q = verify::detail::jacobian_quadrature(0.45, tau);
        out << tau << "," << q.boundary_fraction << "," << q.integral << "\n";
      }
    }
    {
      std::ofstream out((fs::path(cfg.out_dir) / "jacobian_curves.csv").string());
      out << "w_over_gamma,tau,jacobian\n";
      for (double tau : {1.0, 0.3, 0.05}) {
        for (double z = -3.0; z <= 3.0; z += 0.01)
          out << z << "," << tau << "," << verify::closed_form_jacobian(z, 1.0, tau) << "\n";
      }
    }
    std::cout << "curves written to " << cfg.out_dir << "\n";
  }
  return j["all_pass"].get<bool>() ? 0 : 1;
}

inline int cmd_sweep(const RunConfig& base) {
  fs::create_directories(base.out_dir);
  base.save((fs::path(base.out_dir) / "config.json").string());
  std::ofstream csv((fs::path(base.out_dir) / "sweep.csv").string());
  csv << "config_hash,mode,alpha,rho,group_size,seed,final_heldout_loss,exported_heldout_loss,"
         "flip_fraction,dead_zone_fraction,error\n";

  // per-(seed) sensitivity cache: scores depend on the model/task seeds only
  std::map<std::uint64_t, std::string> calib_cache;

  for (const auto& mode : base.sweep_modes)
    for (double alpha : base.sweep_alphas)
      for (double rho : base.sweep_rhos)
        for (std::size_t group : base.sweep_group_sizes)
          for (std::uint64_t seed : base.sweep_seeds) {
            RunConfig cfg = base;
            cfg.mode = mode;
            cfg.alpha = alpha;
            cfg.rho = rho;
            cfg.group_size = group;
            cfg.seed = seed;
            const std::uint64_t hash = config_hash(cfg);
            std::string error;
            double final_loss = 0.0, exported_loss = 0.0, flips = 0.0, dead = 0.0;
            try {
              cfg.validate();
              data::Dataset ds = data::generate_task(cfg.make_task());
              auto m = cfg.make_model();
              if (mode == "hestia" && !cfg.fallback_uniform) {
                auto it = calib_cache.find(seed);
                if (it == calib_cache.end()) {
                  auto calib = calibration_batches(ds, cfg);
                  auto report = sens::compute_sensitivity(*m, m->initial_values(), calib,
                                                          cfg.make_hutch(), ds.fingerprint);
                  const std::string path =
                      (fs::path(base.out_dir) / ("calibration_seed" + std::to_string(seed) +
                                                 ".json"))
                          .string();
                  sens::save_calibration(report, path);
                  it = calib_cache.emplace(seed, path).first;
                }
                cfg.calibration_path = it->second;
              }
              TrainOutcome outcome = run_training(cfg, ds, *m, "");
              if (!outcome.report.ok) {
                error = outcome.report.error;
              } else {
                final_loss = outcome.report.final_eval.loss;
                exported_loss =
                    outcome.report.has_export ? outcome.report.exported_eval.loss : final_loss;
                flips = outcome.report.final_flip_fraction;
                dead = outcome.report.final_dead_zone_fraction;
              }
            } catch (const std::exception& e) {
              error = e.what();
            }
            csv << hash << "," << mode << "," << alpha << "," << rho << "," << group << ","
                << seed << ",";
            if (error.empty())
              csv << final_loss << "," << exported_loss << "," << flips << "," << dead << ",";
            else
              csv << ",,,,\"" << error << "\"";
            csv << "\n";
            csv.flush();
          }
  std::cout << "wrote " << (fs::path(base.out_dir) / "sweep.csv").string() << "\n";
  return 0;
}

inline int cmd_export(const RunConfig& cfg, const std::string& checkpoint,
                      const std::string& output) {
  cfg.validate();
  data::Dataset ds = data::generate_task(cfg.make_task());
  auto m = cfg.make_model();
  train::Trainer trainer(*m, ds, cfg.make_train(), {});
  train::TrainState st = trainer.load_checkpoint(checkpoint);
  const std::string out = output.empty() ? "artifact.bin" : output;
  trainer.export_quantized(st, out);
  auto hist = train::code_histogram(io::load_container(out));
  std::cout << "wrote " << out << "  codes: -1: " << hist[0] << "  0: " << hist[1]
            << "  +1: " << hist[2] << "\n";
  return 0;
}

}  // namespace hestia::cli
