#pragma once

// Run configuration: one flat JSON document with dotted keys, every field
// defaulted, unknown keys rejected. The fully resolved config is written into
// each run directory so a run can be reproduced from its artifacts alone.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "hestia/data.hpp"
#include "hestia/models.hpp"
#include "hestia/sensitivity.hpp"
#include "hestia/trainer.hpp"

namespace hestia::cli {

struct RunConfig {
  std::string mode = "hestia";
  std::uint64_t seed = 42;
  std::string out_dir = "runs/latest";

  std::size_t train_steps = 2000;
  std::size_t batch_size = 64;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double grad_clip = 1.0;
  std::size_t log_every = 10;
  double warmup_frac = 0.05;
  double stable_frac = 0.80;
  double final_lr_ratio = 0.10;
  std::string checkpoint_path;

  double rho = 0.2;
  double tau_init = 0.3;
  double alpha = 0.4;

  std::size_t group_size = 128;
  double eps_gamma = 1e-8;
  double tau_min = 1e-4;

  std::size_t sketch_rank = 10;
  std::size_t hutch_samples = 20;
  double kappa = 1.0;
  double sens_epsilon = 1e-8;
  std::size_t calib_batches = 2;
  std::size_t calib_batch_size = 50;
  std::string calibration_path;
  bool fallback_uniform = false;
  bool search_tau_init = false;

  std::string model_kind = "mlp";
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims = {64, 64};
  std::size_t output_dim = 1;
  std::string nonlinearity = "gelu";
  std::size_t vocab = 32;
  std::size_t model_dim = 32;
  std::size_t seq_len = 16;
  std::size_t heads = 1;
  std::size_t layers = 1;
  std::uint64_t model_seed = 0;  // 0: derived from seed

  std::string task_kind = "teacher_student_regression";
  std::size_t train_size = 8192;
  std::size_t heldout_size = 1024;
  double noise = 0.01;
  std::vector<std::size_t> teacher_hidden;  // empty: mirror hidden_dims
  std::size_t clusters = 4;
  double cluster_sep = 10.0;
  std::uint64_t task_seed = 0;  // 0: derived from seed

  std::vector<std::string> sweep_modes = {"hestia", "ste"};
  std::vector<double> sweep_alphas = {0.4};
  std::vector<double> sweep_rhos = {0.2};
  std::vector<std::size_t> sweep_group_sizes = {128};
  std::vector<std::uint64_t> sweep_seeds = {1, 2, 3};

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"mode", mode},
        {"seed", seed},
        {"out_dir", out_dir},
        {"train.steps", train_steps},
        {"train.batch_size", batch_size},
        {"train.lr", lr},
        {"train.beta1", beta1},
        {"train.beta2", beta2},
        {"train.weight_decay", weight_decay},
        {"train.grad_clip", grad_clip},
        {"train.log_every", log_every},
        {"train.warmup_frac", warmup_frac},
        {"train.stable_frac", stable_frac},
        {"train.final_lr_ratio", final_lr_ratio},
        {"train.checkpoint_path", checkpoint_path},
        {"schedule.rho", rho},
        {"schedule.tau_init", tau_init},
        {"schedule.alpha", alpha},
        {"quant.group_size", group_size},
        {"quant.eps_gamma", eps_gamma},
        {"quant.tau_min", tau_min},
        {"hutch.sketch_rank", sketch_rank},
        {"hutch.samples", hutch_samples},
        {"hutch.kappa", kappa},
        {"hutch.epsilon", sens_epsilon},
        {"hutch.calib_batches", calib_batches},
        {"hutch.calib_batch_size", calib_batch_size},
        {"sens.calibration_path", calibration_path},
        {"sens.fallback_uniform", fallback_uniform},
        {"sens.search_tau_init", search_tau_init},
        {"model.kind", model_kind},
        {"model.input_dim", input_dim},
        {"model.hidden_dims", hidden_dims},
        {"model.output_dim", output_dim},
        {"model.nonlinearity", nonlinearity},
        {"model.vocab", vocab},
        {"model.dim", model_dim},
        {"model.seq_len", seq_len},
        {"model.heads", heads},
        {"model.layers", layers},
        {"model.seed", model_seed},
        {"task.kind", task_kind},
        {"task.train_size", train_size},
        {"task.heldout_size", heldout_size},
        {"task.noise", noise},
        {"task.teacher_hidden", teacher_hidden},
        {"task.clusters", clusters},
        {"task.cluster_sep", cluster_sep},
        {"task.seed", task_seed},
        {"sweep.modes", sweep_modes},
        {"sweep.alphas", sweep_alphas},
        {"sweep.rhos", sweep_rhos},
        {"sweep.group_sizes", sweep_group_sizes},
        {"sweep.seeds", sweep_seeds},
    };
  }

  void apply(const std::string& key, const nlohmann::json& v) {
    if (key == "mode") mode = v.get<std::string>();
    else if (key == "seed") seed = v.get<std::uint64_t>();
    else if (key == "out_dir") out_dir = v.get<std::string>();
    else if (key == "train.steps") train_steps = v.get<std::size_t>();
    else if (key == "train.batch_size") batch_size = v.get<std::size_t>();
    else if (key == "train.lr") lr = v.get<double>();
    else if (key == "train.beta1") beta1 = v.get<double>();
    else if (key == "train.beta2") beta2 = v.get<double>();
    else if (key == "train.weight_decay") weight_decay = v.get<double>();
    else if (key == "train.grad_clip") grad_clip = v.get<double>();
    else if (key == "train.log_every") log_every = v.get<std::size_t>();
    else if (key == "train.warmup_frac") warmup_frac = v.get<double>();
    else if (key == "train.stable_frac") stable_frac = v.get<double>();
    else if (key == "train.final_lr_ratio") final_lr_ratio = v.get<double>();
    else if (key == "train.checkpoint_path") checkpoint_path = v.get<std::string>();
    else if (key == "schedule.rho") rho = v.get<double>();
    else if (key == "schedule.tau_init") tau_init = v.get<double>();
    else if (key == "schedule.alpha") alpha = v.get<double>();
    else if (key == "quant.group_size") group_size = v.get<std::size_t>();
    else if (key == "quant.eps_gamma") eps_gamma = v.get<double>();
    else if (key == "quant.tau_min") tau_min = v.get<double>();
    else if (key == "hutch.sketch_rank") sketch_rank = v.get<std::size_t>();
    else if (key == "hutch.samples") hutch_samples = v.get<std::size_t>();
    else if (key == "hutch.kappa") kappa = v.get<double>();
    else if (key == "hutch.epsilon") sens_epsilon = v.get<double>();
    else if (key == "hutch.calib_batches") calib_batches = v.get<std::size_t>();
    else if (key == "hutch.calib_batch_size") calib_batch_size = v.get<std::size_t>();
    else if (key == "sens.calibration_path") calibration_path = v.get<std::string>();
    else if (key == "sens.fallback_uniform") fallback_uniform = v.get<bool>();
    else if (key == "sens.search_tau_init") search_tau_init = v.get<bool>();
    else if (key == "model.kind") model_kind = v.get<std::string>();
    else if (key == "model.input_dim") input_dim = v.get<std::size_t>();
    else if (key == "model.hidden_dims") hidden_dims = v.get<std::vector<std::size_t>>();
    else if (key == "model.output_dim") output_dim = v.get<std::size_t>();
    else if (key == "model.nonlinearity") nonlinearity = v.get<std::string>();
    else if (key == "model.vocab") vocab = v.get<std::size_t>();
    else if (key == "model.dim") model_dim = v.get<std::size_t>();
    else if (key == "model.seq_len") seq_len = v.get<std::size_t>();
    else if (key == "model.heads") heads = v.get<std::size_t>();
    else if (key == "model.layers") layers = v.get<std::size_t>();
    else if (key == "model.seed") model_seed = v.get<std::uint64_t>();
    else if (key == "task.kind") task_kind = v.get<std::string>();
    else if (key == "task.train_size") train_size = v.get<std::size_t>();
    else if (key == "task.heldout_size") heldout_size = v.get<std::size_t>();
    else if (key == "task.noise") noise = v.get<double>();
    else if (key == "task.teacher_hidden") teacher_hidden = v.get<std::vector<std::size_t>>();
    else if (key == "task.clusters") clusters = v.get<std::size_t>();
    else if (key == "task.cluster_sep") cluster_sep = v.get<double>();
    else if (key == "task.seed") task_seed = v.get<std::uint64_t>();
    else if (key == "sweep.modes") sweep_modes = v.get<std::vector<std::string>>();
    else if (key == "sweep.alphas") sweep_alphas = v.get<std::vector<double>>();
    else if (key == "sweep.rhos") sweep_rhos = v.get<std::vector<double>>();
    else if (key == "sweep.group_sizes") sweep_group_sizes = v.get<std::vector<std::size_t>>();
    else if (key == "sweep.seeds") sweep_seeds = v.get<std::vector<std::uint64_t>>();
    else throw std::invalid_argument("RunConfig: unknown key '" + key + "'");
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig cfg;
    for (const auto& [key, value] : j.items()) cfg.apply(key, value);
    return cfg;
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("RunConfig: cannot open " + path);
    return from_json(nlohmann::json::parse(in));
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("RunConfig: cannot write " + path);
    out << to_json().dump(2) << "\n";
  }

  // Parse a command-line override "key=value"; bare scalars are interpreted
  // as JSON when possible and as strings otherwise.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override must look like key=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json v = nlohmann::json::parse(raw, nullptr, false);
    if (v.is_discarded()) v = raw;
    apply(key, v);
  }

  // --- derived objects -------------------------------------------------------

  std::uint64_t effective_model_seed() const {
    return model_seed ? model_seed : rng::derive_seed(seed, "model");
  }
  std::uint64_t effective_task_seed() const {
    return task_seed ? task_seed : rng::derive_seed(seed, "task");
  }

  data::TaskConfig make_task() const {
    data::TaskConfig t;
    t.kind = data::task_kind_from(task_kind);
    t.seed = effective_task_seed();
    t.train_size = train_size;
    t.heldout_size = heldout_size;
    t.noise = noise;
    t.input_dim = input_dim;
    t.output_dim = output_dim;
    t.teacher_hidden = teacher_hidden.empty() ? hidden_dims : teacher_hidden;
    t.clusters = clusters;
    t.cluster_sep = cluster_sep;
    t.vocab = vocab;
    t.seq_len = seq_len;
    if (t.kind == data::TaskKind::gaussian_cluster_classification) t.output_dim = clusters;
    return t;
  }

  std::unique_ptr<model::Model> make_model() const {
    if (model_kind == "mlp") {
      model::MlpSpec spec;
      spec.input_dim = input_dim;
      spec.hidden_dims = hidden_dims;
      spec.output_dim =
          task_kind == "gaussian_cluster_classification" ? clusters : output_dim;
      spec.nonlinearity = nonlinearity;
      spec.seed = effective_model_seed();
      return model::build_model(spec);
    }
    if (model_kind == "transformer") {
      model::TinyTransformerSpec spec;
      spec.vocab = vocab;
      spec.dim = model_dim;
      spec.heads = heads;
      spec.layers = layers;
      spec.seq_len = seq_len;
      spec.seed = effective_model_seed();
      return model::build_model(spec);
    }
    throw std::invalid_argument("RunConfig: unknown model kind '" + model_kind + "'");
  }

  train::TrainConfig make_train() const {
    train::TrainConfig t;
    t.mode = train::mode_from(mode);
    t.total_steps = train_steps;
    t.batch_size = batch_size;
    t.lr = lr;
    t.beta1 = beta1;
    t.beta2 = beta2;
    t.weight_decay = weight_decay;
    t.grad_clip = grad_clip;
    t.log_every = log_every;
    t.seed = seed;
    t.warmup_frac = warmup_frac;
    t.stable_frac = stable_frac;
    t.final_lr_ratio = final_lr_ratio;
    t.schedule.rho = rho;
    t.schedule.tau_init = tau_init;
    t.schedule.alpha = alpha;
    t.schedule.total_steps = std::max<std::size_t>(train_steps, 1);
    t.quantizer.group_size = group_size;
    t.quantizer.eps_gamma = eps_gamma;
    t.quantizer.tau_min = tau_min;
    return t;
  }

  sens::HutchConfig make_hutch() const {
    sens::HutchConfig h;
    h.sketch_rank = sketch_rank;
    h.hutchinson_samples = hutch_samples;
    h.seed = rng::derive_seed(seed, "hutch");
    h.kappa = kappa;
    h.epsilon = sens_epsilon;
    return h;
  }

  std::string resolved_calibration_path() const {
    if (!calibration_path.empty()) return calibration_path;
    return (std::filesystem::path(out_dir) / "calibration.json").string();
  }

  void validate() const {
    make_task().validate();
    make_train().validate();
    make_hutch().validate();
    if (eps_gamma <= 0.0) throw std::invalid_argument("RunConfig: quant.eps_gamma must be > 0");
    if (calib_batches == 0 || calib_batch_size == 0)
      throw std::invalid_argument("RunConfig: calibration sizes must be positive");
    (void)make_model();
  }
};

}  // namespace hestia::cli
