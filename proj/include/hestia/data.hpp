#pragma once

// Synthetic tasks sized for desk-scale QAT comparisons. Generation is a pure
// function of the task config, with separate seed streams for the train and
// held-out splits.

#include <fstream>
#include <string>

#include <json.hpp>

#include "hestia/models.hpp"
#include "hestia/random.hpp"

namespace hestia::data {

enum class TaskKind {
  teacher_student_regression,
  gaussian_cluster_classification,
  sequence_copy,
};

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::teacher_student_regression: return "teacher_student_regression";
    case TaskKind::gaussian_cluster_classification: return "gaussian_cluster_classification";
    case TaskKind::sequence_copy: return "sequence_copy";
  }
  return "?";
}

inline TaskKind task_kind_from(const std::string& s) {
  if (s == "teacher_student_regression") return TaskKind::teacher_student_regression;
  if (s == "gaussian_cluster_classification") return TaskKind::gaussian_cluster_classification;
  if (s == "sequence_copy") return TaskKind::sequence_copy;
  throw std::invalid_argument("unknown task kind '" + s + "'");
}

struct TaskConfig {
  TaskKind kind = TaskKind::teacher_student_regression;
  std::uint64_t seed = 0;
  std::size_t train_size = 8192;
  std::size_t heldout_size = 1024;
  double noise = 0.01;

  // teacher-student
  std::size_t input_dim = 16;
  std::size_t output_dim = 1;
  std::vector<std::size_t> teacher_hidden = {64, 64};

  // clusters
  std::size_t clusters = 4;
  double cluster_sep = 10.0;

  // sequence copy
  std::size_t vocab = 32;
  std::size_t seq_len = 16;

  void validate() const {
    if (train_size == 0 || heldout_size == 0)
      throw std::invalid_argument("TaskConfig: split sizes must be positive");
    if (noise < 0.0) throw std::invalid_argument("TaskConfig: noise < 0");
    if (kind == TaskKind::gaussian_cluster_classification && clusters > input_dim)
      throw std::invalid_argument("TaskConfig: clusters must not exceed input_dim");
  }
};

struct Dataset {
  model::Batch train;
  model::Batch heldout;
  std::uint64_t fingerprint = 0;
};

// The frozen teacher for the regression task; tests rebuild it from here.
inline model::MlpSpec teacher_spec_of(const TaskConfig& task) {
  model::MlpSpec spec;
  spec.input_dim = task.input_dim;
  spec.hidden_dims = task.teacher_hidden;
  spec.output_dim = task.output_dim;
  spec.seed = rng::derive_seed(task.seed, "teacher");
  return spec;
}

namespace detail {

inline model::Batch regression_split(const TaskConfig& task, const model::Mlp& teacher,
                                     std::size_t n, std::uint64_t seed) {
  model::Batch b;
  b.rows = n;
  b.in_dim = task.input_dim;
  b.out_dim = task.output_dim;
  b.inputs = rng::gaussian(n * task.input_dim, rng::derive_seed(seed, "x"));
  auto leaves = model::as_leaves(teacher, teacher.initial_values(), false);
  ad::Tensor pred =
      teacher.forward(leaves, ad::Tensor::leaf({n, task.input_dim}, b.inputs));
  b.targets = pred.values();
  if (task.noise > 0.0) {
    auto eps = rng::gaussian(b.targets.size(), rng::derive_seed(seed, "noise"), 0.0, task.noise);
    for (std::size_t i = 0; i < b.targets.size(); ++i) b.targets[i] += eps[i];
  }
  return b;
}

inline model::Batch cluster_split(const TaskConfig& task, std::size_t n, std::uint64_t seed) {
  model::Batch b;
  b.rows = n;
  b.in_dim = task.input_dim;
  b.out_dim = task.clusters;
  b.inputs = rng::gaussian(n * task.input_dim, rng::derive_seed(seed, "x"));
  auto assign = rng::sample_indices(n, task.clusters, rng::derive_seed(seed, "label"));
  b.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    b.labels[i] = static_cast<int>(assign[i]);
    // axis-aligned means: cluster c sits at cluster_sep * e_c
    b.inputs[i * task.input_dim + assign[i]] += task.cluster_sep;
  }
  return b;
}

inline model::Batch copy_split(const TaskConfig& task, std::size_t n, std::uint64_t seed) {
  model::Batch b;
  b.rows = n;
  b.seq_len = task.seq_len;
  b.tokens.resize(n * task.seq_len);
  auto bases = rng::sample_indices(n, task.vocab, rng::derive_seed(seed, "base"));
  auto noise_draws = rng::uniform(n * task.seq_len, rng::derive_seed(seed, "corrupt"), 0.0, 1.0);
  auto replacements =
      rng::sample_indices(n * task.seq_len, task.vocab, rng::derive_seed(seed, "replace"));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < task.seq_len; ++i) {
      const std::size_t k = s * task.seq_len + i;
      bool corrupt = i > 0 && noise_draws[k] < task.noise;
      b.tokens[k] = static_cast<int>(corrupt ? replacements[k] : bases[s]);
    }
  }
  return b;
}

inline std::uint64_t fingerprint_of(const Dataset& d, const TaskConfig& task) {
  std::uint64_t h = rng::fnv1a(to_string(task.kind));
  auto mix = [&h](const model::Batch& b) {
    if (!b.inputs.empty()) h = rng::fnv1a(b.inputs.data(), b.inputs.size() * sizeof(double), h);
    if (!b.targets.empty())
      h = rng::fnv1a(b.targets.data(), b.targets.size() * sizeof(double), h);
    if (!b.labels.empty()) h = rng::fnv1a(b.labels.data(), b.labels.size() * sizeof(int), h);
    if (!b.tokens.empty()) h = rng::fnv1a(b.tokens.data(), b.tokens.size() * sizeof(int), h);
  };
  mix(d.train);
  mix(d.heldout);
  return h;
}

}  // namespace detail

inline Dataset generate_task(const TaskConfig& task) {
  task.validate();
  Dataset out;
  const std::uint64_t train_seed = rng::derive_seed(task.seed, "train");
  const std::uint64_t heldout_seed = rng::derive_seed(task.seed, "heldout");
  switch (task.kind) {
    case TaskKind::teacher_student_regression: {
      model::Mlp teacher(teacher_spec_of(task));
      out.train = detail::regression_split(task, teacher, task.train_size, train_seed);
      out.heldout = detail::regression_split(task, teacher, task.heldout_size, heldout_seed);
      break;
    }
    case TaskKind::gaussian_cluster_classification:
      out.train = detail::cluster_split(task, task.train_size, train_seed);
      out.heldout = detail::cluster_split(task, task.heldout_size, heldout_seed);
      break;
    case TaskKind::sequence_copy:
      out.train = detail::copy_split(task, task.train_size, train_seed);
      out.heldout = detail::copy_split(task, task.heldout_size, heldout_seed);
      break;
  }
  out.fingerprint = detail::fingerprint_of(out, task);
  return out;
}

// --- optional dump/load: flat f64 binary plus a JSON sidecar with shapes ----

inline void dump_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream bin(path + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("dump_dataset: cannot open " + path + ".bin");
  auto write_block = [&](const std::vector<double>& v) {
    bin.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  auto as_f64 = [](const std::vector<int>& v) {
    return std::vector<double>(v.begin(), v.end());
  };
  auto describe = [](const model::Batch& b) {
    return nlohmann::json{{"rows", b.rows},       {"in_dim", b.in_dim},
                          {"out_dim", b.out_dim}, {"seq_len", b.seq_len},
                          {"inputs", b.inputs.size()},  {"targets", b.targets.size()},
                          {"labels", b.labels.size()},  {"tokens", b.tokens.size()}};
  };
  for (const auto* b : {&ds.train, &ds.heldout}) {
    write_block(b->inputs);
    write_block(b->targets);
    write_block(as_f64(b->labels));
    write_block(as_f64(b->tokens));
  }
  std::ofstream side(path + ".json");
  side << nlohmann::json{{"format", "hestia-dataset-v1"},
                         {"train", describe(ds.train)},
                         {"heldout", describe(ds.heldout)},
                         {"fingerprint", ds.fingerprint}}
              .dump(2)
       << "\n";
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side) throw std::runtime_error("load_dataset: cannot open " + path + ".json");
  nlohmann::json meta = nlohmann::json::parse(side);
  std::ifstream bin(path + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("load_dataset: cannot open " + path + ".bin");

  auto read_block = [&](std::size_t count) {
    std::vector<double> v(count);
    bin.read(reinterpret_cast<char*>(v.data()),
             static_cast<std::streamsize>(count * sizeof(double)));
    if (!bin) throw std::runtime_error("load_dataset: truncated " + path + ".bin");
    return v;
  };
  auto read_batch = [&](const nlohmann::json& d) {
    model::Batch b;
    b.rows = d.at("rows").get<std::size_t>();
    b.in_dim = d.at("in_dim").get<std::size_t>();
    b.out_dim = d.at("out_dim").get<std::size_t>();
    b.seq_len = d.at("seq_len").get<std::size_t>();
    b.inputs = read_block(d.at("inputs").get<std::size_t>());
    b.targets = read_block(d.at("targets").get<std::size_t>());
    auto labels = read_block(d.at("labels").get<std::size_t>());
    auto tokens = read_block(d.at("tokens").get<std::size_t>());
    b.labels.assign(labels.begin(), labels.end());
    b.tokens.assign(tokens.begin(), tokens.end());
    return b;
  };
  Dataset ds;
  ds.train = read_batch(meta.at("train"));
  ds.heldout = read_batch(meta.at("heldout"));
  ds.fingerprint = meta.at("fingerprint").get<std::uint64_t>();
  return ds;
}

// Gather rows (or sequences) of a batch by index.
inline model::Batch take_batch(const model::Batch& full, const std::vector<std::size_t>& idx) {
  model::Batch b;
  b.rows = idx.size();
  b.in_dim = full.in_dim;
  b.out_dim = full.out_dim;
  b.seq_len = full.seq_len;
  for (std::size_t i : idx) {
    if (!full.inputs.empty())
      b.inputs.insert(b.inputs.end(), full.inputs.begin() + static_cast<long>(i * full.in_dim),
                      full.inputs.begin() + static_cast<long>((i + 1) * full.in_dim));
    if (!full.targets.empty())
      b.targets.insert(b.targets.end(),
                       full.targets.begin() + static_cast<long>(i * full.out_dim),
                       full.targets.begin() + static_cast<long>((i + 1) * full.out_dim));
    if (!full.labels.empty()) b.labels.push_back(full.labels[i]);
    if (!full.tokens.empty())
      b.tokens.insert(b.tokens.end(), full.tokens.begin() + static_cast<long>(i * full.seq_len),
                      full.tokens.begin() + static_cast<long>((i + 1) * full.seq_len));
  }
  return b;
}

// Deterministic minibatch for a given step.
inline model::Batch batch_for_step(const model::Batch& train, std::size_t batch_size,
                                   std::uint64_t seed, std::size_t step) {
  auto idx = rng::sample_indices(std::min(batch_size, train.rows), train.rows,
                                 rng::derive_seed(seed, "batch", step));
  return take_batch(train, idx);
}

}  // namespace hestia::data
