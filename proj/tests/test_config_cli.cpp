#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "hestia/cli.hpp"

using namespace hestia;
using cli::RunConfig;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("hestia_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

RunConfig tiny_run(const std::string& out) {
  RunConfig cfg;
  cfg.out_dir = out;
  cfg.train_steps = 20;
  cfg.batch_size = 16;
  cfg.train_size = 128;
  cfg.heldout_size = 32;
  cfg.hidden_dims = {8};
  cfg.input_dim = 4;
  cfg.teacher_hidden = {8};
  cfg.calib_batches = 1;
  cfg.calib_batch_size = 32;
  cfg.group_size = 0;
  cfg.log_every = 5;
  return cfg;
}

}  // namespace

TEST(RunConfig, RoundTripIsIdentity) {
  RunConfig cfg;
  cfg.seed = 123;
  cfg.rho = 0.31;
  cfg.hidden_dims = {32, 16};
  cfg.sweep_seeds = {4, 5};
  nlohmann::json j1 = cfg.to_json();
  RunConfig parsed = RunConfig::from_json(j1);
  nlohmann::json j2 = parsed.to_json();
  EXPECT_EQ(j1, j2);
  RunConfig reparsed = RunConfig::from_json(j2);
  EXPECT_EQ(reparsed.to_json(), j2);
}

TEST(RunConfig, UnknownKeysRejected) {
  nlohmann::json j{{"schedule.rho", 0.2}, {"schedule.rhoo", 0.3}};
  EXPECT_THROW(RunConfig::from_json(j), std::invalid_argument);
}

TEST(RunConfig, OverrideParsing) {
  RunConfig cfg;
  cfg.apply_override("schedule.rho=0.35");
  EXPECT_DOUBLE_EQ(cfg.rho, 0.35);
  cfg.apply_override("mode=ste");
  EXPECT_EQ(cfg.mode, "ste");
  cfg.apply_override("model.hidden_dims=[8,4]");
  EXPECT_EQ(cfg.hidden_dims, (std::vector<std::size_t>{8, 4}));
  cfg.apply_override("sens.fallback_uniform=true");
  EXPECT_TRUE(cfg.fallback_uniform);
  EXPECT_THROW(cfg.apply_override("no_equals_sign"), std::invalid_argument);
  EXPECT_THROW(cfg.apply_override("bogus.key=1"), std::invalid_argument);
}

TEST(RunConfig, ValidationCatchesBadValues) {
  RunConfig cfg;
  cfg.rho = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = RunConfig{};
  cfg.eps_gamma = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = RunConfig{};
  cfg.model_kind = "cnn";
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(AssembleConfig, EnvSeedBeatsFileButLosesToOverride) {
  TempDir dir("cfg");
  RunConfig base;
  base.seed = 10;
  base.save((dir.path / "c.json").string());

  setenv("HESTIA_SEED", "77", 1);
  RunConfig from_env = cli::assemble_config((dir.path / "c.json").string(), {});
  EXPECT_EQ(from_env.seed, 77u);
  RunConfig with_override =
      cli::assemble_config((dir.path / "c.json").string(), {"seed=123"});
  EXPECT_EQ(with_override.seed, 123u);
  unsetenv("HESTIA_SEED");
  RunConfig plain = cli::assemble_config((dir.path / "c.json").string(), {});
  EXPECT_EQ(plain.seed, 10u);
}

TEST(CmdSens, ByteIdenticalRerunsAndEntryCount) {
  TempDir dir("sens");
  RunConfig cfg = tiny_run(dir.str());
  cfg.seed = 5;

  ASSERT_EQ(cli::cmd_sens(cfg), 0);
  std::string first = slurp(dir.path / "calibration.json");
  ASSERT_EQ(cli::cmd_sens(cfg), 0);
  std::string second = slurp(dir.path / "calibration.json");
  EXPECT_EQ(first, second);

  auto report = sens::load_calibration((dir.path / "calibration.json").string());
  auto m = cfg.make_model();
  EXPECT_EQ(report.tensors.size(), m->quantizable_indices().size());
}

TEST(CmdTrain, FullPrecisionReportHasNoQuantFields) {
  TempDir dir("fp");
  RunConfig cfg = tiny_run(dir.str());
  cfg.mode = "full_precision";
  ASSERT_EQ(cli::cmd_train(cfg), 0);
  nlohmann::json report = nlohmann::json::parse(slurp(dir.path / "report.json"));
  EXPECT_FALSE(report.contains("exported_eval"));
  EXPECT_FALSE(report.contains("flip_fraction"));
  EXPECT_TRUE(fs::exists(dir.path / "config.json"));
  EXPECT_TRUE(fs::exists(dir.path / "metrics.jsonl"));
  EXPECT_TRUE(fs::exists(dir.path / "checkpoint.bin"));
  EXPECT_FALSE(fs::exists(dir.path / "artifact.bin"));
}

TEST(CmdTrain, ZeroStepsEqualsInitialEvaluation) {
  TempDir dir("zero");
  RunConfig cfg = tiny_run(dir.str());
  cfg.mode = "hestia";
  cfg.fallback_uniform = true;
  cfg.train_steps = 0;
  ASSERT_EQ(cli::cmd_train(cfg), 0);
  nlohmann::json report = nlohmann::json::parse(slurp(dir.path / "report.json"));
  EXPECT_EQ(report["steps_run"], 0);
  EXPECT_DOUBLE_EQ(report["initial_eval"]["loss"].get<double>(),
                   report["final_eval"]["loss"].get<double>());
}

TEST(CmdTrain, HestiaWithoutCalibrationFailsClearly) {
  TempDir dir("nocalib");
  RunConfig cfg = tiny_run(dir.str());
  cfg.mode = "hestia";
  cfg.calibration_path = (dir.path / "missing.json").string();
  EXPECT_THROW(
      {
        data::Dataset ds = data::generate_task(cfg.make_task());
        auto m = cfg.make_model();
        cli::run_training(cfg, ds, *m, "");
      },
      std::runtime_error);
}

TEST(CmdTrain, RunDirectoryEnablesExactReproduction) {
  TempDir dir("repro");
  RunConfig cfg = tiny_run(dir.str());
  cfg.mode = "ste";
  ASSERT_EQ(cli::cmd_train(cfg), 0);
  std::string metrics_a = slurp(dir.path / "metrics.jsonl");

  // reload the resolved config from the run directory and rerun elsewhere
  RunConfig reloaded = RunConfig::from_file((dir.path / "config.json").string());
  TempDir dir2("repro2");
  reloaded.out_dir = dir2.str();
  ASSERT_EQ(cli::cmd_train(reloaded), 0);
  EXPECT_EQ(metrics_a, slurp(dir2.path / "metrics.jsonl"));
}

TEST(CmdSweep, SingleCellGridProducesOneDataRow) {
  TempDir dir("sweep");
  RunConfig cfg = tiny_run(dir.str());
  cfg.sweep_modes = {"ste"};
  cfg.sweep_alphas = {0.4};
  cfg.sweep_rhos = {0.2};
  cfg.sweep_group_sizes = {0};
  cfg.sweep_seeds = {3};
  ASSERT_EQ(cli::cmd_sweep(cfg), 0);
  std::ifstream in(dir.path / "sweep.csv");
  std::string header, row, extra;
  ASSERT_TRUE(static_cast<bool>(std::getline(in, header)));
  ASSERT_TRUE(static_cast<bool>(std::getline(in, row)));
  EXPECT_FALSE(static_cast<bool>(std::getline(in, extra)));
  EXPECT_NE(header.find("config_hash"), std::string::npos);
  EXPECT_NE(row.find("ste"), std::string::npos);
  EXPECT_EQ(row.back(), ',');  // empty error column
}

TEST(CmdSweep, AlphaAblationRowsPresent) {
  TempDir dir("ablate");
  RunConfig cfg = tiny_run(dir.str());
  cfg.fallback_uniform = true;  // keep the grid cheap
  cfg.sweep_modes = {"hestia"};
  cfg.sweep_alphas = {0.0, 0.4};
  cfg.sweep_group_sizes = {0};
  cfg.sweep_seeds = {1};
  ASSERT_EQ(cli::cmd_sweep(cfg), 0);
  auto csv = slurp(dir.path / "sweep.csv");
  EXPECT_NE(csv.find("hestia,0,"), std::string::npos);
  EXPECT_NE(csv.find("hestia,0.4,"), std::string::npos);
}

TEST(CmdCheck, PassesAndWritesMachineReadableReport) {
  TempDir dir("check");
  RunConfig cfg;
  cfg.out_dir = dir.str();
  ASSERT_EQ(cli::cmd_check(cfg, /*emit_curves=*/true), 0);
  nlohmann::json j = nlohmann::json::parse(slurp(dir.path / "check.json"));
  EXPECT_TRUE(j["all_pass"].get<bool>());
  bool has_localization = false;
  for (const auto& c : j["checks"]) {
    if (c["name"] == "boundary_localization") {
      has_localization = true;
      EXPECT_EQ(c["details"]["fractions"].size(), 4u);
    }
  }
  EXPECT_TRUE(has_localization);
  EXPECT_TRUE(fs::exists(dir.path / "temperature_curves.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "localization_curves.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "jacobian_curves.csv"));
}

TEST(CheckSuite, CorruptedJacobianIsCaughtWithOffendingPoint) {
  // harness hook: perturb the closed form and confirm the checker reports it
  auto corrupted = [](double w, double gamma, double tau) {
    return verify::closed_form_jacobian(w, gamma, tau) * 1.001;
  };
  auto result = verify::check_jacobian_closed_form(corrupted);
  EXPECT_FALSE(result.pass);
  ASSERT_TRUE(result.details.contains("offending_point"));
  EXPECT_TRUE(result.details["offending_point"].contains("w"));
  EXPECT_TRUE(result.details["offending_point"].contains("tau"));
}

TEST(CmdExport, RoundTripsThroughCheckpoint) {
  TempDir dir("export");
  RunConfig cfg = tiny_run(dir.str());
  cfg.mode = "ste";
  ASSERT_EQ(cli::cmd_train(cfg), 0);
  const std::string artifact = (dir.path / "exported_again.bin").string();
  ASSERT_EQ(cli::cmd_export(cfg, (dir.path / "checkpoint.bin").string(), artifact), 0);
  EXPECT_EQ(slurp(dir.path / "artifact.bin"), slurp(artifact));
}
