#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>

#include "hestia/sensitivity.hpp"
#include "support/gradcheck.hpp"

using namespace hestia;
using ad::Tensor;
using sens::HutchConfig;
using sens::MatVec;

namespace {

MatVec dense_matvec(const std::vector<double>& m, std::size_t d) {
  return [m, d](const std::vector<double>& v) {
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) out[i] += m[i * d + j] * v[j];
    return out;
  };
}

std::vector<double> random_psd(std::size_t d, std::uint64_t seed) {
  auto a = rng::gaussian(d * d, seed);
  std::vector<double> h(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += a[k * d + i] * a[k * d + j];
      h[i * d + j] = acc / static_cast<double>(d);
    }
  return h;
}

double exact_trace(const std::vector<double>& m, std::size_t d) {
  double t = 0.0;
  for (std::size_t i = 0; i < d; ++i) t += m[i * d + i];
  return t;
}

// Quadratic toy model: loss = 1/2 w A w^T for a single quantizable row vector.
class QuadraticModel : public model::Model {
 public:
  QuadraticModel(std::vector<double> a, std::size_t d) : d_(d) {
    specs_.push_back({"w", {1, d}, true});
    values_.push_back(std::vector<double>(d, 0.3));
    a_ = Tensor::leaf({d, d}, std::move(a));
  }
  const std::vector<model::ParamSpec>& params() const override { return specs_; }
  const std::vector<std::vector<double>>& initial_values() const override { return values_; }
  ad::Tensor loss(const std::vector<Tensor>& p, const model::Batch&) const override {
    return ad::scale(ad::sum(ad::mul(ad::matmul(p[0], a_), p[0])), 0.5);
  }

 private:
  std::size_t d_;
  Tensor a_;
  std::vector<model::ParamSpec> specs_;
  std::vector<std::vector<double>> values_;
};

class LinearModel : public model::Model {
 public:
  explicit LinearModel(std::size_t d) {
    specs_.push_back({"w", {1, d}, true});
    values_.push_back(std::vector<double>(d, 0.1));
  }
  const std::vector<model::ParamSpec>& params() const override { return specs_; }
  const std::vector<std::vector<double>>& initial_values() const override { return values_; }
  ad::Tensor loss(const std::vector<Tensor>& p, const model::Batch&) const override {
    return ad::sum(p[0]);
  }

 private:
  std::vector<model::ParamSpec> specs_;
  std::vector<std::vector<double>> values_;
};

}  // namespace

TEST(HutchPP, ExactForDiagonalWithFullRank) {
  const std::size_t d = 5;
  std::vector<double> m(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) m[i * d + i] = static_cast<double>(i + 1);
  HutchConfig cfg;
  cfg.sketch_rank = 5;
  cfg.hutchinson_samples = 3;
  cfg.seed = 1;
  EXPECT_NEAR(sens::hutchpp_trace(dense_matvec(m, d), d, cfg), 15.0, 1e-10);
}

TEST(HutchPP, ZeroMatrixGivesZero) {
  const std::size_t d = 12;
  std::vector<double> m(d * d, 0.0);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    HutchConfig cfg;
    cfg.sketch_rank = 3;
    cfg.hutchinson_samples = 5;
    cfg.seed = seed;
    EXPECT_DOUBLE_EQ(sens::hutchpp_trace(dense_matvec(m, d), d, cfg), 0.0);
  }
}

TEST(HutchPP, ExactWhenRankAtMostSketch) {
  // rank-4 PSD matrix, sketch rank 10: residual must vanish
  const std::size_t d = 40, rank = 4;
  auto b = rng::gaussian(d * rank, 17);
  std::vector<double> m(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < rank; ++k) acc += b[i * rank + k] * b[j * rank + k];
      m[i * d + j] = acc;
    }
  HutchConfig cfg;
  cfg.sketch_rank = 10;
  cfg.hutchinson_samples = 20;
  cfg.seed = 3;
  const double est = sens::hutchpp_trace(dense_matvec(m, d), d, cfg);
  const double exact = exact_trace(m, d);
  EXPECT_LT(testsupport::rel_err(est, exact), 1e-8);
}

TEST(HutchPP, MedianErrorOnRandomPsd) {
  const std::size_t d = 200;
  HutchConfig cfg;
  cfg.sketch_rank = 10;
  cfg.hutchinson_samples = 20;
  std::vector<double> errors;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto m = random_psd(d, 1000 + seed);
    cfg.seed = seed;
    const double est = sens::hutchpp_trace(dense_matvec(m, d), d, cfg);
    const double exact = exact_trace(m, d);
    errors.push_back(std::abs(est - exact) / std::abs(exact));
  }
  std::sort(errors.begin(), errors.end());
  EXPECT_LT(errors[errors.size() / 2], 0.05);
}

TEST(HutchPP, NearUnbiasedOverManySeeds) {
  const std::size_t d = 100;
  auto m = random_psd(d, 555);
  const double exact = exact_trace(m, d);
  HutchConfig cfg;
  cfg.sketch_rank = 10;
  cfg.hutchinson_samples = 20;
  double mean = 0.0;
  const std::size_t seeds = 500;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    cfg.seed = s;
    mean += sens::hutchpp_trace(dense_matvec(m, d), d, cfg);
  }
  mean /= static_cast<double>(seeds);
  EXPECT_LT(std::abs(mean - exact) / exact, 0.01);
}

TEST(HutchPP, DeterministicForFixedSeed) {
  const std::size_t d = 64;
  auto m = random_psd(d, 77);
  HutchConfig cfg;
  cfg.seed = 9;
  const double a = sens::hutchpp_trace(dense_matvec(m, d), d, cfg);
  const double b = sens::hutchpp_trace(dense_matvec(m, d), d, cfg);
  EXPECT_DOUBLE_EQ(a, b);
}

TEST(HvpOracle, QuadraticModelGivesAv) {
  const std::size_t d = 8;
  auto raw = rng::gaussian(d * d, 21);
  std::vector<double> sym(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) sym[i * d + j] = 0.5 * (raw[i * d + j] + raw[j * d + i]);
  QuadraticModel qm(sym, d);
  std::vector<model::Batch> calib(1);
  MatVec oracle = sens::hvp_oracle(qm, qm.initial_values(), calib, 0);

  auto v = rng::gaussian(d, 22);
  auto hv = oracle(v);
  auto want = dense_matvec(sym, d)(v);
  EXPECT_LT(testsupport::vec_rel_err(hv, want), 1e-12);
}

TEST(HvpOracle, LinearModelGivesZeros) {
  LinearModel lm(6);
  std::vector<model::Batch> calib(1);
  MatVec oracle = sens::hvp_oracle(lm, lm.initial_values(), calib, 0);
  auto hv = oracle(rng::gaussian(6, 31));
  for (double v : hv) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(HvpOracle, OutOfRangeRejected) {
  LinearModel lm(4);
  std::vector<model::Batch> calib(1);
  EXPECT_THROW(sens::hvp_oracle(lm, lm.initial_values(), calib, 1), std::invalid_argument);
}

TEST(HvpOracle, MatchesDenseHessianFromGradCalls) {
  // dense Hessian built column-by-column by central differences of the
  // first-order gradient (independent of the double-backward path)
  model::MlpSpec spec;
  spec.input_dim = 3;
  spec.hidden_dims = {4};
  spec.output_dim = 2;
  spec.seed = 13;
  model::Mlp mlp(spec);

  model::Batch batch;
  batch.rows = 6;
  batch.in_dim = 3;
  batch.out_dim = 2;
  batch.inputs = rng::uniform(18, 41, -1, 1);
  batch.targets = rng::uniform(12, 42, -1, 1);
  std::vector<model::Batch> calib = {batch};

  const std::size_t tensor = 0;  // fc0.weight, 3x4 -> d = 12
  const std::size_t d = 12;
  MatVec oracle = sens::hvp_oracle(mlp, mlp.initial_values(), calib, tensor);

  auto grad_at = [&](const std::vector<double>& w0) {
    auto values = mlp.initial_values();
    values[0] = w0;
    auto leaves = model::as_leaves(mlp, values, false);
    leaves[0] = Tensor::leaf({3, 4}, w0, true);
    return ad::grad(mlp.loss(leaves, batch), {leaves[0]})[0].values();
  };

  const double h = 1e-5;
  std::vector<double> dense(d * d);
  for (std::size_t j = 0; j < d; ++j) {
    auto wp = mlp.initial_values()[0];
    auto wm = wp;
    wp[j] += h;
    wm[j] -= h;
    auto gp = grad_at(wp);
    auto gm = grad_at(wm);
    for (std::size_t i = 0; i < d; ++i) dense[i * d + j] = (gp[i] - gm[i]) / (2.0 * h);
  }

  for (std::uint64_t s = 0; s < 5; ++s) {
    auto v = rng::gaussian(d, 300 + s);
    auto hv = oracle(v);
    auto want = dense_matvec(dense, d)(v);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(hv[i], want[i], 1e-8);
  }
}

TEST(NormalizeScores, DegenerateAndOrderedCases) {
  auto equal = sens::normalize_scores({2.0, 2.0, 2.0}, 1.0, 1e-8);
  for (double s : equal) EXPECT_DOUBLE_EQ(s, 0.5);

  auto single = sens::normalize_scores({7.0}, 1.0, 1e-8);
  EXPECT_DOUBLE_EQ(single[0], 0.5);

  // independent scalar recomputation for h = (e^1, e^2, e^3)
  auto scores = sens::normalize_scores({std::exp(1.0), std::exp(2.0), std::exp(3.0)}, 1.0, 1e-8);
  const double mu = 2.0;
  const double sigma = std::sqrt(((1 - mu) * (1 - mu) + 0.0 + (3 - mu) * (3 - mu)) / 3.0);
  for (int i = 0; i < 3; ++i) {
    const double z = (static_cast<double>(i + 1) - mu) / (sigma + 1e-8);
    EXPECT_NEAR(scores[static_cast<std::size_t>(i)], 1.0 / (1.0 + std::exp(-z)), 1e-12);
  }
  EXPECT_LT(scores[0], 0.5);
  EXPECT_NEAR(scores[1], 0.5, 1e-12);
  EXPECT_GT(scores[2], 0.5);
}

TEST(NormalizeScores, MonotoneInTrace) {
  std::vector<double> h = {0.02, 3.0, 0.5, 11.0, 0.07};
  auto s = sens::normalize_scores(h, 1.0, 1e-8);
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h.size(); ++j)
      if (h[i] > h[j]) EXPECT_GT(s[i], s[j]);
}

TEST(NormalizeScores, NegativeTracesClampAndSurvive) {
  std::size_t clamps = 0;
  std::vector<bool> flags;
  auto s = sens::normalize_scores({-4.0, 1.0, 2.0}, 1.0, 1e-8, &clamps, &flags);
  EXPECT_EQ(clamps, 1u);
  EXPECT_TRUE(flags[0]);
  EXPECT_FALSE(flags[1]);
  for (double v : s) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_LT(s[0], s[1]);
}

TEST(InitTemperature, CodeCentersDriveTauToLowerEndpoint) {
  // weights exactly at {-gamma, 0, +gamma}: the hard quantizer is exact, so
  // colder is always better and the search runs to the low end
  quant::GroupScales s;
  s.gamma = {1.0};
  s.group_size = 6;
  s.numel = 6;
  Tensor w = Tensor::leaf({6}, {-1.0, 0.0, 1.0, 1.0, 0.0, -1.0});
  const double tau = sens::init_temperature({w}, {s}, 1e-3, 10.0);
  EXPECT_NEAR(tau, 1e-3, 1e-6);
}

TEST(InitTemperature, MatchesDenseGridOracle) {
  // single weight at w/gamma = 0.5; compare against a 10^4-point grid scan
  quant::GroupScales s;
  s.gamma = {1.0};
  s.group_size = 1;
  s.numel = 1;
  Tensor w = Tensor::leaf({1}, {0.5});
  const double tau = sens::init_temperature({w}, {s}, 1e-3, 10.0);

  auto objective = [&](double t) {
    const double soft = quant::soft_eval(0.5, t).mean;
    return (0.5 - soft) * (0.5 - soft);
  };
  double best_tau = 1e-3, best = objective(1e-3);
  const int n = 10000;
  for (int i = 0; i <= n; ++i) {
    const double t = std::exp(std::log(1e-3) + (std::log(10.0) - std::log(1e-3)) * i / n);
    const double o = objective(t);
    if (o < best) {
      best = o;
      best_tau = t;
    }
  }
  const double grid_step = (std::log(10.0) - std::log(1e-3)) / n;
  EXPECT_NEAR(std::log(tau), std::log(best_tau), 2.0 * grid_step);
}

TEST(InitTemperature, BeatsHundredPointLogGrid) {
  // search-quality invariant on a realistic weight set
  auto values = rng::gaussian(256, 123, 0.0, 0.8);
  Tensor w = Tensor::leaf({256}, values);
  quant::QuantizerConfig qcfg;
  qcfg.group_size = 64;
  auto scales = quant::compute_scale(w, qcfg);

  auto objective = [&](double t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gamma = scales.gamma[scales.group_of(i)];
      const double soft = gamma * quant::soft_eval(w.at(i) / gamma, t).mean;
      acc += (w.at(i) - soft) * (w.at(i) - soft);
    }
    return acc;
  };

  const double tau = sens::init_temperature({w}, {scales}, 1e-3, 10.0);
  const double found = objective(tau);
  for (int i = 0; i < 100; ++i) {
    const double t = std::exp(std::log(1e-3) + (std::log(10.0) - std::log(1e-3)) * i / 99.0);
    EXPECT_LE(found, objective(t) * (1.0 + 1e-9));
  }
}

TEST(InitTemperature, EmptyListRejected) {
  EXPECT_THROW(sens::init_temperature({}, {}), std::invalid_argument);
}

TEST(ComputeSensitivity, DeterministicReportAndRoundTrip) {
  model::MlpSpec spec;
  spec.input_dim = 4;
  spec.hidden_dims = {6};
  spec.output_dim = 2;
  spec.seed = 19;
  model::Mlp mlp(spec);

  model::Batch batch;
  batch.rows = 8;
  batch.in_dim = 4;
  batch.out_dim = 2;
  batch.inputs = rng::uniform(32, 61, -1, 1);
  batch.targets = rng::uniform(16, 62, -1, 1);

  HutchConfig cfg;
  cfg.sketch_rank = 6;
  cfg.hutchinson_samples = 8;
  cfg.seed = 7;

  auto r1 = sens::compute_sensitivity(mlp, mlp.initial_values(), {batch}, cfg, 42);
  auto r2 = sens::compute_sensitivity(mlp, mlp.initial_values(), {batch}, cfg, 42);
  ASSERT_EQ(r1.tensors.size(), 2u);
  for (std::size_t i = 0; i < r1.tensors.size(); ++i) {
    EXPECT_DOUBLE_EQ(r1.tensors[i].raw_trace, r2.tensors[i].raw_trace);
    EXPECT_DOUBLE_EQ(r1.tensors[i].score, r2.tensors[i].score);
    EXPECT_GT(r1.tensors[i].score, 0.0);
    EXPECT_LT(r1.tensors[i].score, 1.0);
  }

  const std::string path = "sens_roundtrip_test.json";
  sens::save_calibration(r1, path);
  auto loaded = sens::load_calibration(path);
  EXPECT_EQ(loaded.tensors.size(), r1.tensors.size());
  EXPECT_DOUBLE_EQ(loaded.mu_h, r1.mu_h);
  EXPECT_EQ(loaded.dataset_fingerprint, 42u);
  auto scores = sens::scores_for_model(loaded, mlp);
  ASSERT_EQ(scores.size(), 2u);
  std::remove(path.c_str());
}
