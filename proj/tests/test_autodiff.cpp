#include <gtest/gtest.h>

#include "hestia/autodiff.hpp"
#include "hestia/random.hpp"
#include "support/gradcheck.hpp"

using namespace hestia;
using ad::Tensor;

namespace {

// Small dense MLP assembled directly from ops; weights passed in flat.
struct TinyMlp {
  std::size_t in, hid, out;

  std::size_t param_count() const { return in * hid + hid * out; }

  Tensor loss(const Tensor& w1, const Tensor& w2, const Tensor& x, const Tensor& y) const {
    Tensor h = ad::gelu(ad::matmul(x, w1));
    Tensor pred = ad::matmul(h, w2);
    return ad::mse_loss(pred, y);
  }
};

}  // namespace

TEST(Grad, SumGivesOnes) {
  Tensor w = Tensor::leaf({2, 3}, rng::uniform(6, 1, -1, 1), true);
  Tensor g = ad::grad(ad::sum(w), {w})[0];
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(g.at(i), 1.0);
}

TEST(Grad, HalfNormSquaredGivesW) {
  Tensor w = Tensor::leaf({3}, {1.0, 2.0, 3.0}, true);
  Tensor loss = ad::scale(ad::sum(ad::square(w)), 0.5);
  Tensor g = ad::grad(loss, {w})[0];
  EXPECT_EQ(g.values(), (std::vector<double>{1.0, 2.0, 3.0}));
}

TEST(Grad, NonScalarLossRejected) {
  Tensor w = Tensor::leaf({3}, {1.0, 2.0, 3.0}, true);
  EXPECT_THROW(ad::grad(w, {w}), std::invalid_argument);
}

TEST(Grad, OffPathParamsGetZeros) {
  Tensor w = Tensor::leaf({3}, {1.0, 2.0, 3.0}, true);
  Tensor u = Tensor::leaf({2}, {5.0, 6.0}, true);
  auto grads = ad::grad(ad::sum(w), {w, u});
  EXPECT_EQ(grads[1].values(), (std::vector<double>{0.0, 0.0}));
}

TEST(Grad, MlpMatchesFiniteDifferences) {
  TinyMlp mlp{4, 6, 2};
  Tensor x = Tensor::leaf({5, 4}, rng::uniform(20, 11, -1, 1));
  Tensor y = Tensor::leaf({5, 2}, rng::uniform(10, 12, -1, 1));

  for (std::uint64_t s = 0; s < 4; ++s) {
    Tensor w1 = Tensor::leaf({4, 6}, rng::gaussian(24, 100 + s, 0.0, 0.5), true);
    Tensor w2 = Tensor::leaf({6, 2}, rng::gaussian(12, 200 + s, 0.0, 0.5), true);
    auto grads = ad::grad(mlp.loss(w1, w2, x, y), {w1, w2});

    auto f1 = [&](const std::vector<double>& flat) {
      return mlp.loss(Tensor::leaf({4, 6}, flat), w2, x, y).item();
    };
    auto f2 = [&](const std::vector<double>& flat) {
      return mlp.loss(w1, Tensor::leaf({6, 2}, flat), x, y).item();
    };
    EXPECT_LT(testsupport::vec_rel_err(grads[0].values(),
                                       testsupport::fd_grad(f1, w1.values())), 1e-6);
    EXPECT_LT(testsupport::vec_rel_err(grads[1].values(),
                                       testsupport::fd_grad(f2, w2.values())), 1e-6);
  }
}

TEST(Hvp, QuadraticFormGivesAv) {
  // loss = 1/2 x^T A x with symmetric A => Hessian is A.
  const std::size_t d = 6;
  auto raw = rng::gaussian(d * d, 31);
  std::vector<double> sym(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      sym[i * d + j] = 0.5 * (raw[i * d + j] + raw[j * d + i]);
  Tensor A = Tensor::leaf({d, d}, sym);
  Tensor x = Tensor::leaf({1, d}, rng::gaussian(d, 32), true);
  Tensor loss = ad::scale(ad::sum(ad::mul(ad::matmul(x, A), x)), 0.5);

  Tensor v = Tensor::leaf({1, d}, rng::gaussian(d, 33));
  Tensor hv = ad::hvp(loss, x, v);

  for (std::size_t i = 0; i < d; ++i) {
    double want = 0.0;
    for (std::size_t j = 0; j < d; ++j) want += sym[i * d + j] * v.at(j);
    EXPECT_LT(testsupport::rel_err(hv.at(i), want), 1e-12);
  }
}

TEST(Hvp, LinearLossGivesZeros) {
  Tensor x = Tensor::leaf({4}, rng::gaussian(4, 41), true);
  Tensor v = Tensor::leaf({4}, rng::gaussian(4, 42));
  Tensor hv = ad::hvp(ad::sum(x), x, v);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(hv.at(i), 0.0);
}

TEST(Hvp, ShapeMismatchRejected) {
  Tensor x = Tensor::leaf({4}, rng::gaussian(4, 51), true);
  Tensor v = Tensor::leaf({3}, rng::gaussian(3, 52));
  EXPECT_THROW(ad::hvp(ad::sum(ad::square(x)), x, v), std::invalid_argument);
}

TEST(Hvp, SymmetryOnRandomMlp) {
  TinyMlp mlp{3, 5, 2};
  Tensor x = Tensor::leaf({4, 3}, rng::uniform(12, 61, -1, 1));
  Tensor y = Tensor::leaf({4, 2}, rng::uniform(8, 62, -1, 1));

  for (std::uint64_t s = 0; s < 5; ++s) {
    Tensor w1 = Tensor::leaf({3, 5}, rng::gaussian(15, 70 + s, 0.0, 0.6), true);
    Tensor w2 = Tensor::leaf({5, 2}, rng::gaussian(10, 80 + s, 0.0, 0.6));
    Tensor u = Tensor::leaf({3, 5}, rng::gaussian(15, 90 + s));
    Tensor v = Tensor::leaf({3, 5}, rng::gaussian(15, 95 + s));

    Tensor loss = mlp.loss(w1, w2, x, y);
    Tensor hu = ad::hvp(loss, w1, u);
    Tensor hv = ad::hvp(mlp.loss(w1, w2, x, y), w1, v);

    double vhu = 0.0, uhv = 0.0;
    for (std::size_t i = 0; i < 15; ++i) {
      vhu += v.at(i) * hu.at(i);
      uhv += u.at(i) * hv.at(i);
    }
    EXPECT_LT(std::abs(vhu - uhv) / (std::abs(vhu) + 1e-12), 1e-8);
  }
}

TEST(Hvp, SecondDerivativeOfQuartic) {
  // loss = sum(x^4): Hessian diag 12 x^2.
  Tensor x = Tensor::leaf({3}, {1.0, -2.0, 0.5}, true);
  Tensor loss = ad::sum(ad::square(ad::square(x)));
  Tensor v = Tensor::leaf({3}, {1.0, 1.0, 1.0});
  Tensor hv = ad::hvp(loss, x, v);
  EXPECT_NEAR(hv.at(0), 12.0, 1e-9);
  EXPECT_NEAR(hv.at(1), 48.0, 1e-9);
  EXPECT_NEAR(hv.at(2), 3.0, 1e-9);
}
