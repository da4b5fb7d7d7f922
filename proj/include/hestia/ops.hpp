#pragma once

// Primitive tensor operations with registered adjoint rules.
//
// Elementwise binaries broadcast a one-element tensor against any shape;
// nothing more general is supported. Row/col helpers operate on rank-2
// tensors with rows as the leading dimension (row-major storage).
//
// Adjoint rules only ever call back into the ops defined here, so a gradient
// is an ordinary graph expression and can be differentiated again.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hestia/tensor.hpp"

namespace hestia::ad {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sign(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor erf(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor row_sum(const Tensor& a);
Tensor col_sum(const Tensor& a);
Tensor row_max(const Tensor& a);
Tensor row_broadcast(const Tensor& a, std::size_t cols);
Tensor col_broadcast(const Tensor& a, std::size_t rows);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor cross_entropy_loss(const Tensor& logits, const Tensor& onehot);

namespace detail {

inline void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                shape_str(a.shape()));
}

// Output shape of a broadcasting binary op: shapes must match, or one side
// must be a single element.
inline Shape binary_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.numel() == 1) return b.shape();
  if (b.numel() == 1) return a.shape();
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
}

// Sum a broadcast gradient back down to the shape of the broadcast operand.
inline Tensor reduce_for(const Tensor& g, const Tensor& target) {
  if (g.shape() == target.shape()) return g;
  if (target.numel() == 1) return reshape(sum(g), target.shape());
  throw std::logic_error("reduce_for: unsupported gradient reduction");
}

template <class F>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* op, F f,
                          BackwardFn backward) {
  Shape shape = binary_shape(a, b, op);
  std::size_t n = numel_of(shape);
  std::vector<double> out(n);
  const bool sa = a.numel() == 1, sb = b.numel() == 1;
  const auto& va = a.values();
  const auto& vb = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(va[sa ? 0 : i], vb[sb ? 0 : i]);
  return make_op(std::move(shape), std::move(out), {a, b}, std::move(backward), op);
}

template <class F>
Tensor elementwise_unary(const Tensor& a, const char* op, F f, BackwardFn backward) {
  std::vector<double> out(a.numel());
  const auto& va = a.values();
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(va[i]);
  return make_op(a.shape(), std::move(out), {a}, std::move(backward), op);
}

// Elementwise indicator computed from forward values; enters adjoint rules as
// a constant (the indicator is piecewise constant in the inputs).
template <class F>
Tensor mask_of(const Tensor& a, const Tensor& b, F pred) {
  Shape shape = binary_shape(a, b, "mask");
  std::size_t n = numel_of(shape);
  std::vector<double> out(n);
  const bool sa = a.numel() == 1, sb = b.numel() == 1;
  for (std::size_t i = 0; i < n; ++i)
    out[i] = pred(a.values()[sa ? 0 : i], b.values()[sb ? 0 : i]) ? 1.0 : 0.0;
  return Tensor::leaf(std::move(shape), std::move(out));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        return std::vector<Tensor>{detail::reduce_for(g, in[0]), detail::reduce_for(g, in[1])};
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        return std::vector<Tensor>{detail::reduce_for(g, in[0]),
                                   detail::reduce_for(neg(g), in[1])};
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        return std::vector<Tensor>{detail::reduce_for(mul(g, in[1]), in[0]),
                                   detail::reduce_for(mul(g, in[0]), in[1])};
      });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        return std::vector<Tensor>{
            detail::reduce_for(div(g, in[1]), in[0]),
            detail::reduce_for(neg(div(mul(g, in[0]), square(in[1]))), in[1])};
      });
}

inline Tensor neg(const Tensor& a) {
  return detail::elementwise_unary(
      a, "neg", [](double x) { return -x; },
      [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
        return std::vector<Tensor>{neg(g)};
      });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::elementwise_unary(
      a, "scale", [c](double x) { return x * c; },
      [c](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
        return std::vector<Tensor>{scale(g, c)};
      });
}

inline Tensor add_const(const Tensor& a, double c) {
  return detail::elementwise_unary(
      a, "add_const", [c](double x) { return x + c; },
      [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
        return std::vector<Tensor>{g};
      });
}

inline Tensor exp(const Tensor& a) {
  return detail::elementwise_unary(
      a, "exp", [](double x) { return std::exp(x); },
      [](const Tensor& g, const std::vector<Tensor>&, const Tensor& out) {
        return std::vector<Tensor>{mul(g, out)};
      });
}

inline Tensor log(const Tensor& a) {
  return detail::elementwise_unary(
      a, "log", [](double x) { return std::log(x); },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        return std::vector<Tensor>{div(g, in[0])};
      });
}

inline Tensor sqrt(const Tensor& a) {
  return detail::elementwise_unary(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](const Tensor& g, const std::vector<Tensor>&, const Tensor& out) {
        return std::vector<Tensor>{div(g, scale(out, 2.0))};
      });
}

inline Tensor square(const Tensor& a) {
  return detail::elementwise_unary(
      a, "square", [](double x) { return x * x; },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        return std::vector<Tensor>{mul(g, scale(in[0], 2.0))};
      });
}

inline Tensor abs(const Tensor& a) {
  return detail::elementwise_unary(
      a, "abs", [](double x) { return std::abs(x); },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        return std::vector<Tensor>{mul(g, sign(in[0]))};
      });
}

// Piecewise constant: output never requires grad.
inline Tensor sign(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double x = a.values()[i];
    out[i] = (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  }
  return Tensor::leaf(a.shape(), std::move(out));
}

inline Tensor relu(const Tensor& a) {
  Tensor gate = detail::mask_of(a, Tensor::scalar(0.0),
                                [](double x, double) { return x > 0.0; });
  return detail::elementwise_unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [gate](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
        return std::vector<Tensor>{mul(g, gate)};
      });
}

inline Tensor erf(const Tensor& a) {
  // d/dx erf(x) = 2/sqrt(pi) * exp(-x^2)
  constexpr double two_over_sqrt_pi = 1.1283791670955126;
  return detail::elementwise_unary(
      a, "erf", [](double x) { return std::erf(x); },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        return std::vector<Tensor>{
            mul(g, scale(exp(neg(square(in[0]))), two_over_sqrt_pi))};
      });
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
inline Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.7071067811865476;
  return scale(mul(a, add_const(erf(scale(a, inv_sqrt2)), 1.0)), 0.5);
}

inline Tensor sigmoid(const Tensor& a) {
  return div(Tensor::scalar(1.0), add_const(exp(neg(a)), 1.0));
}

inline Tensor maximum(const Tensor& a, const Tensor& b) {
  Tensor pick_a = detail::mask_of(a, b, [](double x, double y) { return x >= y; });
  return detail::elementwise_binary(
      a, b, "maximum", [](double x, double y) { return std::max(x, y); },
      [pick_a](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        Tensor pick_b = sub(Tensor::scalar(1.0), pick_a);
        return std::vector<Tensor>{detail::reduce_for(mul(g, pick_a), in[0]),
                                   detail::reduce_for(mul(g, pick_b), in[1])};
      });
}

inline Tensor minimum(const Tensor& a, const Tensor& b) {
  Tensor pick_a = detail::mask_of(a, b, [](double x, double y) { return x <= y; });
  return detail::elementwise_binary(
      a, b, "minimum", [](double x, double y) { return std::min(x, y); },
      [pick_a](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        Tensor pick_b = sub(Tensor::scalar(1.0), pick_a);
        return std::vector<Tensor>{detail::reduce_for(mul(g, pick_a), in[0]),
                                   detail::reduce_for(mul(g, pick_b), in[1])};
      });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k)
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  std::vector<double> out(n * m, 0.0);
  const auto& va = a.values();
  const auto& vb = b.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = va[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &vb[p * m];
      double* orow = &out[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  return make_op(
      {n, m}, std::move(out), {a, b},
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        return std::vector<Tensor>{matmul(g, transpose(in[1])),
                                   matmul(transpose(in[0]), g)};
      },
      "matmul");
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = a.values()[i * m + j];
  return make_op(
      {m, n}, std::move(out), {a},
      [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
        return std::vector<Tensor>{transpose(g)};
      },
      "transpose");
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw std::invalid_argument("reshape: cannot reshape " + shape_str(a.shape()) + " to " +
                                shape_str(shape));
  Shape prev = a.shape();
  return make_op(
      std::move(shape), a.values(), {a},
      [prev](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
        return std::vector<Tensor>{reshape(g, prev)};
      },
      "reshape");
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_op(
      {}, {s}, {a},
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&) {
        return std::vector<Tensor>{mul(Tensor::ones(in[0].shape()), g)};
      },
      "sum");
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

inline Tensor row_sum(const Tensor& a) {
  detail::require_rank2(a, "row_sum");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += a.values()[i * m + j];
  return make_op(
      {n, 1}, std::move(out), {a},
      [m](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
        return std::vector<Tensor>{row_broadcast(g, m)};
      },
      "row_sum");
}

inline Tensor col_sum(const Tensor& a) {
  detail::require_rank2(a, "col_sum");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += a.values()[i * m + j];
  return make_op(
      {1, m}, std::move(out), {a},
      [n](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
        return std::vector<Tensor>{col_broadcast(g, n)};
      },
      "col_sum");
}

// Row-wise maximum; gradient routes to the first max position in each row.
inline Tensor row_max(const Tensor& a) {
  detail::require_rank2(a, "row_max");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  if (m == 0) throw std::invalid_argument("row_max: empty rows");
  std::vector<double> out(n);
  std::vector<double> mask(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (a.values()[i * m + j] > a.values()[i * m + best]) best = j;
    out[i] = a.values()[i * m + best];
    mask[i * m + best] = 1.0;
  }
  Tensor gate = Tensor::leaf({n, m}, std::move(mask));
  return make_op(
      {n, 1}, std::move(out), {a},
      [gate, m](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
        return std::vector<Tensor>{mul(row_broadcast(g, m), gate)};
      },
      "row_max");
}

inline Tensor row_broadcast(const Tensor& a, std::size_t cols) {
  detail::require_rank2(a, "row_broadcast");
  if (a.shape()[1] != 1)
    throw std::invalid_argument("row_broadcast: expected (n,1), got " + shape_str(a.shape()));
  const std::size_t n = a.shape()[0];
  std::vector<double> out(n * cols);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = a.values()[i];
  return make_op(
      {n, cols}, std::move(out), {a},
      [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
        return std::vector<Tensor>{row_sum(g)};
      },
      "row_broadcast");
}

inline Tensor col_broadcast(const Tensor& a, std::size_t rows) {
  detail::require_rank2(a, "col_broadcast");
  if (a.shape()[0] != 1)
    throw std::invalid_argument("col_broadcast: expected (1,m), got " + shape_str(a.shape()));
  const std::size_t m = a.shape()[1];
  std::vector<double> out(rows * m);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = a.values()[j];
  return make_op(
      {rows, m}, std::move(out), {a},
      [](const Tensor& g, const std::vector<Tensor>&, const Tensor&) {
        return std::vector<Tensor>{col_sum(g)};
      },
      "col_broadcast");
}

inline Tensor softmax_rows(const Tensor& a) {
  detail::require_rank2(a, "softmax_rows");
  const std::size_t m = a.shape()[1];
  Tensor shifted = sub(a, row_broadcast(row_max(a), m));
  Tensor e = exp(shifted);
  return div(e, row_broadcast(row_sum(e), m));
}

inline Tensor log_softmax_rows(const Tensor& a) {
  detail::require_rank2(a, "log_softmax_rows");
  const std::size_t m = a.shape()[1];
  Tensor shifted = sub(a, row_broadcast(row_max(a), m));
  return sub(shifted, row_broadcast(log(row_sum(exp(shifted))), m));
}

inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw std::invalid_argument("mse_loss: shape mismatch " + shape_str(pred.shape()) +
                                " vs " + shape_str(target.shape()));
  return mean(square(sub(pred, target)));
}

// Mean negative log-likelihood over rows whose one-hot target is non-zero;
// all-zero target rows are excluded from both the sum and the row count.
inline Tensor cross_entropy_loss(const Tensor& logits, const Tensor& onehot) {
  if (logits.shape() != onehot.shape())
    throw std::invalid_argument("cross_entropy_loss: shape mismatch");
  detail::require_rank2(logits, "cross_entropy_loss");
  const std::size_t n = logits.shape()[0], m = logits.shape()[1];
  std::size_t active = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) row += onehot.values()[i * m + j];
    if (row != 0.0) ++active;
  }
  if (active == 0) throw std::invalid_argument("cross_entropy_loss: no active rows");
  Tensor nll = neg(sum(mul(onehot, log_softmax_rows(logits))));
  return scale(nll, 1.0 / static_cast<double>(active));
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_const(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_const(a, -c); }

}  // namespace hestia::ad
