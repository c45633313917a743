#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "semireward/error.hpp"
#include "semireward/tape.hpp"
#include "semireward/tensor.hpp"

namespace semireward {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

inline ComputeTape& same_tape(Var a, Var b) {
  if (!a.valid() || a.tape() != b.tape()) throw TapeError("operands live on different tapes");
  return *a.tape();
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " + to_string(t.shape()));
  }
}

inline ConstMatrixMap as_matrix(const Tensor& t) {
  return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

inline MatrixMap as_matrix(std::vector<double>& buf, std::size_t rows, std::size_t cols) {
  return MatrixMap(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline ConstMatrixMap as_matrix(const std::vector<double>& buf, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

enum class Broadcast { same, left_scalar, right_scalar };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (a.size() == 1) return Broadcast::left_scalar;
  if (b.size() == 1) return Broadcast::right_scalar;
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                   to_string(b.shape()));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

constexpr double kProbabilityFloor = 1e-12;

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  ComputeTape& tape = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(av.shape()) + " x " +
                     to_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  detail::as_matrix(out.values(), m, n).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  return tape.record(std::move(out), {a, b}, [a, b, m, k, n](ComputeTape& t, std::size_t self) {
    const auto dout = detail::as_matrix(t.node_grad(self), m, n);
    if (t.needs_grad(a)) {
      detail::as_matrix(t.grad_buffer(a), m, k).noalias() +=
          dout * detail::as_matrix(b.value()).transpose();
    }
    if (t.needs_grad(b)) {
      detail::as_matrix(t.grad_buffer(b), k, n).noalias() +=
          detail::as_matrix(a.value()).transpose() * dout;
    }
  });
}

// a[m x n] + bias[1 x n] (or bias of shape [n]), bias repeated over rows.
inline Var add_bias(Var a, Var bias) {
  ComputeTape& tape = detail::same_tape(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  detail::require_matrix(av, "add_bias");
  const std::size_t m = av.rows(), n = av.cols();
  if (bv.size() != n || (bv.rank() == 2 && bv.rows() != 1)) {
    throw ShapeError("add_bias: bias " + to_string(bv.shape()) + " does not fit " + to_string(av.shape()));
  }
  Tensor out = av;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) += bv[c];
  }
  return tape.record(std::move(out), {a, bias}, [a, bias, m, n](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    t.accumulate(a, g);
    if (t.needs_grad(bias)) {
      std::vector<double>& gb = t.grad_buffer(bias);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise. Binary ops accept identical shapes or a single-element operand.

inline Var add(Var a, Var b) {
  ComputeTape& tape = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto kind = detail::broadcast_kind(av, bv, "add");
  Tensor out = kind == detail::Broadcast::left_scalar ? bv : av;
  const Tensor& other = kind == detail::Broadcast::left_scalar ? av : bv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += kind == detail::Broadcast::same ? other[i] : other[0];
  }
  return tape.record(std::move(out), {a, b}, [a, b, kind](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    auto route = [&](Var v, bool reduced) {
      if (!t.needs_grad(v)) return;
      std::vector<double>& dst = t.grad_buffer(v);
      if (reduced) {
        double s = 0.0;
        for (double x : g) s += x;
        dst[0] += s;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
    };
    route(a, kind == detail::Broadcast::left_scalar);
    route(b, kind == detail::Broadcast::right_scalar);
  });
}

inline Var scale(Var a, double factor) {
  ComputeTape& tape = *a.tape();
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  return tape.record(std::move(out), {a}, [a, factor](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    std::vector<double>& dst = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  });
}

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

inline Var mul(Var a, Var b) {
  ComputeTape& tape = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto kind = detail::broadcast_kind(av, bv, "mul");
  Tensor out = kind == detail::Broadcast::left_scalar ? bv : av;
  const Tensor& other = kind == detail::Broadcast::left_scalar ? av : bv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= kind == detail::Broadcast::same ? other[i] : other[0];
  }
  return tape.record(std::move(out), {a, b}, [a, b, kind](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t n = g.size();
    auto at = [](const Tensor& x, std::size_t i) { return x.size() == 1 ? x[0] : x[i]; };
    if (t.needs_grad(a)) {
      std::vector<double>& da = t.grad_buffer(a);
      for (std::size_t i = 0; i < n; ++i) {
        da[kind == detail::Broadcast::left_scalar ? 0 : i] += g[i] * at(bv, i);
      }
    }
    if (t.needs_grad(b)) {
      std::vector<double>& db = t.grad_buffer(b);
      for (std::size_t i = 0; i < n; ++i) {
        db[kind == detail::Broadcast::right_scalar ? 0 : i] += g[i] * at(av, i);
      }
    }
  });
}

inline Var relu(Var a) {
  ComputeTape& tape = *a.tape();
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return tape.record(std::move(out), {a}, [a](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    const Tensor& x = a.value();
    std::vector<double>& dst = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) dst[i] += g[i];
    }
  });
}

inline Var tanh(Var a) {
  ComputeTape& tape = *a.tape();
  Tensor out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  return tape.record(std::move(out), {a}, [a](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    const Tensor& x = a.value();
    std::vector<double>& dst = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = std::tanh(x[i]);
      dst[i] += g[i] * (1.0 - y * y);
    }
  });
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  ComputeTape& tape = *a.tape();
  Tensor out = a.value();
  for (double& v : out.values()) v = sigmoid(v);
  return tape.record(std::move(out), {a}, [a](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    std::vector<double>& dst = t.grad_buffer(a);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid(x[i]);
      dst[i] += g[i] * s * (1.0 - s);
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise ops on matrices

inline void softmax_row(std::span<const double> in, std::span<double> out) {
  const double peak = *std::max_element(in.begin(), in.end());
  double total = 0.0;
  for (std::size_t c = 0; c < in.size(); ++c) {
    out[c] = std::exp(in[c] - peak);
    total += out[c];
  }
  for (double& v : out) v /= total;
}

inline Var softmax_rows(Var a) {
  ComputeTape& tape = *a.tape();
  const Tensor& av = a.value();
  detail::require_matrix(av, "softmax_rows");
  if (av.size() == 0) throw ShapeError("softmax_rows on empty tensor");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m, n});
  for (std::size_t r = 0; r < m; ++r) softmax_row(av.row(r), out.row(r));
  auto probs = std::make_shared<Tensor>(out);
  return tape.record(std::move(out), {a}, [a, probs, m, n](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    std::vector<double>& dst = t.grad_buffer(a);
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * probs->at(r, c);
      for (std::size_t c = 0; c < n; ++c) {
        dst[r * n + c] += probs->at(r, c) * (g[r * n + c] - dot);
      }
    }
  });
}

// [m x n] -> [m x 1]
inline Var row_sum(Var a) {
  ComputeTape& tape = *a.tape();
  const Tensor& av = a.value();
  detail::require_matrix(av, "row_sum");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (double v : av.row(r)) s += v;
    out[r] = s;
  }
  return tape.record(std::move(out), {a}, [a, m, n](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    std::vector<double>& dst = t.grad_buffer(a);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) dst[r * n + c] += g[r];
    }
  });
}

// Scales row r of a[m x n] by w[r] (w is [m x 1]).
inline Var mul_rows(Var a, Var w) {
  ComputeTape& tape = detail::same_tape(a, w);
  const Tensor& av = a.value();
  const Tensor& wv = w.value();
  detail::require_matrix(av, "mul_rows");
  const std::size_t m = av.rows(), n = av.cols();
  if (wv.size() != m) throw ShapeError("mul_rows: weight length does not match row count");
  Tensor out = av;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) *= wv[r];
  }
  return tape.record(std::move(out), {a, w}, [a, w, m, n](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    const Tensor& av = a.value();
    const Tensor& wv = w.value();
    if (t.needs_grad(a)) {
      std::vector<double>& da = t.grad_buffer(a);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) da[r * n + c] += g[r * n + c] * wv[r];
      }
    }
    if (t.needs_grad(w)) {
      std::vector<double>& dw = t.grad_buffer(w);
      for (std::size_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += g[r * n + c] * av.at(r, c);
        dw[r] += s;
      }
    }
  });
}

inline Var concat_cols(Var a, Var b) {
  ComputeTape& tape = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "concat_cols");
  detail::require_matrix(bv, "concat_cols");
  if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row counts differ");
  const std::size_t m = av.rows(), p = av.cols(), q = bv.cols();
  Tensor out({m, p + q});
  for (std::size_t r = 0; r < m; ++r) {
    std::copy(av.row(r).begin(), av.row(r).end(), out.row(r).begin());
    std::copy(bv.row(r).begin(), bv.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(p));
  }
  return tape.record(std::move(out), {a, b}, [a, b, m, p, q](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    const std::size_t w = p + q;
    if (t.needs_grad(a)) {
      std::vector<double>& da = t.grad_buffer(a);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < p; ++c) da[r * p + c] += g[r * w + c];
      }
    }
    if (t.needs_grad(b)) {
      std::vector<double>& db = t.grad_buffer(b);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < q; ++c) db[r * q + c] += g[r * w + p + c];
      }
    }
  });
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  ComputeTape& tape = *a.tape();
  const Tensor& av = a.value();
  detail::require_matrix(av, "slice_cols");
  const std::size_t m = av.rows(), n = av.cols();
  if (begin + count > n) throw ShapeError("slice_cols out of range");
  Tensor out({m, count});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < count; ++c) out.at(r, c) = av.at(r, begin + c);
  }
  return tape.record(std::move(out), {a}, [a, begin, count, m, n](ComputeTape& t, std::size_t self) {
    const std::vector<double>& g = t.node_grad(self);
    std::vector<double>& dst = t.grad_buffer(a);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < count; ++c) dst[r * n + begin + c] += g[r * count + c];
    }
  });
}

// Reductions to a scalar.
inline Var sum(Var a) {
  ComputeTape& tape = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return tape.record(Tensor::scalar(s), {a}, [a](ComputeTape& t, std::size_t self) {
    const double g = t.node_grad(self)[0];
    for (double& d : t.grad_buffer(a)) d += g;
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// ---------------------------------------------------------------------------
// Losses, all mean-reduced. mse/bce/l1 average over every element;
// cross_entropy averages over rows of a [batch x classes] probability matrix.

enum class LossKind { mse, bce, cross_entropy, l1 };

inline Var mse_loss(Var prediction, Var target) {
  ComputeTape& tape = detail::same_tape(prediction, target);
  const Tensor& p = prediction.value();
  const Tensor& y = target.value();
  detail::check_same_shape(p, y, "mse_loss");
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - y[i]) * (p[i] - y[i]);
  return tape.record(Tensor::scalar(total / n), {prediction, target},
                     [prediction, target, n](ComputeTape& t, std::size_t self) {
                       const double g = t.node_grad(self)[0];
                       const Tensor& p = prediction.value();
                       const Tensor& y = target.value();
                       const bool dp = t.needs_grad(prediction), dy = t.needs_grad(target);
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         const double d = 2.0 * (p[i] - y[i]) / n * g;
                         if (dp) t.grad_buffer(prediction)[i] += d;
                         if (dy) t.grad_buffer(target)[i] -= d;
                       }
                     });
}

inline Var l1_loss(Var prediction, Var target) {
  ComputeTape& tape = detail::same_tape(prediction, target);
  const Tensor& p = prediction.value();
  const Tensor& y = target.value();
  detail::check_same_shape(p, y, "l1_loss");
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - y[i]);
  return tape.record(Tensor::scalar(total / n), {prediction, target},
                     [prediction, target, n](ComputeTape& t, std::size_t self) {
                       const double g = t.node_grad(self)[0];
                       const Tensor& p = prediction.value();
                       const Tensor& y = target.value();
                       const bool dp = t.needs_grad(prediction), dy = t.needs_grad(target);
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         const double diff = p[i] - y[i];
                         const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                         if (dp) t.grad_buffer(prediction)[i] += sign / n * g;
                         if (dy) t.grad_buffer(target)[i] -= sign / n * g;
                       }
                     });
}

inline Var bce_loss(Var prediction, Var target) {
  ComputeTape& tape = detail::same_tape(prediction, target);
  const Tensor& p = prediction.value();
  const Tensor& y = target.value();
  detail::check_same_shape(p, y, "bce_loss");
  constexpr double lo = detail::kProbabilityFloor, hi = 1.0 - detail::kProbabilityFloor;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) {
      throw DomainError("bce_loss: prediction " + std::to_string(p[i]) + " outside (0, 1)");
    }
    if (!(y[i] >= 0.0 && y[i] <= 1.0)) {
      throw DomainError("bce_loss: target " + std::to_string(y[i]) + " outside [0, 1]");
    }
  }
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], lo, hi);
    total -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  return tape.record(Tensor::scalar(total / n), {prediction, target},
                     [prediction, target, n, lo, hi](ComputeTape& t, std::size_t self) {
                       const double g = t.node_grad(self)[0];
                       const Tensor& p = prediction.value();
                       const Tensor& y = target.value();
                       const bool dp = t.needs_grad(prediction), dy = t.needs_grad(target);
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         const double q = std::clamp(p[i], lo, hi);
                         if (dp && p[i] > lo && p[i] < hi) {
                           t.grad_buffer(prediction)[i] += (q - y[i]) / (q * (1.0 - q)) / n * g;
                         }
                         if (dy) t.grad_buffer(target)[i] -= (std::log(q) - std::log(1.0 - q)) / n * g;
                       }
                     });
}

// prediction: probability rows (e.g. softmax_rows output); target: probability
// rows of the same shape, typically one-hot.
inline Var cross_entropy_loss(Var prediction, Var target) {
  ComputeTape& tape = detail::same_tape(prediction, target);
  const Tensor& p = prediction.value();
  const Tensor& y = target.value();
  detail::require_matrix(p, "cross_entropy_loss");
  detail::check_same_shape(p, y, "cross_entropy_loss");
  const std::size_t m = p.rows();
  if (m == 0) throw ShapeError("cross_entropy_loss on empty batch");
  constexpr double floor = detail::kProbabilityFloor;
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] != 0.0) total -= y[i] * std::log(std::max(p[i], floor));
  }
  const double rows = static_cast<double>(m);
  return tape.record(Tensor::scalar(total / rows), {prediction, target},
                     [prediction, target, rows, floor](ComputeTape& t, std::size_t self) {
                       const double g = t.node_grad(self)[0];
                       const Tensor& p = prediction.value();
                       const Tensor& y = target.value();
                       const bool dp = t.needs_grad(prediction), dy = t.needs_grad(target);
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         if (dp && p[i] > floor) t.grad_buffer(prediction)[i] -= y[i] / p[i] / rows * g;
                         if (dy) t.grad_buffer(target)[i] -= std::log(std::max(p[i], floor)) / rows * g;
                       }
                     });
}

inline Tensor one_hot_rows(std::span<const std::size_t> classes, std::size_t num_classes) {
  Tensor out({classes.size(), num_classes});
  for (std::size_t r = 0; r < classes.size(); ++r) {
    if (classes[r] >= num_classes) throw DomainError("class index out of range");
    out.at(r, classes[r]) = 1.0;
  }
  return out;
}

inline Var cross_entropy_loss(Var prediction, std::span<const std::size_t> classes) {
  const Tensor& p = prediction.value();
  detail::require_matrix(p, "cross_entropy_loss");
  if (classes.size() != p.rows()) throw ShapeError("cross_entropy_loss: label count mismatch");
  return cross_entropy_loss(prediction, prediction.tape()->constant(one_hot_rows(classes, p.cols())));
}

inline Var loss(LossKind kind, Var prediction, Var target) {
  switch (kind) {
    case LossKind::mse: return mse_loss(prediction, target);
    case LossKind::bce: return bce_loss(prediction, target);
    case LossKind::cross_entropy: return cross_entropy_loss(prediction, target);
    case LossKind::l1: return l1_loss(prediction, target);
  }
  throw UnsupportedVariant("unknown loss kind");
}

}  // namespace semireward
