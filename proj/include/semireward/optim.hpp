#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "semireward/error.hpp"
#include "semireward/tensor.hpp"

namespace semireward {

// Ordered, named collection of trainable tensors. Networks keep indices into
// it, so entries are never removed or reordered once added.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value) {
    for (const auto& existing : names_) {
      if (existing == name) throw ConfigError("duplicate parameter name '" + name + "'");
    }
    value.set_requires_grad(true);
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
    return tensors_.size() - 1;
  }

  std::size_t size() const noexcept { return tensors_.size(); }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    throw ConfigError("no parameter named '" + name + "'");
  }

  // Total number of scalar parameters.
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

  bool same_layout(const ParameterSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (tensors_[i].shape() != other.tensors_[i].shape()) return false;
    }
    return true;
  }

  bool all_finite() const {
    for (const auto& t : tensors_) {
      if (!t.all_finite()) return false;
    }
    return true;
  }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

inline void require_same_layout(const ParameterSet& a, const ParameterSet& b, const char* what) {
  if (!a.same_layout(b)) throw ShapeError(std::string(what) + ": parameter sets differ in shape");
}

// ---------------------------------------------------------------------------
// Adam with bias correction. weight_decay > 0 gives AdamW-style decoupled decay.

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;

  AdamState() = default;
  AdamState(const ParameterSet& params, AdamConfig cfg) : config(cfg) {
    for (const auto& p : params) {
      first_moment.emplace_back(p.size(), 0.0);
      second_moment.emplace_back(p.size(), 0.0);
    }
  }
};

// Applies one update using each parameter's stored gradient; a parameter
// without a gradient is treated as having a zero gradient.
inline void adam_step(ParameterSet& params, AdamState& state) {
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state was built for a different parameter set");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].size()) {
      throw ShapeError("adam_step: moment shape mismatch for '" + params.name(i) + "'");
    }
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    std::vector<double>& m = state.first_moment[i];
    std::vector<double>& v = state.second_moment[i];
    const auto grad = p.grad();
    const bool has_grad = p.has_grad();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = has_grad ? grad[k] : 0.0;
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      if (c.weight_decay != 0.0) p[k] -= c.learning_rate * c.weight_decay * p[k];
      p[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// SGD with heavy-ball momentum: v = momentum * v + g; p -= lr * v.

struct SgdState {
  double learning_rate = 0.03;
  double momentum = 0.9;
  std::vector<std::vector<double>> velocity;
  std::size_t step = 0;

  SgdState() = default;
  SgdState(const ParameterSet& params, double lr, double mom) : learning_rate(lr), momentum(mom) {
    for (const auto& p : params) velocity.emplace_back(p.size(), 0.0);
  }
};

inline void sgd_step(ParameterSet& params, SgdState& state) {
  if (state.velocity.size() != params.size()) {
    throw ShapeError("sgd_step: optimizer state was built for a different parameter set");
  }
  state.step += 1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    std::vector<double>& vel = state.velocity[i];
    if (vel.size() != p.size()) throw ShapeError("sgd_step: velocity shape mismatch");
    const auto grad = p.grad();
    const bool has_grad = p.has_grad();
    for (std::size_t k = 0; k < p.size(); ++k) {
      vel[k] = state.momentum * vel[k] + (has_grad ? grad[k] : 0.0);
      p[k] -= state.learning_rate * vel[k];
    }
  }
}

// teacher = momentum * teacher + (1 - momentum) * student, elementwise.
inline void ema_update(ParameterSet& teacher, const ParameterSet& student, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    throw DomainError("ema_update: momentum must lie in [0, 1]");
  }
  require_same_layout(teacher, student, "ema_update");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Tensor& t = teacher[i];
    const Tensor& s = student[i];
    if (momentum == 0.0) {
      std::copy(s.data().begin(), s.data().end(), t.data().begin());
      continue;
    }
    for (std::size_t k = 0; k < t.size(); ++k) {
      t[k] = momentum * t[k] + (1.0 - momentum) * s[k];
    }
  }
}

}  // namespace semireward
