#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "semireward/ops.hpp"
#include "semireward/optim.hpp"
#include "semireward/rng.hpp"
#include "semireward/tape.hpp"

namespace semireward {

// Puts every parameter on the tape. Trainable bindings accumulate gradients
// into the parameter set; frozen bindings are stop-gradient constants.
inline std::vector<Var> bind_trainable(ComputeTape& tape, ParameterSet& params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (auto& p : params) vars.push_back(tape.watch(p));
  return vars;
}

inline std::vector<Var> bind_frozen(ComputeTape& tape, const ParameterSet& params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant_ref(p));
  return vars;
}

// Adds "<name>.weight" [in x out] and "<name>.bias" [1 x out] with the usual
// U(-1/sqrt(in), 1/sqrt(in)) initialisation. Returns the weight index; the
// bias follows it.
inline std::size_t add_linear(ParameterSet& params, const std::string& name, std::size_t in,
                              std::size_t out, Rng& rng, double gain = 1.0) {
  const double bound = gain / std::sqrt(static_cast<double>(in));
  const std::size_t w = params.add(name + ".weight", Tensor::uniform({in, out}, rng, -bound, bound));
  params.add(name + ".bias", Tensor::uniform({1, out}, rng, -bound, bound));
  return w;
}

inline std::size_t linear_parameter_count(std::size_t in, std::size_t out) { return in * out + out; }

inline Var linear(std::span<const Var> bound, std::size_t weight_index, Var x) {
  return add_bias(matmul(x, bound[weight_index]), bound[weight_index + 1]);
}

// Fully connected stack widths[0] -> widths[1] -> ... -> widths.back() with
// ReLU between layers and a raw final output.
struct Mlp {
  std::vector<std::size_t> widths;
  std::size_t first_param = 0;

  static Mlp create(ParameterSet& params, const std::string& prefix, std::vector<std::size_t> widths,
                    Rng& rng) {
    if (widths.size() < 2) throw ConfigError("an MLP needs at least an input and an output width");
    Mlp mlp{std::move(widths), params.size()};
    for (std::size_t l = 0; l + 1 < mlp.widths.size(); ++l) {
      add_linear(params, prefix + ".l" + std::to_string(l), mlp.widths[l], mlp.widths[l + 1], rng);
    }
    return mlp;
  }

  std::size_t layers() const { return widths.size() - 1; }
  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  // Width of the last hidden layer (the input width for a single-layer MLP).
  std::size_t penultimate_dim() const { return widths[widths.size() - 2]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += linear_parameter_count(widths[l], widths[l + 1]);
    return n;
  }

  struct Output {
    Var output;
    Var penultimate;
  };

  Output forward(std::span<const Var> bound, Var x) const {
    Var h = x;
    Var penultimate = x;
    for (std::size_t l = 0; l < layers(); ++l) {
      h = linear(bound, first_param + 2 * l, h);
      if (l + 1 < layers()) {
        h = relu(h);
        penultimate = h;
      }
    }
    return {h, penultimate};
  }
};

}  // namespace semireward
