#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "semireward/label_codec.hpp"
#include "semireward/nn.hpp"

namespace semireward {

// Desk-scale stand-in for the backbone: input -> hidden... -> output. The
// output is C logits for classification, or one scalar in normalised label
// units [0, C] for regression. The last hidden layer doubles as the feature
// extractor. A teacher is just another StudentModel with the same layout.
class StudentModel {
 public:
  StudentModel() = default;

  StudentModel(std::size_t input_dim, std::vector<std::size_t> hidden, LabelCodec codec, Rng& rng)
      : codec_(std::move(codec)) {
    if (input_dim == 0) throw ConfigError("student input_dim must be positive");
    if (hidden.empty()) throw ConfigError("student needs at least one hidden layer");
    if (codec_.kind() == TaskKind::multi_label) throw ConfigError("student does not support multi-label codecs");
    std::vector<std::size_t> widths{input_dim};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(output_dim_for(codec_));
    mlp_ = Mlp::create(params_, "mlp", std::move(widths), rng);
  }

  static std::size_t output_dim_for(const LabelCodec& codec) { return codec.is_regression() ? 1 : codec.length(); }

  const LabelCodec& codec() const noexcept { return codec_; }
  const Mlp& mlp() const noexcept { return mlp_; }
  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }

  std::size_t input_dim() const { return mlp_.input_dim(); }
  std::size_t output_dim() const { return mlp_.output_dim(); }
  std::size_t feature_dim() const { return mlp_.penultimate_dim(); }
  std::size_t parameter_count() const { return params_.count(); }

  Mlp::Output forward(std::span<const Var> bound, Var x) const {
    if (x.value().rank() != 2 || x.value().cols() != input_dim()) {
      throw ShapeError("student: inputs must be [B x " + std::to_string(input_dim()) + "], got " +
                       to_string(x.value().shape()));
    }
    return mlp_.forward(bound, x);
  }

  struct Inference {
    Tensor outputs;   // [B x output_dim]
    Tensor features;  // [B x feature_dim]
  };

  // Frozen forward pass; nothing is recorded for backward.
  Inference infer(const Tensor& x) const {
    ComputeTape tape;
    const auto bound = bind_frozen(tape, params_);
    const auto out = forward(bound, tape.constant_ref(x));
    return {out.output.value(), out.penultimate.value()};
  }

  // Test-time point prediction: class index, or raw regression value.
  std::vector<double> predict(const Tensor& x) const {
    const Tensor out = infer(x).outputs;
    std::vector<double> result(out.rows());
    for (std::size_t r = 0; r < out.rows(); ++r) {
      result[r] = codec_.is_regression() ? codec_.denormalize(clamp_normalized(out.row(r)[0]))
                                         : static_cast<double>(argmax(out.row(r)));
    }
    return result;
  }

  double clamp_normalized(double y) const {
    const double top = static_cast<double>(codec_.length());
    return y < 0.0 ? 0.0 : (y > top ? top : y);
  }

 private:
  LabelCodec codec_ = LabelCodec::classification(2);
  ParameterSet params_;
  Mlp mlp_;
};

// Penultimate activations of the (frozen) teacher.
inline Tensor feature_extract(const StudentModel& teacher, const Tensor& x) { return teacher.infer(x).features; }

}  // namespace semireward
