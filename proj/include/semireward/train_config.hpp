#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "semireward/error.hpp"
#include "semireward/label_codec.hpp"
#include "semireward/ops.hpp"
#include "semireward/rewarder.hpp"
#include "semireward/selection.hpp"

namespace semireward {

// Where stage-2 rewarder targets come from: labeled pairs plus the selected
// pseudo labels taken as ground truth, or labeled pairs only.
enum class Stage2Truth { pseudo, labeled_only };

inline Stage2Truth parse_stage2_truth(const std::string& name) {
  if (name == "pseudo") return Stage2Truth::pseudo;
  if (name == "labeled_only") return Stage2Truth::labeled_only;
  throw ConfigError("unknown stage2_truth '" + name + "'");
}

inline std::string to_string(Stage2Truth t) { return t == Stage2Truth::pseudo ? "pseudo" : "labeled_only"; }

// Optional per-row rescaling of teacher features before the rewarder and
// generator see them.
enum class FeatureNorm { none, rms };

inline FeatureNorm parse_feature_norm(const std::string& name) {
  if (name == "none") return FeatureNorm::none;
  if (name == "rms") return FeatureNorm::rms;
  throw ConfigError("unknown feature_norm '" + name + "'");
}

inline std::string to_string(FeatureNorm n) { return n == FeatureNorm::none ? "none" : "rms"; }

// Which network the test metrics are computed on.
enum class EvalModel { teacher, student };

inline EvalModel parse_eval_model(const std::string& name) {
  if (name == "teacher") return EvalModel::teacher;
  if (name == "student") return EvalModel::student;
  throw ConfigError("unknown eval_model '" + name + "'");
}

inline std::string to_string(EvalModel m) { return m == EvalModel::teacher ? "teacher" : "student"; }

inline LossKind parse_student_loss(const std::string& name) {
  if (name == "cross_entropy") return LossKind::cross_entropy;
  if (name == "l1") return LossKind::l1;
  if (name == "mse") return LossKind::mse;
  throw ConfigError("unknown student loss '" + name + "'");
}

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::bce: return "bce";
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::l1: return "l1";
  }
  return "?";
}

struct TrainConfig {
  std::size_t total_iters = 1000;
  double stage2_start_fraction = 0.1;
  double subsample_ratio = 0.1;
  std::size_t labeled_batch = 16;
  std::size_t unlabeled_batch = 16;
  std::size_t rewarder_batch = 16;

  std::vector<std::size_t> student_hidden = {1024, 768, 32};
  double student_lr = 1e-3;
  double student_weight_decay = 0.0;
  // Empty picks cross_entropy for classification and l1 for regression.
  std::string student_loss;
  double ema_momentum = 0.999;
  double augment_scale = 0.05;  // noise std as a fraction of per-feature std

  std::size_t rewarder_embed_dim = 32;
  double rewarder_lr = 5e-4;
  double generator_lr = 5e-4;
  RewarderLossKind rewarder_loss = RewarderLossKind::mse;
  SimilarityMetric similarity = SimilarityMetric::scaled_cosine;
  std::vector<std::size_t> generator_hidden = {256, 128, 64};
  double gumbel_scale = 2.0;
  double logit_bound = 1.0;
  FeatureNorm feature_norm = FeatureNorm::none;

  SelectionStrategy selection;
  Stage2Truth stage2_truth = Stage2Truth::pseudo;
  // Probability that a pseudo label is replaced by a random other class (or a
  // uniform value for regression) before scoring.
  double pseudo_label_noise = 0.0;

  EvalModel eval_model = EvalModel::teacher;
  std::size_t log_interval = 50;
  // Logged intervals without a new best before halting; 0 never halts.
  std::size_t early_stop_patience = 0;
  bool write_checkpoints = true;
  std::uint64_t seed = 0;

  std::size_t stage_boundary() const {
    return static_cast<std::size_t>(std::floor(stage2_start_fraction * static_cast<double>(total_iters)));
  }

  LossKind student_loss_kind(const LabelCodec& codec) const {
    if (student_loss.empty()) return codec.is_regression() ? LossKind::l1 : LossKind::cross_entropy;
    return parse_student_loss(student_loss);
  }

  void validate() const {
    if (!(stage2_start_fraction >= 0.0 && stage2_start_fraction <= 1.0)) {
      throw ConfigError("stage2_start_fraction must lie in [0, 1]");
    }
    if (!(subsample_ratio > 0.0 && subsample_ratio <= 1.0)) throw ConfigError("subsample_ratio must lie in (0, 1]");
    if (labeled_batch < 1 || unlabeled_batch < 1 || rewarder_batch < 1) {
      throw ConfigError("batch sizes must be >= 1");
    }
    if (student_hidden.empty()) throw ConfigError("student_hidden needs at least one layer");
    for (auto w : student_hidden) {
      if (w == 0) throw ConfigError("student_hidden widths must be positive");
    }
    for (auto w : generator_hidden) {
      if (w == 0) throw ConfigError("generator_hidden widths must be positive");
    }
    if (!(student_lr > 0.0)) throw ConfigError("student_lr must be > 0");
    if (!(student_weight_decay >= 0.0)) throw ConfigError("student_weight_decay must be >= 0");
    if (!student_loss.empty()) parse_student_loss(student_loss);
    if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw ConfigError("ema_momentum must lie in [0, 1]");
    if (!(augment_scale >= 0.0)) throw ConfigError("augment_scale must be >= 0");
    if (rewarder_embed_dim == 0) throw ConfigError("rewarder_embed_dim must be positive");
    if (!(rewarder_lr > 0.0)) throw ConfigError("rewarder_lr must be > 0");
    if (!(generator_lr > 0.0)) throw ConfigError("generator_lr must be > 0");
    if (!(gumbel_scale >= 0.0) || !(logit_bound >= 0.0)) {
      throw ConfigError("gumbel_scale and logit_bound must be >= 0");
    }
    if (similarity == SimilarityMetric::js_divergence) {
      throw UnsupportedVariant("js_divergence reward target is not supported");
    }
    if (!(pseudo_label_noise >= 0.0 && pseudo_label_noise <= 1.0)) {
      throw ConfigError("pseudo_label_noise must lie in [0, 1]");
    }
    if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
    selection.validate();
  }

  void validate_for(const LabelCodec& codec) const {
    validate();
    const LossKind k = student_loss_kind(codec);
    if (codec.is_classification() && k != LossKind::cross_entropy) {
      throw ConfigError("classification needs student_loss cross_entropy");
    }
    if (codec.is_regression() && k == LossKind::cross_entropy) {
      throw ConfigError("regression needs student_loss l1 or mse");
    }
  }
};

}  // namespace semireward
