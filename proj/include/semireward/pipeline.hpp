#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "semireward/checkpoint.hpp"
#include "semireward/config.hpp"
#include "semireward/csv.hpp"
#include "semireward/dataset.hpp"
#include "semireward/metrics.hpp"
#include "semireward/rewarder.hpp"
#include "semireward/selection.hpp"
#include "semireward/student.hpp"
#include "semireward/train_config.hpp"

namespace semireward {

enum class Stage { stage1, stage2 };

inline int stage_number(Stage s) { return s == Stage::stage1 ? 1 : 2; }

// Raw inputs plus encoded label rows (one-hot or soft one-hot).
struct LabeledBatch {
  Tensor inputs;
  Tensor labels;

  std::size_t size() const { return inputs.rank() == 2 ? inputs.rows() : 0; }
};

// Inputs only; ids let metrics look up hidden truths afterwards.
struct UnlabeledBatch {
  Tensor inputs;
  std::vector<std::size_t> ids;

  std::size_t size() const { return ids.size(); }
};

inline Tensor encode_label_rows(std::span<const double> raw, const LabelCodec& codec) {
  Tensor out({raw.size(), codec.length()});
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const LabelVector v = encode_label(raw[i], codec);
    std::copy(v.values.begin(), v.values.end(), out.row(i).begin());
  }
  return out;
}

inline std::vector<double> feature_std(const Tensor& x) {
  std::vector<double> sd(x.cols(), 0.0);
  if (x.rows() == 0) return sd;
  const double n = static_cast<double>(x.rows());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) m += x.at(r, c);
    m /= n;
    for (std::size_t r = 0; r < x.rows(); ++r) v += (x.at(r, c) - m) * (x.at(r, c) - m);
    sd[c] = std::sqrt(v / n);
  }
  return sd;
}

// Weak augmentation: additive Gaussian noise, scale * per-feature std.
inline Tensor weak_augment(const Tensor& x, std::span<const double> sd, double scale, Rng& rng) {
  Tensor y = x;
  if (scale == 0.0) return y;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < y.cols(); ++c) y.at(r, c) += scale * sd[c] * rng.normal();
  }
  return y;
}

inline Tensor normalize_features(Tensor f, FeatureNorm norm) {
  if (norm == FeatureNorm::none) return f;
  for (std::size_t r = 0; r < f.rows(); ++r) {
    double ss = 0.0;
    for (double v : f.row(r)) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(f.cols())) + 1e-12;
    for (double& v : f.row(r)) v /= rms;
  }
  return f;
}

struct PseudoLabels {
  Tensor labels;                     // [B x C]
  std::vector<double> confidences;   // teacher probability of the emitted label
  Tensor features;                   // teacher penultimate activations
  Tensor probabilities;              // classification only
};

// Classification: one-hot argmax (lowest index on ties) and its softmax
// probability. Regression: soft one-hot of the clamped prediction, confidence 1.
inline PseudoLabels pseudo_label_generate(const StudentModel& teacher, const Tensor& x) {
  const auto inf = teacher.infer(x);
  const LabelCodec& codec = teacher.codec();
  PseudoLabels pl;
  pl.features = inf.features;
  pl.labels = Tensor({x.rows(), codec.length()});
  pl.confidences.resize(x.rows());
  if (codec.is_regression()) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const LabelVector v = encode_soft_onehot_normalized(teacher.clamp_normalized(inf.outputs.row(r)[0]), codec);
      std::copy(v.values.begin(), v.values.end(), pl.labels.row(r).begin());
      pl.confidences[r] = 1.0;
    }
    return pl;
  }
  pl.probabilities = Tensor({x.rows(), codec.length()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    softmax_row(inf.outputs.row(r), pl.probabilities.row(r));
    const std::size_t cls = argmax(inf.outputs.row(r));
    pl.labels.at(r, cls) = 1.0;
    pl.confidences[r] = pl.probabilities.at(r, cls);
  }
  return pl;
}

// Replaces each pseudo label with probability p: a uniformly drawn other
// class, or a uniform value over the label range for regression.
inline void inject_label_noise(PseudoLabels& pl, const LabelCodec& codec, double p, Rng& rng) {
  if (p <= 0.0) return;
  for (std::size_t r = 0; r < pl.labels.rows(); ++r) {
    if (rng.uniform() >= p) continue;
    auto row = pl.labels.row(r);
    if (codec.is_regression()) {
      const double y = rng.uniform(0.0, static_cast<double>(codec.length()));
      const LabelVector v = encode_soft_onehot_normalized(y, codec);
      std::copy(v.values.begin(), v.values.end(), row.begin());
      continue;
    }
    const std::size_t c = codec.length();
    const std::size_t current = argmax(row);
    const std::size_t replacement = (current + 1 + rng.index(c - 1)) % c;
    std::fill(row.begin(), row.end(), 0.0);
    row[replacement] = 1.0;
    pl.confidences[r] = pl.probabilities.at(r, replacement);
  }
}

// Student targets: label rows for classification, the normalised scalar
// ([B x 1]) for regression.
inline Tensor student_targets(const Tensor& labels, const LabelCodec& codec) {
  if (!codec.is_regression()) return labels;
  Tensor t({labels.rows(), 1});
  for (std::size_t r = 0; r < labels.rows(); ++r) t[r] = decode_regression_normalized(labels.row(r));
  return t;
}

// Mean H(y_i, f_S(x_i)) over a batch, recorded on `tape`.
inline Var student_batch_loss(ComputeTape& tape, std::span<const Var> bound, const StudentModel& student,
                              const Tensor& x, const Tensor& labels, LossKind kind) {
  if (x.rank() != 2 || x.rows() == 0) throw DomainError("student loss on an empty batch");
  if (labels.rank() != 2 || labels.rows() != x.rows()) throw ShapeError("student loss: label rows mismatch");
  const Var out = student.forward(bound, tape.constant_ref(x)).output;
  const Tensor targets = student_targets(labels, student.codec());
  if (student.codec().is_regression()) return loss(kind, out, tape.constant(targets));
  return cross_entropy_loss(softmax_rows(out), tape.constant(targets));
}

// (1/B) sum_i H(y_i, f_S(x_i)) on an already augmented batch.
inline double supervised_loss(const StudentModel& student, const LabeledBatch& batch, LossKind kind) {
  ComputeTape tape;
  const auto bound = bind_frozen(tape, student.params());
  return student_batch_loss(tape, bound, student, batch.inputs, batch.labels, kind).value().item();
}

// L = L_L + L_U with L_U = (1/B_U) sum_j mask_j H(y_j, f_S(x_j)). Only the
// selected rows are passed in, so L_U = (n_selected / B_U) * their mean loss.
struct StudentObjective {
  Var total;  // valid only while its tape lives
  double labeled = 0.0;
  double unlabeled = 0.0;
  double value = 0.0;
};

inline StudentObjective student_objective(ComputeTape& tape, std::span<const Var> bound,
                                          const StudentModel& student, const LabeledBatch& labeled,
                                          const Tensor& selected_inputs, const Tensor& selected_labels,
                                          std::size_t unlabeled_batch_size, LossKind kind) {
  const Var l_l = student_batch_loss(tape, bound, student, labeled.inputs, labeled.labels, kind);
  StudentObjective obj{l_l, l_l.value().item(), 0.0, l_l.value().item()};
  const std::size_t n_sel = selected_inputs.rank() == 2 ? selected_inputs.rows() : 0;
  if (n_sel == 0) return obj;
  if (unlabeled_batch_size == 0) throw DomainError("student_objective: unlabeled batch size is zero");
  const Var mean_u = student_batch_loss(tape, bound, student, selected_inputs, selected_labels, kind);
  const Var l_u = scale(mean_u, static_cast<double>(n_sel) / static_cast<double>(unlabeled_batch_size));
  obj.unlabeled = l_u.value().item();
  obj.total = add(l_l, l_u);
  obj.value = obj.total.value().item();
  return obj;
}

// ---------------------------------------------------------------------------
// Run state

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Independent random streams so that, for example, the rewarder's draws never
// shift the student's batches.
struct RunStreams {
  Rng labeled, unlabeled, augment, teacher_augment, aux, noise;

  explicit RunStreams(std::uint64_t seed)
      : labeled(derive_seed(seed, 10)),
        unlabeled(derive_seed(seed, 11)),
        augment(derive_seed(seed, 12)),
        teacher_augment(derive_seed(seed, 13)),
        aux(derive_seed(seed, 14)),
        noise(derive_seed(seed, 15)) {}
};

struct RunState {
  TrainConfig config;
  LabelCodec codec = LabelCodec::classification(2);
  LossKind student_loss = LossKind::cross_entropy;
  std::size_t iteration = 0;  // index of the next step
  StudentModel student;
  StudentModel teacher;
  AdamState student_opt;
  bool has_rewarder = false;
  Rewarder rewarder;
  Generator generator;
  AdamState rewarder_opt;
  AdamState generator_opt;
  RunningThreshold running_threshold;
  std::vector<double> augment_std;
  RunStreams rng{0};

  std::size_t boundary() const { return config.stage_boundary(); }
  Stage stage() const { return iteration >= boundary() ? Stage::stage2 : Stage::stage1; }

  Tensor rewarder_features(const Tensor& teacher_features) const {
    return normalize_features(teacher_features, config.feature_norm);
  }
};

inline RunState init_run_state(const TrainConfig& cfg, const LabelCodec& codec, std::size_t input_dim,
                               std::vector<double> augment_std) {
  cfg.validate_for(codec);
  if (augment_std.size() != input_dim) throw ShapeError("augment_std length must equal input_dim");
  RunState s;
  s.config = cfg;
  s.codec = codec;
  s.student_loss = cfg.student_loss_kind(codec);
  s.augment_std = std::move(augment_std);
  s.rng = RunStreams(cfg.seed);
  Rng student_init(derive_seed(cfg.seed, 1));
  s.student = StudentModel(input_dim, cfg.student_hidden, codec, student_init);
  s.teacher = s.student;
  AdamConfig sc;
  sc.learning_rate = cfg.student_lr;
  sc.weight_decay = cfg.student_weight_decay;
  s.student_opt = AdamState(s.student.params(), sc);
  if (cfg.selection.uses_rewarder()) {
    Rng aux_init(derive_seed(cfg.seed, 2));
    s.has_rewarder = true;
    s.rewarder = Rewarder({s.student.feature_dim(), codec.length(), cfg.rewarder_embed_dim}, aux_init);
    GeneratorConfig gc{s.student.feature_dim(), codec.length(), cfg.generator_hidden};
    gc.gumbel_scale = cfg.gumbel_scale;
    gc.logit_bound = cfg.logit_bound;
    s.generator = Generator(gc, aux_init);
    s.rewarder_opt = AdamState(s.rewarder.params(), AdamConfig{cfg.rewarder_lr});
    s.generator_opt = AdamState(s.generator.params(), AdamConfig{cfg.generator_lr});
  }
  return s;
}

inline RewarderLossConfig rewarder_loss_config(const TrainConfig& cfg) {
  RewarderLossConfig c;
  c.loss_kind = cfg.rewarder_loss;
  c.learning_rate = cfg.rewarder_lr;
  c.similarity = cfg.similarity;
  return c;
}

struct StepRecord {
  std::size_t iteration = 0;
  Stage stage = Stage::stage1;
  double loss_supervised = 0.0;
  double loss_unlabeled = 0.0;
  double loss_total = 0.0;
  double loss_rewarder = kAbsent;
  double loss_generator = kAbsent;
  std::size_t forwards = 0;
  std::size_t rewarder_subsample = 0;
  // Stage 2: the screened pseudo labels, their rewards and the selection.
  std::vector<std::size_t> unlabeled_ids;
  Tensor pseudo_labels;
  std::vector<double> rewards;
  SelectionResult selection;
};

namespace detail {

inline StudentObjective student_update(RunState& s, const LabeledBatch& labeled, const Tensor& selected_inputs,
                                       const Tensor& selected_labels) {
  const LabeledBatch aug_l{weak_augment(labeled.inputs, s.augment_std, s.config.augment_scale, s.rng.augment),
                           labeled.labels};
  Tensor aug_u = selected_inputs;
  if (aug_u.rank() == 2 && aug_u.rows() > 0) {
    aug_u = weak_augment(selected_inputs, s.augment_std, s.config.augment_scale, s.rng.augment);
  }
  s.student.params().zero_grad();
  ComputeTape tape;
  const auto bound = bind_trainable(tape, s.student.params());
  StudentObjective obj = student_objective(tape, bound, s.student, aug_l, aug_u, selected_labels,
                                           s.config.unlabeled_batch, s.student_loss);
  tape.backward(obj.total);
  adam_step(s.student.params(), s.student_opt);
  return obj;
}

inline Tensor teacher_features(const RunState& s, const Tensor& inputs, Rng& rng) {
  const Tensor x = weak_augment(inputs, s.augment_std, s.config.augment_scale, rng);
  return s.rewarder_features(feature_extract(s.teacher, x));
}

}  // namespace detail

// Stage 1: supervised student step, rewarder/generator trained on labeled
// pairs only, EMA teacher update. `rewarder_batch` defaults to `labeled`.
inline StepRecord stage1_step(RunState& s, const LabeledBatch& labeled, const LabeledBatch* rewarder_batch = nullptr) {
  if (s.stage() != Stage::stage1) throw DomainError("stage1_step called in stage 2");
  if (labeled.size() == 0) throw DomainError("stage1_step: empty labeled batch");
  StepRecord rec;
  rec.iteration = s.iteration;
  rec.stage = Stage::stage1;
  const StudentObjective obj = detail::student_update(s, labeled, Tensor(), Tensor());
  rec.loss_supervised = obj.labeled;
  rec.loss_total = obj.labeled;
  if (s.has_rewarder) {
    const LabeledBatch& rb = rewarder_batch ? *rewarder_batch : labeled;
    const Tensor f = detail::teacher_features(s, rb.inputs, s.rng.aux);
    const AuxLosses aux = alternating_update(s.rewarder, s.generator, f, rb.labels, s.rewarder_opt,
                                             s.generator_opt, rewarder_loss_config(s.config), s.rng.aux);
    rec.loss_rewarder = aux.rewarder;
    rec.loss_generator = aux.generator;
    rec.rewarder_subsample = rb.size();
  }
  ema_update(s.teacher.params(), s.student.params(), s.config.ema_momentum);
  ++s.iteration;
  return rec;
}

// Number of pairs the rewarder trains on in a stage-2 step.
inline std::size_t stage2_subsample_size(double ratio, std::size_t labeled, std::size_t selected) {
  const double n = std::round(ratio * static_cast<double>(labeled + selected));
  return std::max<std::size_t>(1, static_cast<std::size_t>(n));
}

// Forward passes per stage-2 step: the decay schedule when screening, else 1.
inline std::size_t stage2_forward_count(const RunState& s) {
  if (!s.config.selection.screens()) return 1;
  return decay_forward_count(s.config.total_iters, std::max<std::size_t>(s.iteration, 1), s.config.selection.decay_cap);
}

// Teacher pseudo labels for an unlabeled batch. Each pass sees a fresh weak
// augmentation; with a rewarder every row keeps its best-rewarded pass.
inline CandidateBatch screened_candidates(RunState& s, const UnlabeledBatch& unlabeled, std::size_t n_forwards) {
  auto forward = [&](std::size_t) {
    const Tensor x = weak_augment(unlabeled.inputs, s.augment_std, s.config.augment_scale, s.rng.teacher_augment);
    PseudoLabels pl = pseudo_label_generate(s.teacher, x);
    inject_label_noise(pl, s.codec, s.config.pseudo_label_noise, s.rng.noise);
    CandidateBatch c{std::move(pl.labels), s.rewarder_features(pl.features), std::move(pl.confidences), {}};
    if (s.has_rewarder) c.rewards = s.rewarder.score(c.features, c.labels);
    return c;
  };
  return multi_forward_screen_batch(forward, n_forwards);
}

// Applies the configured strategy; per-class thresholds group rows by their
// pseudo-label argmax.
inline SelectionResult select_candidates(RunState& s, const CandidateBatch& c) {
  std::vector<std::size_t> classes(c.labels.rows(), 0);
  if (s.codec.is_classification()) {
    for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = argmax(c.labels.row(i));
  }
  return apply_selection(s.config.selection, c.confidences, c.rewards, &s.running_threshold, classes);
}

// Stage 2: pseudo labels (screened when decay is on), selection, the L_L + L_U
// student step, a rewarder/generator step on a random subsample of labeled
// and selected pairs, then the EMA teacher update.
inline StepRecord stage2_step(RunState& s, const LabeledBatch& labeled, const UnlabeledBatch& unlabeled) {
  if (s.stage() != Stage::stage2) throw DomainError("stage2_step called in stage 1");
  if (labeled.size() == 0) throw DomainError("stage2_step: empty labeled batch");
  if (unlabeled.size() == 0 || unlabeled.inputs.rows() != unlabeled.size()) {
    throw DomainError("stage2_step: empty or inconsistent unlabeled batch");
  }
  const TrainConfig& cfg = s.config;
  StepRecord rec;
  rec.iteration = s.iteration;
  rec.stage = Stage::stage2;
  rec.unlabeled_ids = unlabeled.ids;

  // (1) pseudo labels, (2) selection.
  const std::size_t n_forwards = stage2_forward_count(s);
  const CandidateBatch best = screened_candidates(s, unlabeled, n_forwards);
  rec.forwards = n_forwards;
  rec.pseudo_labels = best.labels;
  rec.rewards = best.rewards;
  rec.selection = select_candidates(s, best);
  const auto chosen = rec.selection.selected_indices();

  // (3) student.
  Tensor sel_x, sel_y;
  if (!chosen.empty()) {
    sel_x = unlabeled.inputs.gather_rows(chosen);
    sel_y = best.labels.gather_rows(chosen);
  }
  const StudentObjective obj = detail::student_update(s, labeled, sel_x, sel_y);
  rec.loss_supervised = obj.labeled;
  rec.loss_unlabeled = obj.unlabeled;
  rec.loss_total = obj.value;

  // (4) rewarder and generator on a fresh subsample.
  if (s.has_rewarder) {
    const Tensor lf = detail::teacher_features(s, labeled.inputs, s.rng.aux);
    std::vector<std::vector<double>> pool_f, pool_y;
    for (std::size_t i = 0; i < labeled.size(); ++i) {
      pool_f.emplace_back(lf.row(i).begin(), lf.row(i).end());
      pool_y.emplace_back(labeled.labels.row(i).begin(), labeled.labels.row(i).end());
    }
    if (cfg.stage2_truth == Stage2Truth::pseudo) {
      for (std::size_t i : chosen) {
        pool_f.emplace_back(best.features.row(i).begin(), best.features.row(i).end());
        pool_y.emplace_back(best.labels.row(i).begin(), best.labels.row(i).end());
      }
    }
    const std::size_t n_r =
        std::min(pool_f.size(), stage2_subsample_size(cfg.subsample_ratio, labeled.size(), chosen.size()));
    const auto pick = s.rng.aux.sample_without_replacement(pool_f.size(), n_r);
    std::vector<std::vector<double>> sub_f, sub_y;
    for (std::size_t i : pick) {
      sub_f.push_back(pool_f[i]);
      sub_y.push_back(pool_y[i]);
    }
    const AuxLosses aux = alternating_update(s.rewarder, s.generator, stack_rows(sub_f), stack_rows(sub_y),
                                             s.rewarder_opt, s.generator_opt, rewarder_loss_config(cfg), s.rng.aux);
    rec.loss_rewarder = aux.rewarder;
    rec.loss_generator = aux.generator;
    rec.rewarder_subsample = n_r;
  }

  // (5) EMA teacher.
  ema_update(s.teacher.params(), s.student.params(), cfg.ema_momentum);
  ++s.iteration;
  return rec;
}

// ---------------------------------------------------------------------------
// Metrics stream

struct MetricsRow {
  std::size_t iteration = 0;
  int stage = 1;
  double loss_supervised = kAbsent;
  double loss_unlabeled = kAbsent;
  double loss_total = kAbsent;
  double loss_rewarder = kAbsent;
  double loss_generator = kAbsent;
  double test_error = kAbsent;
  double test_mae = kAbsent;
  double test_rmse = kAbsent;
  double sampling_rate = kAbsent;
  double mean_reward = kAbsent;
  double pseudo_label_accuracy = kAbsent;  // selected, vs hidden truths
  double rejected_accuracy = kAbsent;
  double selected_reward_target = kAbsent;
  double rejected_reward_target = kAbsent;
  double forwards = kAbsent;

  double primary() const { return std::isnan(test_error) ? test_mae : test_error; }
};

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{
      "iteration",      "stage",          "loss_supervised",       "loss_unlabeled",        "loss_total",
      "loss_rewarder",  "loss_generator", "test_error",            "test_mae",              "test_rmse",
      "sampling_rate",  "mean_reward",    "pseudo_label_accuracy", "rejected_accuracy",     "selected_reward_target",
      "rejected_reward_target", "forwards"};
  return cols;
}

inline void write_metrics_row(CsvWriter& w, const MetricsRow& r) {
  w.cell(r.iteration).cell(static_cast<std::size_t>(r.stage));
  for (double v : {r.loss_supervised, r.loss_unlabeled, r.loss_total, r.loss_rewarder, r.loss_generator,
                   r.test_error, r.test_mae, r.test_rmse, r.sampling_rate, r.mean_reward, r.pseudo_label_accuracy,
                   r.rejected_accuracy, r.selected_reward_target, r.rejected_reward_target, r.forwards}) {
    w.cell(v);
  }
  w.end_row();
}

inline Json to_json(const MetricsRow& r) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return Json{{"iteration", r.iteration},
              {"stage", r.stage},
              {"loss_supervised", num(r.loss_supervised)},
              {"loss_unlabeled", num(r.loss_unlabeled)},
              {"loss_total", num(r.loss_total)},
              {"loss_rewarder", num(r.loss_rewarder)},
              {"loss_generator", num(r.loss_generator)},
              {"test_error", num(r.test_error)},
              {"test_mae", num(r.test_mae)},
              {"test_rmse", num(r.test_rmse)},
              {"sampling_rate", num(r.sampling_rate)},
              {"mean_reward", num(r.mean_reward)},
              {"pseudo_label_accuracy", num(r.pseudo_label_accuracy)},
              {"rejected_accuracy", num(r.rejected_accuracy)},
              {"selected_reward_target", num(r.selected_reward_target)},
              {"rejected_reward_target", num(r.rejected_reward_target)},
              {"forwards", num(r.forwards)}};
}

// Accumulates step records between logged rows. Hidden truths enter only here.
class IntervalStats {
 public:
  IntervalStats(const LabelCodec& codec, const HiddenTruths* truths) : codec_(codec) {
    if (truths) {
      for (std::size_t i = 0; i < truths->ids.size(); ++i) truth_by_id_[truths->ids[i]] = truths->targets[i];
    }
  }

  void add(const StepRecord& rec) {
    ++steps_;
    sup_ += rec.loss_supervised;
    unl_ += rec.loss_unlabeled;
    tot_ += rec.loss_total;
    stage_ = stage_number(rec.stage);
    if (!std::isnan(rec.loss_rewarder)) {
      ++aux_steps_;
      rew_ += rec.loss_rewarder;
      gen_ += rec.loss_generator;
    }
    if (rec.stage != Stage::stage2) return;
    ++stage2_steps_;
    forwards_ += static_cast<double>(rec.forwards);
    unlabeled_ += rec.selection.size();
    selected_ += rec.selection.selected_count();
    for (double r : rec.rewards) {
      reward_sum_ += r;
      ++reward_count_;
    }
    for (std::size_t i = 0; i < rec.unlabeled_ids.size(); ++i) {
      const auto it = truth_by_id_.find(rec.unlabeled_ids[i]);
      if (it == truth_by_id_.end()) continue;
      (rec.selection.mask[i] ? selected_q_ : rejected_q_).add(rec.pseudo_labels.row(i), it->second, codec_);
    }
  }

  MetricsRow row(std::size_t iteration, const EvalResult& eval) const {
    MetricsRow r;
    r.iteration = iteration;
    r.stage = stage_;
    r.test_error = eval.error_pct;
    r.test_mae = eval.mae;
    r.test_rmse = eval.rmse;
    if (steps_ > 0) {
      const double n = static_cast<double>(steps_);
      r.loss_supervised = sup_ / n;
      r.loss_unlabeled = unl_ / n;
      r.loss_total = tot_ / n;
    }
    if (aux_steps_ > 0) {
      r.loss_rewarder = rew_ / static_cast<double>(aux_steps_);
      r.loss_generator = gen_ / static_cast<double>(aux_steps_);
    }
    if (stage2_steps_ > 0) {
      r.forwards = forwards_ / static_cast<double>(stage2_steps_);
    }
    if (unlabeled_ > 0) r.sampling_rate = static_cast<double>(selected_) / static_cast<double>(unlabeled_);
    if (reward_count_ > 0) r.mean_reward = reward_sum_ / static_cast<double>(reward_count_);
    const QualityResult sel = selected_q_.result(codec_), rej = rejected_q_.result(codec_);
    r.pseudo_label_accuracy = sel.accuracy_pct;
    r.selected_reward_target = sel.mean_reward_target;
    r.rejected_accuracy = rej.accuracy_pct;
    r.rejected_reward_target = rej.mean_reward_target;
    return r;
  }

  void reset() { *this = IntervalStats(codec_, std::move(truth_by_id_)); }

 private:
  IntervalStats(const LabelCodec& codec, std::unordered_map<std::size_t, double> truths)
      : codec_(codec), truth_by_id_(std::move(truths)) {}

  LabelCodec codec_;
  std::unordered_map<std::size_t, double> truth_by_id_;
  std::size_t steps_ = 0, aux_steps_ = 0, stage2_steps_ = 0;
  int stage_ = 1;
  double sup_ = 0.0, unl_ = 0.0, tot_ = 0.0, rew_ = 0.0, gen_ = 0.0, forwards_ = 0.0;
  std::size_t unlabeled_ = 0, selected_ = 0, reward_count_ = 0;
  double reward_sum_ = 0.0;
  QualityTally selected_q_, rejected_q_;
};

struct RunSummary {
  Json config;
  std::vector<MetricsRow> rows;
  MetricsRow final_row;
  MetricsRow best_row;
  std::size_t best_iteration = 0;
  std::size_t iterations_run = 0;
  bool halted_early = false;
  double wall_time_seconds = 0.0;
  double step_seconds = 0.0;
  std::size_t student_parameters = 0;
  std::size_t rewarder_parameters = 0;
  std::size_t generator_parameters = 0;

  double seconds_per_iteration() const {
    return iterations_run == 0 ? 0.0 : step_seconds / static_cast<double>(iterations_run);
  }
};

inline Json to_json(const RunSummary& s) {
  return Json{{"config", s.config},
              {"final", to_json(s.final_row)},
              {"best", to_json(s.best_row)},
              {"best_iteration", s.best_iteration},
              {"iterations_run", s.iterations_run},
              {"halted_early", s.halted_early},
              {"wall_time_seconds", s.wall_time_seconds},
              {"seconds_per_iteration", s.seconds_per_iteration()},
              {"student_parameters", s.student_parameters},
              {"rewarder_parameters", s.rewarder_parameters},
              {"generator_parameters", s.generator_parameters}};
}

// Checkpoint entries: every network's parameters plus "meta.*" tensors that
// describe the layout (codec, student widths, rewarder sizes, feature norm).
inline std::vector<NamedTensor> checkpoint_entries(const RunState& s) {
  std::vector<NamedTensor> entries;
  auto vec = [](std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  };
  const double kind = s.codec.is_regression() ? 1.0 : 0.0;
  entries.push_back({"meta.codec", vec({kind, static_cast<double>(s.codec.length()), s.codec.lo(), s.codec.hi()})});
  std::vector<double> widths;
  for (auto w : s.student.mlp().widths) widths.push_back(static_cast<double>(w));
  entries.push_back({"meta.student_widths", vec(widths)});
  entries.push_back({"meta.iteration", vec({static_cast<double>(s.iteration)})});
  entries.push_back({"meta.feature_norm", vec({s.config.feature_norm == FeatureNorm::rms ? 1.0 : 0.0})});
  append_parameters(entries, "student", s.student.params());
  append_parameters(entries, "teacher", s.teacher.params());
  if (s.has_rewarder) {
    const auto& rc = s.rewarder.config();
    entries.push_back({"meta.rewarder",
                       vec({static_cast<double>(rc.feature_dim), static_cast<double>(rc.label_dim),
                            static_cast<double>(rc.embed_dim)})});
    std::vector<double> gh;
    for (auto w : s.generator.config().hidden) gh.push_back(static_cast<double>(w));
    entries.push_back({"meta.generator_hidden", vec(gh)});
    append_parameters(entries, "rewarder", s.rewarder.params());
    append_parameters(entries, "generator", s.generator.params());
  }
  return entries;
}

namespace detail {

inline LabeledBatch draw_labeled(const LabeledSplit& split, std::size_t n, const LabelCodec& codec, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::vector<double> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = rng.index(split.size());
    raw[i] = split.targets[idx[i]];
  }
  return {split.inputs.gather_rows(idx), encode_label_rows(raw, codec)};
}

inline UnlabeledBatch draw_unlabeled(const UnlabeledSplit& split, std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = rng.index(split.size());
    ids[i] = split.ids[idx[i]];
  }
  return {split.inputs.gather_rows(idx), std::move(ids)};
}

}  // namespace detail

// Fresh run state for a dataset. The augmentation scale is the per-feature
// std of labeled and unlabeled inputs pooled.
inline RunState start_run(const TrainConfig& cfg, const Dataset& data) {
  Tensor pooled = data.labeled.inputs;
  if (data.unlabeled.size() > 0) {
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < data.labeled.inputs.rows(); ++r) {
      rows.emplace_back(data.labeled.inputs.row(r).begin(), data.labeled.inputs.row(r).end());
    }
    for (std::size_t r = 0; r < data.unlabeled.inputs.rows(); ++r) {
      rows.emplace_back(data.unlabeled.inputs.row(r).begin(), data.unlabeled.inputs.row(r).end());
    }
    pooled = stack_rows(rows);
  }
  return init_run_state(cfg, data.codec, data.input_dim(), feature_std(pooled));
}

// One training iteration with batches drawn from the run's own streams.
inline StepRecord run_step(RunState& s, const Dataset& data) {
  const TrainConfig& cfg = s.config;
  const LabeledBatch lb = detail::draw_labeled(data.labeled, cfg.labeled_batch, data.codec, s.rng.labeled);
  if (s.stage() == Stage::stage1) {
    LabeledBatch rb;
    if (s.has_rewarder) rb = detail::draw_labeled(data.labeled, cfg.rewarder_batch, data.codec, s.rng.aux);
    return stage1_step(s, lb, s.has_rewarder ? &rb : nullptr);
  }
  if (!cfg.selection.uses_pseudo_labels()) {
    // Supervised-only past the boundary: the stage-2 step with nothing selected.
    StepRecord rec;
    const StudentObjective obj = detail::student_update(s, lb, Tensor(), Tensor());
    rec.iteration = s.iteration;
    rec.stage = Stage::stage2;
    rec.loss_supervised = rec.loss_total = obj.labeled;
    ema_update(s.teacher.params(), s.student.params(), cfg.ema_momentum);
    ++s.iteration;
    return rec;
  }
  const UnlabeledBatch ub = detail::draw_unlabeled(data.unlabeled, cfg.unlabeled_batch, s.rng.unlabeled);
  return stage2_step(s, lb, ub);
}

// Full run: stage-1 steps before the boundary, stage-2 steps after. Rows are
// logged at iteration 0, every log_interval steps and after the last step.
// With a non-empty out_dir, writes metrics.csv, summary.json and checkpoints
// at the boundary and the end.
inline RunSummary train_run(const TrainConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir = {}) {
  const auto wall_start = std::chrono::steady_clock::now();
  cfg.validate_for(data.codec);
  if (data.labeled.size() == 0) throw ConfigError("train_run: labeled split is empty");
  if (data.test.size() == 0) throw ConfigError("train_run: test split is empty");
  const bool needs_unlabeled = cfg.selection.uses_pseudo_labels() && cfg.stage_boundary() < cfg.total_iters;
  if (needs_unlabeled && data.unlabeled.size() == 0) throw ConfigError("train_run: unlabeled split is empty");

  RunState s = start_run(cfg, data);

  RunSummary summary;
  summary.config = to_json(cfg);
  summary.student_parameters = s.student.parameter_count();
  if (s.has_rewarder) {
    summary.rewarder_parameters = s.rewarder.params().count();
    summary.generator_parameters = s.generator.params().count();
  }

  const bool to_disk = !out_dir.empty();
  std::unique_ptr<CsvWriter> csv;
  if (to_disk) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    csv = std::make_unique<CsvWriter>(out_dir / "metrics.csv");
    csv->header(metrics_columns());
  }
  auto save_checkpoint = [&](const std::string& name) {
    if (to_disk && cfg.write_checkpoints) write_checkpoint(out_dir / name, checkpoint_entries(s));
  };

  IntervalStats stats(data.codec, &data.unlabeled_truth);
  std::size_t since_best = 0;
  auto log_row = [&](std::size_t iteration) {
    const StudentModel& judged = cfg.eval_model == EvalModel::teacher ? s.teacher : s.student;
    const MetricsRow row = stats.row(iteration, evaluate(judged, data.test));
    stats.reset();
    summary.rows.push_back(row);
    if (csv) write_metrics_row(*csv, row);
    if (summary.rows.size() == 1 || row.primary() < summary.best_row.primary()) {
      summary.best_row = row;
      summary.best_iteration = iteration;
      since_best = 0;
    } else {
      ++since_best;
    }
  };

  log_row(0);
  if (s.boundary() == 0) save_checkpoint("checkpoint_boundary.ckpt");
  for (std::size_t it = 0; it < cfg.total_iters; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    const StepRecord rec = run_step(s, data);
    summary.step_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    stats.add(rec);
    const std::size_t done = it + 1;
    if (done == s.boundary()) save_checkpoint("checkpoint_boundary.ckpt");
    if (done % cfg.log_interval == 0 || done == cfg.total_iters) {
      log_row(done);
      if (cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience && done < cfg.total_iters) {
        summary.halted_early = true;
        summary.iterations_run = done;
        break;
      }
    }
    summary.iterations_run = done;
  }
  save_checkpoint("checkpoint_final.ckpt");

  summary.final_row = summary.rows.back();
  summary.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  if (to_disk) write_json_file(out_dir / "summary.json", to_json(summary));
  return summary;
}

}  // namespace semireward
