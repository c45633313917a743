#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "semireward/csv.hpp"
#include "semireward/dataset.hpp"
#include "semireward/label_codec.hpp"
#include "semireward/student.hpp"

namespace semireward {

inline constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

// Classification fills error_pct; regression fills mae and rmse (raw units).
struct EvalResult {
  double error_pct = kAbsent;
  double mae = kAbsent;
  double rmse = kAbsent;

  // Lower is better: error for classification, MAE for regression.
  double primary() const { return std::isnan(error_pct) ? mae : error_pct; }
};

inline EvalResult evaluate_predictions(std::span<const double> predictions, std::span<const double> targets,
                                       const LabelCodec& codec) {
  if (targets.empty()) throw DomainError("evaluate: empty split");
  if (predictions.size() != targets.size()) throw ShapeError("evaluate: prediction count mismatch");
  const double n = static_cast<double>(targets.size());
  EvalResult r;
  if (codec.is_regression()) {
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double d = predictions[i] - targets[i];
      abs_sum += std::abs(d);
      sq_sum += d * d;
    }
    r.mae = abs_sum / n;
    r.rmse = std::sqrt(sq_sum / n);
  } else {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) correct += predictions[i] == targets[i] ? 1 : 0;
    r.error_pct = 100.0 * (1.0 - static_cast<double>(correct) / n);
  }
  return r;
}

inline EvalResult evaluate(const StudentModel& model, const LabeledSplit& split) {
  if (split.size() == 0) throw DomainError("evaluate: empty split");
  return evaluate_predictions(model.predict(split.inputs), split.targets, model.codec());
}

// Quality of a set of pseudo labels against hidden raw truths. count == 0
// leaves both fields absent.
struct QualityResult {
  std::size_t count = 0;
  double accuracy_pct = kAbsent;  // classification only
  double mean_reward_target = kAbsent;
};

struct QualityTally {
  std::size_t count = 0;
  std::size_t correct = 0;
  double target_sum = 0.0;

  void add(std::span<const double> pseudo, double raw_truth, const LabelCodec& codec) {
    const LabelVector truth = encode_label(raw_truth, codec);
    ++count;
    target_sum += label_similarity(pseudo, truth.span());
    if (codec.is_classification() && argmax(pseudo) == argmax(truth.span())) ++correct;
  }

  QualityResult result(const LabelCodec& codec) const {
    QualityResult r;
    r.count = count;
    if (count == 0) return r;
    r.mean_reward_target = target_sum / static_cast<double>(count);
    if (codec.is_classification()) r.accuracy_pct = 100.0 * static_cast<double>(correct) / static_cast<double>(count);
    return r;
  }
};

inline QualityResult pseudo_label_quality(const Tensor& pseudo_labels, std::span<const double> raw_truths,
                                          const LabelCodec& codec) {
  QualityTally tally;
  if (pseudo_labels.rank() == 2 && pseudo_labels.rows() != raw_truths.size()) {
    throw ShapeError("pseudo_label_quality: label and truth counts differ");
  }
  for (std::size_t i = 0; i < raw_truths.size(); ++i) tally.add(pseudo_labels.row(i), raw_truths[i], codec);
  return tally.result(codec);
}

// ---------------------------------------------------------------------------
// Calibration curve

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_score = kAbsent;
  double accuracy = kAbsent;  // mean correctness in [0, 1]
};

// Equal-width bins over [0, 1]; a score of exactly 1 lands in the last bin.
// `correctness` is 0/1 (or a soft quality in [0, 1]) per pair.
inline std::vector<CalibrationBin> calibration_export(std::span<const double> scores,
                                                      std::span<const double> correctness, std::size_t n_bins) {
  if (n_bins < 2) throw DomainError("calibration_export: n_bins must be >= 2");
  if (scores.empty()) throw DomainError("calibration_export: no pairs");
  if (scores.size() != correctness.size()) throw ShapeError("calibration_export: score and correctness counts differ");
  std::vector<CalibrationBin> bins(n_bins);
  std::vector<double> score_sum(n_bins, 0.0), correct_sum(n_bins, 0.0);
  const double width = 1.0 / static_cast<double>(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lo = static_cast<double>(b) * width;
    bins[b].hi = b + 1 == n_bins ? 1.0 : static_cast<double>(b + 1) * width;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    if (!(s >= 0.0 && s <= 1.0)) throw DomainError("calibration_export: score outside [0, 1]");
    std::size_t b = static_cast<std::size_t>(s * static_cast<double>(n_bins));
    if (b >= n_bins) b = n_bins - 1;
    ++bins[b].count;
    score_sum[b] += s;
    correct_sum[b] += correctness[i];
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (bins[b].count == 0) continue;
    const double c = static_cast<double>(bins[b].count);
    bins[b].mean_score = score_sum[b] / c;
    bins[b].accuracy = correct_sum[b] / c;
  }
  return bins;
}

inline void write_calibration_csv(const std::filesystem::path& path, const std::vector<CalibrationBin>& bins) {
  CsvWriter w(path);
  w.header({"bin_lo", "bin_hi", "count", "mean_reward", "accuracy"});
  for (const auto& b : bins) {
    w.cell(b.lo).cell(b.hi).cell(b.count).cell(b.mean_score).cell(b.accuracy);
    w.end_row();
  }
}

}  // namespace semireward
