#pragma once

#include <cmath>
#include <cstddef>
#include <exception>
#include <filesystem>
#include <optional>
#include <set>
#include <unordered_map>
#include <string>
#include <vector>

#include "semireward/checkpoint.hpp"
#include "semireward/config.hpp"
#include "semireward/csv.hpp"
#include "semireward/dataset.hpp"
#include "semireward/metrics.hpp"
#include "semireward/pipeline.hpp"

namespace semireward {

// ---------------------------------------------------------------------------
// Rebuilding networks from checkpoint entries

struct RestoredRun {
  LabelCodec codec = LabelCodec::classification(2);
  StudentModel teacher;
  FeatureNorm feature_norm = FeatureNorm::none;
  std::optional<Rewarder> rewarder;
};

namespace detail {

inline const Tensor& require_entry(const std::vector<NamedTensor>& entries, const std::string& name) {
  const Tensor* t = find_entry(entries, name);
  if (!t) throw IoError("checkpoint has no entry '" + name + "'");
  return *t;
}

inline std::size_t as_count(double v, const std::string& what) {
  if (!(v >= 0.0) || v != std::floor(v)) throw IoError("checkpoint: bad " + what);
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline RestoredRun restore_run(const std::vector<NamedTensor>& entries) {
  RestoredRun r;
  const Tensor& codec = detail::require_entry(entries, "meta.codec");
  if (codec.size() != 4) throw IoError("checkpoint: meta.codec must hold 4 values");
  const std::size_t length = detail::as_count(codec[1], "codec length");
  r.codec = codec[0] == 1.0 ? LabelCodec::regression(length, codec[2], codec[3]) : LabelCodec::classification(length);

  const Tensor& widths = detail::require_entry(entries, "meta.student_widths");
  if (widths.size() < 3) throw IoError("checkpoint: meta.student_widths too short");
  std::vector<std::size_t> hidden;
  for (std::size_t i = 1; i + 1 < widths.size(); ++i) hidden.push_back(detail::as_count(widths[i], "student width"));
  Rng unused(0);
  r.teacher = StudentModel(detail::as_count(widths[0], "input width"), hidden, r.codec, unused);
  load_parameters(entries, "teacher", r.teacher.params());

  if (const Tensor* norm = find_entry(entries, "meta.feature_norm")) {
    r.feature_norm = (*norm)[0] == 1.0 ? FeatureNorm::rms : FeatureNorm::none;
  }
  if (const Tensor* rc = find_entry(entries, "meta.rewarder")) {
    if (rc->size() != 3) throw IoError("checkpoint: meta.rewarder must hold 3 values");
    RewarderConfig cfg{detail::as_count((*rc)[0], "rewarder feature dim"),
                       detail::as_count((*rc)[1], "rewarder label dim"),
                       detail::as_count((*rc)[2], "rewarder embed dim")};
    r.rewarder.emplace(cfg, unused);
    load_parameters(entries, "rewarder", r.rewarder->params());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Calibration of a trained rewarder

// Scores the teacher's pseudo labels on the unlabeled split and bins them by
// reward. Correctness is 0/1 for classification and the reward target for
// regression.
inline std::vector<CalibrationBin> calibrate_rewarder(const RestoredRun& run, const Dataset& data,
                                                      std::size_t n_bins) {
  if (!run.rewarder) throw ConfigError("checkpoint has no rewarder to calibrate");
  if (!(run.codec == data.codec)) throw ConfigError("checkpoint codec does not match the dataset");
  if (data.unlabeled.size() == 0) throw DomainError("calibrate: unlabeled split is empty");
  const PseudoLabels pl = pseudo_label_generate(run.teacher, data.unlabeled.inputs);
  const std::vector<double> scores =
      run.rewarder->score(normalize_features(pl.features, run.feature_norm), pl.labels);

  std::unordered_map<std::size_t, double> truth;
  for (std::size_t i = 0; i < data.unlabeled_truth.ids.size(); ++i) {
    truth[data.unlabeled_truth.ids[i]] = data.unlabeled_truth.targets[i];
  }
  std::vector<double> correctness(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto it = truth.find(data.unlabeled.ids[i]);
    if (it == truth.end()) throw IoError("calibrate: no hidden truth for unlabeled id " +
                                         std::to_string(data.unlabeled.ids[i]));
    const LabelVector t = encode_label(it->second, data.codec);
    correctness[i] = data.codec.is_classification()
                         ? (argmax(pl.labels.row(i)) == argmax(t.span()) ? 1.0 : 0.0)
                         : label_similarity(pl.labels.row(i), t.span());
  }
  return calibration_export(scores, correctness, n_bins);
}

// ---------------------------------------------------------------------------
// Strategy comparison

struct CompareRow {
  std::string label;
  SelectionStrategy strategy;
  bool failed = false;
  std::string error;
  RunSummary summary;
  double final_metric = kAbsent;
  double best_metric = kAbsent;
  std::size_t iterations_to_best = 0;
  double speedup = kAbsent;  // iterations_to_best(first row) / iterations_to_best(this row)
};

struct CompareSummary {
  std::vector<CompareRow> rows;
  std::size_t failures() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.failed ? 1 : 0;
    return n;
  }
};

inline double relative_speedup(std::size_t base_iterations, std::size_t variant_iterations) {
  if (variant_iterations == 0) return base_iterations == 0 ? 1.0 : kAbsent;
  return static_cast<double>(base_iterations) / static_cast<double>(variant_iterations);
}

// Distinct labels: the strategy label, suffixed with its position on repeats.
inline std::vector<std::string> compare_labels(const std::vector<SelectionStrategy>& strategies) {
  std::vector<std::string> labels;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    std::string l = strategies[i].label();
    if (!seen.insert(l).second) {
      l += "_" + std::to_string(i);
      seen.insert(l);
    }
    labels.push_back(l);
  }
  return labels;
}

// Runs every strategy on the same dataset and seed. A failing run is recorded
// and the rest still run. With an out_dir each run writes to <out_dir>/<label>
// and the table goes to compare.csv and compare.json.
inline CompareSummary compare_strategies(const ExperimentConfig& experiment,
                                         const std::vector<SelectionStrategy>& strategies,
                                         const std::filesystem::path& out_dir = {}) {
  if (strategies.size() < 2) throw ConfigError("compare needs at least two strategies");
  experiment.dataset.validate();
  const Dataset data = generate_dataset(experiment.dataset);
  const auto labels = compare_labels(strategies);
  CompareSummary out;
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    CompareRow row;
    row.label = labels[i];
    row.strategy = strategies[i];
    TrainConfig cfg = experiment.train;
    cfg.selection = strategies[i];
    try {
      cfg.validate_for(data.codec);
      row.summary = train_run(cfg, data, out_dir.empty() ? out_dir : out_dir / row.label);
      row.final_metric = row.summary.final_row.primary();
      row.best_metric = row.summary.best_row.primary();
      row.iterations_to_best = row.summary.best_iteration;
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    out.rows.push_back(std::move(row));
  }
  const CompareRow& base = out.rows.front();
  for (auto& r : out.rows) {
    if (!base.failed && !r.failed) r.speedup = relative_speedup(base.iterations_to_best, r.iterations_to_best);
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    CsvWriter csv(out_dir / "compare.csv");
    csv.header({"strategy", "status", "final_metric", "best_metric", "iterations_to_best", "speedup",
                "seconds_per_iteration"});
    Json table = Json::array();
    for (const auto& r : out.rows) {
      csv.cell(r.label).cell(std::string(r.failed ? "failed" : "ok")).cell(r.final_metric).cell(r.best_metric);
      csv.cell(r.iterations_to_best).cell(r.speedup).cell(r.failed ? kAbsent : r.summary.seconds_per_iteration());
      csv.end_row();
      Json j{{"strategy", r.label},
             {"selection", to_json(r.strategy)},
             {"status", r.failed ? "failed" : "ok"}};
      if (r.failed) {
        j["error"] = r.error;
      } else {
        j["summary"] = to_json(r.summary);
        j["iterations_to_best"] = r.iterations_to_best;
        j["speedup"] = std::isfinite(r.speedup) ? Json(r.speedup) : Json(nullptr);
      }
      table.push_back(std::move(j));
    }
    write_json_file(out_dir / "compare.json", Json{{"dataset", to_json(experiment.dataset)}, {"runs", table}});
  }
  return out;
}

}  // namespace semireward
