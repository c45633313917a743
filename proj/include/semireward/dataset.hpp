#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "semireward/csv.hpp"
#include "semireward/error.hpp"
#include "semireward/label_codec.hpp"
#include "semireward/rng.hpp"
#include "semireward/tensor.hpp"

namespace semireward {

enum class DatasetKind { gaussian_blobs, concentric_rings, rotation_regression };

inline DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "gaussian_blobs" || name == "blobs") return DatasetKind::gaussian_blobs;
  if (name == "concentric_rings" || name == "rings") return DatasetKind::concentric_rings;
  if (name == "rotation_regression" || name == "synthetic_rotation_regression") {
    return DatasetKind::rotation_regression;
  }
  throw ConfigError("unknown dataset kind '" + name + "'");
}

inline std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::gaussian_blobs: return "gaussian_blobs";
    case DatasetKind::concentric_rings: return "concentric_rings";
    case DatasetKind::rotation_regression: return "rotation_regression";
  }
  return "?";
}

struct DatasetSpec {
  DatasetKind kind = DatasetKind::gaussian_blobs;
  std::size_t num_classes = 4;  // bins of the soft one-hot codec for regression
  std::size_t dims = 16;
  double spread = 0.1;
  // Regression only: target angle range in degrees and nuisance-dimension scale.
  double range_lo = -90.0;
  double range_hi = 90.0;
  double nuisance = 1.0;
  std::size_t n_labeled_per_class = 4;
  std::size_t n_labeled = 0;  // regression: total labeled count
  std::size_t n_unlabeled = 1000;
  std::size_t n_test = 2000;
  std::uint64_t seed = 0;

  static constexpr std::size_t kMaxPopulation = 10'000'000;

  bool is_regression() const { return kind == DatasetKind::rotation_regression; }

  std::size_t labeled_count() const { return is_regression() ? n_labeled : n_labeled_per_class * num_classes; }

  LabelCodec codec() const {
    return is_regression() ? LabelCodec::regression(num_classes, range_lo, range_hi)
                           : LabelCodec::classification(num_classes);
  }

  void validate() const {
    if (num_classes < (is_regression() ? 1u : 2u)) throw ConfigError("dataset: num_classes too small");
    if (dims < 2) throw ConfigError("dataset: dims must be >= 2");
    if (kind == DatasetKind::gaussian_blobs && dims < num_classes) {
      throw ConfigError("dataset: blobs need dims >= num_classes for orthogonal centroids");
    }
    if (!(spread >= 0.0) || !std::isfinite(spread)) throw ConfigError("dataset: spread must be finite and >= 0");
    if (is_regression()) {
      if (!(range_lo < range_hi) || range_hi - range_lo > 360.0) {
        throw ConfigError("dataset: regression range must satisfy lo < hi and span at most 360 degrees");
      }
      if (n_labeled == 0) throw ConfigError("dataset: n_labeled must be positive");
    } else if (n_labeled_per_class == 0) {
      throw ConfigError("dataset: n_labeled_per_class must be positive");
    }
    if (n_unlabeled == 0 || n_test == 0) throw ConfigError("dataset: split counts must be positive");
    const std::size_t total = labeled_count() + n_unlabeled + n_test;
    if (total > kMaxPopulation || labeled_count() > kMaxPopulation) {
      throw ConfigError("dataset: " + std::to_string(total) + " examples exceeds the generable population of " +
                        std::to_string(kMaxPopulation));
    }
  }
};

// Labels are class indices (stored as doubles) or raw regression targets.
struct LabeledSplit {
  Tensor inputs;
  std::vector<double> targets;
  std::vector<std::size_t> ids;

  std::size_t size() const { return targets.size(); }
};

// What training sees of the unlabeled pool: inputs only.
struct UnlabeledSplit {
  Tensor inputs;
  std::vector<std::size_t> ids;

  std::size_t size() const { return ids.size(); }
};

// Ground truth for the unlabeled pool, kept apart so it can only reach metrics.
struct HiddenTruths {
  std::vector<double> targets;
  std::vector<std::size_t> ids;
};

struct Dataset {
  DatasetSpec spec;
  LabelCodec codec = LabelCodec::classification(2);
  LabeledSplit labeled;
  UnlabeledSplit unlabeled;
  HiddenTruths unlabeled_truth;
  LabeledSplit test;

  std::size_t input_dim() const { return labeled.inputs.cols(); }
};

namespace detail {

inline Eigen::MatrixXd random_rotation(std::size_t n, Rng& rng) {
  Eigen::MatrixXd g(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) g(r, c) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Fix column signs so Q does not depend on the QR sign convention.
  const Eigen::MatrixXd rr = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t c = 0; c < n; ++c) {
    if (rr(c, c) < 0.0) q.col(c) *= -1.0;
  }
  return q;
}

struct Generated {
  std::vector<double> x;
  double target;
};

class PointSource {
 public:
  PointSource(const DatasetSpec& spec, Rng& rng) : spec_(spec), rotation_(random_rotation(spec.dims, rng)) {}

  // Latent point for a class (classification) or a random draw (regression).
  Generated draw(std::size_t cls, Rng& rng) const {
    const std::size_t d = spec_.dims;
    Eigen::VectorXd latent = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    double target = static_cast<double>(cls);
    switch (spec_.kind) {
      case DatasetKind::gaussian_blobs:
        // Centroids are scaled basis vectors, pairwise distance 1.
        latent(static_cast<Eigen::Index>(cls)) = std::numbers::sqrt2 / 2.0;
        for (std::size_t i = 0; i < d; ++i) latent(static_cast<Eigen::Index>(i)) += spec_.spread * rng.normal();
        break;
      case DatasetKind::concentric_rings: {
        const double radius = 1.0 + static_cast<double>(cls) + spec_.spread * rng.normal();
        const double angle = 2.0 * std::numbers::pi * rng.uniform();
        latent(0) = radius * std::cos(angle);
        latent(1) = radius * std::sin(angle);
        for (std::size_t i = 2; i < d; ++i) latent(static_cast<Eigen::Index>(i)) = spec_.spread * rng.normal();
        break;
      }
      case DatasetKind::rotation_regression: {
        target = rng.uniform(spec_.range_lo, spec_.range_hi);
        const double radians = target * std::numbers::pi / 180.0;
        latent(0) = std::cos(radians) + spec_.spread * rng.normal();
        latent(1) = std::sin(radians) + spec_.spread * rng.normal();
        for (std::size_t i = 2; i < d; ++i) latent(static_cast<Eigen::Index>(i)) = spec_.nuisance * rng.normal();
        break;
      }
    }
    const Eigen::VectorXd x = rotation_ * latent;
    return {std::vector<double>(x.data(), x.data() + x.size()), target};
  }

 private:
  const DatasetSpec& spec_;
  Eigen::MatrixXd rotation_;
};

inline void append_row(std::vector<double>& flat, const std::vector<double>& x) {
  flat.insert(flat.end(), x.begin(), x.end());
}

}  // namespace detail

// Deterministic per seed. Every example gets a unique id in generation order,
// so the splits are disjoint by construction. The labeled split is exactly
// class balanced; unlabeled and test classes are drawn uniformly.
inline Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const detail::PointSource source(spec, rng);
  Dataset ds{spec, spec.codec(), {}, {}, {}, {}};
  const std::size_t d = spec.dims;
  std::size_t next_id = 0;

  std::vector<double> flat;
  for (std::size_t i = 0; i < spec.labeled_count(); ++i) {
    const std::size_t cls = spec.is_regression() ? 0 : i % spec.num_classes;
    const auto g = source.draw(cls, rng);
    detail::append_row(flat, g.x);
    ds.labeled.targets.push_back(g.target);
    ds.labeled.ids.push_back(next_id++);
  }
  ds.labeled.inputs = Tensor({ds.labeled.ids.size(), d}, std::move(flat));

  flat.clear();
  for (std::size_t i = 0; i < spec.n_unlabeled; ++i) {
    const std::size_t cls = spec.is_regression() ? 0 : rng.index(spec.num_classes);
    const auto g = source.draw(cls, rng);
    detail::append_row(flat, g.x);
    ds.unlabeled.ids.push_back(next_id);
    ds.unlabeled_truth.ids.push_back(next_id++);
    ds.unlabeled_truth.targets.push_back(g.target);
  }
  ds.unlabeled.inputs = Tensor({spec.n_unlabeled, d}, std::move(flat));

  flat.clear();
  for (std::size_t i = 0; i < spec.n_test; ++i) {
    const std::size_t cls = spec.is_regression() ? 0 : rng.index(spec.num_classes);
    const auto g = source.draw(cls, rng);
    detail::append_row(flat, g.x);
    ds.test.targets.push_back(g.target);
    ds.test.ids.push_back(next_id++);
  }
  ds.test.inputs = Tensor({spec.n_test, d}, std::move(flat));
  return ds;
}

// ---------------------------------------------------------------------------
// CSV interchange: <dir>/{labeled,unlabeled,unlabeled_truth,test}.csv

namespace detail {

inline void write_split(const std::filesystem::path& path, const Tensor& inputs,
                        const std::vector<std::size_t>& ids, const std::vector<double>* targets) {
  CsvWriter csv(path);
  std::vector<std::string> header{"id"};
  if (targets) header.push_back("label");
  for (std::size_t c = 0; c < inputs.cols(); ++c) header.push_back("x" + std::to_string(c));
  csv.header(header);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    csv.cell(ids[r]);
    if (targets) csv.cell((*targets)[r]);
    for (double v : inputs.row(r)) csv.cell(v);
    csv.end_row();
  }
}

inline LabeledSplit read_split(const std::filesystem::path& path, bool has_labels) {
  const CsvTable table = read_csv(path);
  const std::size_t offset = has_labels ? 2 : 1;
  if (table.header.size() <= offset) throw IoError(path.string() + ": no feature columns");
  const std::size_t d = table.header.size() - offset;
  LabeledSplit split;
  std::vector<double> flat;
  for (const auto& row : table.rows) {
    split.ids.push_back(static_cast<std::size_t>(row[0]));
    if (has_labels) split.targets.push_back(row[1]);
    flat.insert(flat.end(), row.begin() + static_cast<std::ptrdiff_t>(offset), row.end());
  }
  split.inputs = Tensor({table.rows.size(), d}, std::move(flat));
  return split;
}

}  // namespace detail

inline void write_dataset_csv(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_split(dir / "labeled.csv", ds.labeled.inputs, ds.labeled.ids, &ds.labeled.targets);
  detail::write_split(dir / "unlabeled.csv", ds.unlabeled.inputs, ds.unlabeled.ids, nullptr);
  detail::write_split(dir / "test.csv", ds.test.inputs, ds.test.ids, &ds.test.targets);
  CsvWriter truth(dir / "unlabeled_truth.csv");
  truth.header({"id", "label"});
  for (std::size_t i = 0; i < ds.unlabeled_truth.ids.size(); ++i) {
    truth.cell(ds.unlabeled_truth.ids[i]);
    truth.cell(ds.unlabeled_truth.targets[i]);
    truth.end_row();
  }
}

// Reads the CSV files back. The codec is not stored in the CSVs; pass it in.
inline Dataset read_dataset_csv(const std::filesystem::path& dir, const LabelCodec& codec) {
  Dataset ds;
  ds.codec = codec;
  ds.labeled = detail::read_split(dir / "labeled.csv", true);
  const LabeledSplit unl = detail::read_split(dir / "unlabeled.csv", false);
  ds.unlabeled.inputs = unl.inputs;
  ds.unlabeled.ids = unl.ids;
  ds.test = detail::read_split(dir / "test.csv", true);
  const CsvTable truth = read_csv(dir / "unlabeled_truth.csv");
  for (const auto& row : truth.rows) {
    ds.unlabeled_truth.ids.push_back(static_cast<std::size_t>(row.at(0)));
    ds.unlabeled_truth.targets.push_back(row.at(1));
  }
  if (ds.unlabeled_truth.ids != ds.unlabeled.ids) throw IoError(dir.string() + ": unlabeled truth ids do not match");
  return ds;
}

}  // namespace semireward
