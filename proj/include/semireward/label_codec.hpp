#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "semireward/error.hpp"

namespace semireward {

enum class TaskKind { classification, regression, multi_label };

// How raw labels become vectors. Regression labels are mapped affinely from
// [lo, hi] to [0, bins] and then soft one-hot encoded.
class LabelCodec {
 public:
  static LabelCodec classification(std::size_t num_classes) {
    if (num_classes < 2) throw ConfigError("classification codec needs at least 2 classes");
    LabelCodec c;
    c.kind_ = TaskKind::classification;
    c.size_ = num_classes;
    return c;
  }

  static LabelCodec regression(std::size_t bins, double lo, double hi) {
    if (bins < 1) throw ConfigError("regression codec needs at least 1 bin");
    if (!(lo < hi)) throw ConfigError("regression range must satisfy lo < hi");
    LabelCodec c;
    c.kind_ = TaskKind::regression;
    c.size_ = bins;
    c.lo_ = lo;
    c.hi_ = hi;
    return c;
  }

  static LabelCodec multi_label(std::vector<LabelCodec> parts) {
    if (parts.empty()) throw ConfigError("multi-label codec needs at least one part");
    LabelCodec c;
    c.kind_ = TaskKind::multi_label;
    c.size_ = 0;
    for (const auto& p : parts) c.size_ += p.length();
    c.parts_ = std::move(parts);
    return c;
  }

  TaskKind kind() const noexcept { return kind_; }
  bool is_classification() const noexcept { return kind_ == TaskKind::classification; }
  bool is_regression() const noexcept { return kind_ == TaskKind::regression; }

  // Number of classes or bins; for multi-label the concatenated length.
  std::size_t length() const noexcept { return size_; }
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  const std::vector<LabelCodec>& parts() const noexcept { return parts_; }

  // Raw regression value -> [0, bins].
  double normalize(double raw) const {
    return (raw - lo_) / (hi_ - lo_) * static_cast<double>(size_);
  }
  double denormalize(double normalized) const {
    return lo_ + normalized / static_cast<double>(size_) * (hi_ - lo_);
  }

  friend bool operator==(const LabelCodec& a, const LabelCodec& b) {
    return a.kind_ == b.kind_ && a.size_ == b.size_ && a.lo_ == b.lo_ && a.hi_ == b.hi_ &&
           a.parts_ == b.parts_;
  }

 private:
  LabelCodec() = default;

  TaskKind kind_ = TaskKind::classification;
  std::size_t size_ = 2;
  double lo_ = 0.0;
  double hi_ = 1.0;
  std::vector<LabelCodec> parts_;
};

struct LabelVector {
  std::vector<double> values;
  LabelCodec codec;

  std::size_t size() const noexcept { return values.size(); }
  std::span<const double> span() const noexcept { return values; }
};

// Largest value a soft one-hot entry may take; 2 itself is excluded.
inline constexpr double kSoftOneHotCeiling = 2.0 - 1e-12;

inline LabelVector encode_onehot(std::size_t class_index, const LabelCodec& codec) {
  if (!codec.is_classification()) throw DomainError("encode_onehot needs a classification codec");
  if (class_index >= codec.length()) {
    throw DomainError("class index " + std::to_string(class_index) + " outside [0, " +
                      std::to_string(codec.length()) + ")");
  }
  LabelVector v{std::vector<double>(codec.length(), 0.0), codec};
  v.values[class_index] = 1.0;
  return v;
}

// Soft one-hot of an already-normalised value y in [0, bins]: bin k with
// k <= y < k + 1 holds 1 + (y - k). y == bins falls in the last bin.
inline LabelVector encode_soft_onehot_normalized(double y, const LabelCodec& codec) {
  if (!codec.is_regression()) throw DomainError("encode_soft_onehot needs a regression codec");
  const double bins = static_cast<double>(codec.length());
  if (!(y >= 0.0 && y <= bins)) {
    throw DomainError("regression value " + std::to_string(y) + " outside normalised range [0, " +
                      std::to_string(codec.length()) + "]");
  }
  std::size_t k = static_cast<std::size_t>(std::floor(y));
  if (k >= codec.length()) k = codec.length() - 1;
  LabelVector v{std::vector<double>(codec.length(), 0.0), codec};
  v.values[k] = std::min(1.0 + (y - static_cast<double>(k)), kSoftOneHotCeiling);
  return v;
}

// Soft one-hot of a raw value in [lo, hi].
inline LabelVector encode_soft_onehot(double raw, const LabelCodec& codec) {
  if (!codec.is_regression()) throw DomainError("encode_soft_onehot needs a regression codec");
  if (!(raw >= codec.lo() && raw <= codec.hi())) {
    throw DomainError("regression value " + std::to_string(raw) + " outside [" +
                      std::to_string(codec.lo()) + ", " + std::to_string(codec.hi()) + "]");
  }
  return encode_soft_onehot_normalized(std::clamp(codec.normalize(raw), 0.0,
                                                  static_cast<double>(codec.length())),
                                       codec);
}

// Inverse of the soft one-hot in normalised units.
inline double decode_regression_normalized(std::span<const double> values) {
  std::size_t active = values.size();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != 0.0) {
      if (active != values.size()) throw DomainError("soft one-hot vector has several nonzero entries");
      active = i;
    }
  }
  if (active == values.size()) throw DomainError("soft one-hot vector is all zero");
  const double v = values[active];
  if (!(v >= 1.0 && v < 2.0)) throw DomainError("soft one-hot entry outside [1, 2)");
  return static_cast<double>(active) + (v - 1.0);
}

// Inverse of encode_soft_onehot, in raw label units.
inline double decode_regression(const LabelVector& v) {
  if (!v.codec.is_regression()) throw DomainError("decode_regression needs a regression label");
  if (v.values.size() != v.codec.length()) throw DomainError("label length does not match codec");
  return v.codec.denormalize(decode_regression_normalized(v.values));
}

inline std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw DomainError("argmax of empty vector");
  // First maximal index wins ties.
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

inline LabelVector concat_multilabel(const std::vector<LabelVector>& parts) {
  if (parts.empty()) throw DomainError("concat_multilabel needs at least one part");
  if (parts.size() == 1) return parts.front();
  std::vector<LabelCodec> codecs;
  std::vector<double> values;
  for (const auto& p : parts) {
    if (p.values.size() != p.codec.length()) throw DomainError("label length does not match its codec");
    codecs.push_back(p.codec);
    values.insert(values.end(), p.values.begin(), p.values.end());
  }
  return {std::move(values), LabelCodec::multi_label(std::move(codecs))};
}

// ---------------------------------------------------------------------------
// Label similarity and the reward target

enum class SimilarityMetric { scaled_cosine, neg_l2, js_divergence };

inline SimilarityMetric parse_similarity(const std::string& name) {
  if (name == "scaled_cosine") return SimilarityMetric::scaled_cosine;
  if (name == "neg_l2") return SimilarityMetric::neg_l2;
  if (name == "js_divergence") return SimilarityMetric::js_divergence;
  throw ConfigError("unknown similarity metric '" + name + "'");
}

inline std::string to_string(SimilarityMetric m) {
  switch (m) {
    case SimilarityMetric::scaled_cosine: return "scaled_cosine";
    case SimilarityMetric::neg_l2: return "neg_l2";
    case SimilarityMetric::js_divergence: return "js_divergence";
  }
  return "unknown";
}

// scaled_cosine: (a.b) / (2 |a| |b|) + 0.5, in [0, 1].
// neg_l2:        exp(-|a - b|^2), in (0, 1].
// Both are exactly symmetric: every accumulation runs in index order over
// commutative products.
inline double label_similarity(std::span<const double> a, std::span<const double> b,
                               SimilarityMetric metric = SimilarityMetric::scaled_cosine) {
  if (a.size() != b.size()) {
    throw ShapeError("label_similarity: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " differ");
  }
  switch (metric) {
    case SimilarityMetric::scaled_cosine: {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      if (na == 0.0 || nb == 0.0) throw DomainError("label_similarity on an all-zero label");
      const double cosine = dot / (std::sqrt(na) * std::sqrt(nb));
      return std::clamp(cosine / 2.0 + 0.5, 0.0, 1.0);
    }
    case SimilarityMetric::neg_l2: {
      double d2 = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
      return std::exp(-d2);
    }
    case SimilarityMetric::js_divergence:
      throw UnsupportedVariant("js_divergence reward target is not supported: it does not give calibrated rewards");
  }
  throw UnsupportedVariant("unknown similarity metric");
}

inline double label_similarity(const LabelVector& a, const LabelVector& b,
                               SimilarityMetric metric = SimilarityMetric::scaled_cosine) {
  return label_similarity(a.span(), b.span(), metric);
}

// Reward score of a pseudo label against the ground truth.
inline double reward_target(const LabelVector& pseudo, const LabelVector& truth,
                            SimilarityMetric metric = SimilarityMetric::scaled_cosine) {
  return label_similarity(pseudo, truth, metric);
}

// Encodes a raw dataset label (class index, or regression value in raw units).
inline LabelVector encode_label(double raw, const LabelCodec& codec) {
  if (codec.is_classification()) {
    if (raw < 0.0 || raw != std::floor(raw)) throw DomainError("class label must be a non-negative integer");
    return encode_onehot(static_cast<std::size_t>(raw), codec);
  }
  if (codec.is_regression()) return encode_soft_onehot(raw, codec);
  throw DomainError("encode_label does not handle multi-label codecs; encode parts and concatenate");
}

}  // namespace semireward
