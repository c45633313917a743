#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "semireward/error.hpp"
#include "semireward/tensor.hpp"

namespace semireward {

enum class SelectionKind { confidence, reward_average, reward_fixed, reward_topk, accept_all, supervised_only };

inline SelectionKind parse_selection_kind(const std::string& name) {
  if (name == "confidence" || name == "confidence_fixed") return SelectionKind::confidence;
  if (name == "reward_average") return SelectionKind::reward_average;
  if (name == "reward_fixed") return SelectionKind::reward_fixed;
  if (name == "reward_topk") return SelectionKind::reward_topk;
  if (name == "accept_all") return SelectionKind::accept_all;
  if (name == "supervised_only") return SelectionKind::supervised_only;
  throw ConfigError("unknown selection kind '" + name + "'");
}

inline std::string to_string(SelectionKind kind) {
  switch (kind) {
    case SelectionKind::confidence: return "confidence";
    case SelectionKind::reward_average: return "reward_average";
    case SelectionKind::reward_fixed: return "reward_fixed";
    case SelectionKind::reward_topk: return "reward_topk";
    case SelectionKind::accept_all: return "accept_all";
    case SelectionKind::supervised_only: return "supervised_only";
  }
  return "?";
}

// How reward_average picks its threshold: the current mini-batch mean, the
// mean over every score seen so far in the run, or the mini-batch mean over
// rows that share a pseudo-label class.
enum class ThresholdMode { batch, running, per_class };

inline ThresholdMode parse_threshold_mode(const std::string& name) {
  if (name == "batch") return ThresholdMode::batch;
  if (name == "running") return ThresholdMode::running;
  if (name == "per_class") return ThresholdMode::per_class;
  throw ConfigError("unknown threshold mode '" + name + "'");
}

inline std::string to_string(ThresholdMode mode) {
  switch (mode) {
    case ThresholdMode::batch: return "batch";
    case ThresholdMode::running: return "running";
    case ThresholdMode::per_class: return "per_class";
  }
  return "?";
}

struct SelectionStrategy {
  SelectionKind kind = SelectionKind::reward_average;
  double tau = 0.95;  // confidence or fixed-reward threshold
  std::size_t k = 16;
  bool decay_enabled = true;
  std::size_t decay_cap = 10;
  ThresholdMode threshold_mode = ThresholdMode::batch;

  bool uses_rewarder() const {
    return kind == SelectionKind::reward_average || kind == SelectionKind::reward_fixed ||
           kind == SelectionKind::reward_topk;
  }
  bool uses_pseudo_labels() const { return kind != SelectionKind::supervised_only; }
  // Multi-forward screening needs a rewarder to rank candidates.
  bool screens() const { return uses_rewarder() && decay_enabled; }

  void validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("selection.tau must lie in [0, 1]");
    if (k < 1) throw ConfigError("selection.k must be >= 1");
    if (decay_cap < 1) throw ConfigError("selection.decay_cap must be >= 1");
  }

  std::string label() const {
    switch (kind) {
      case SelectionKind::confidence: return "confidence(" + format_tau() + ")";
      case SelectionKind::reward_fixed: return "reward_fixed(" + format_tau() + ")";
      case SelectionKind::reward_topk: return "reward_topk(" + std::to_string(k) + ")";
      default: return to_string(kind);
    }
  }

 private:
  std::string format_tau() const {
    std::string s = std::to_string(tau);
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }
};

struct SelectionResult {
  std::vector<bool> mask;
  std::vector<double> scores;
  double sampling_rate = 0.0;

  std::size_t size() const { return mask.size(); }
  std::size_t selected_count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }
  std::vector<std::size_t> selected_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) out.push_back(i);
    }
    return out;
  }
};

namespace detail {

inline SelectionResult make_selection(std::vector<bool> mask, std::span<const double> scores) {
  SelectionResult r;
  r.mask = std::move(mask);
  r.scores.assign(scores.begin(), scores.end());
  const std::size_t n = r.mask.size();
  r.sampling_rate = n == 0 ? 0.0 : static_cast<double>(r.selected_count()) / static_cast<double>(n);
  return r;
}

inline SelectionResult threshold_above(std::span<const double> scores, double threshold) {
  std::vector<bool> mask(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) mask[i] = scores[i] > threshold;
  return make_selection(std::move(mask), scores);
}

// Mean taken relative to the first score, so a constant batch has exactly its
// own value as the mean.
inline double batch_mean(std::span<const double> scores) {
  double offset = 0.0;
  for (double v : scores) offset += v - scores[0];
  return scores[0] + offset / static_cast<double>(scores.size());
}

inline void require_nonempty(std::span<const double> scores, const char* op) {
  if (scores.empty()) throw DomainError(std::string(op) + ": empty batch");
}

}  // namespace detail

// mask_i = confidence_i > tau.
inline SelectionResult select_confidence(std::span<const double> confidences, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("select_confidence: tau must lie in [0, 1]");
  for (double c : confidences) {
    if (!(c >= 0.0 && c <= 1.0)) throw DomainError("select_confidence: confidences must lie in [0, 1]");
  }
  return detail::threshold_above(confidences, tau);
}

// Per-batch mean as the threshold; a constant batch selects nothing.
inline SelectionResult select_reward_average(std::span<const double> scores) {
  detail::require_nonempty(scores, "select_reward_average");
  return detail::threshold_above(scores, detail::batch_mean(scores));
}

// Each score is compared with the mean over rows in the same group. A group of
// one never selects its row.
inline SelectionResult select_reward_group_average(std::span<const double> scores,
                                                   std::span<const std::size_t> groups) {
  detail::require_nonempty(scores, "select_reward_group_average");
  if (groups.size() != scores.size()) throw ShapeError("select_reward_group_average: group count mismatch");
  std::vector<bool> mask(scores.size(), false);
  std::vector<bool> done(scores.size(), false);
  std::vector<double> members;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (done[i]) continue;
    members.clear();
    rows.clear();
    for (std::size_t j = i; j < scores.size(); ++j) {
      if (groups[j] != groups[i]) continue;
      done[j] = true;
      members.push_back(scores[j]);
      rows.push_back(j);
    }
    const double mean = detail::batch_mean(members);
    for (std::size_t j : rows) mask[j] = scores[j] > mean;
  }
  return detail::make_selection(std::move(mask), scores);
}

inline SelectionResult select_reward_fixed(std::span<const double> scores, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("select_reward_fixed: tau must lie in [0, 1]");
  return detail::threshold_above(scores, tau);
}

// The min(k, n) highest scores; ties go to the lower index.
inline SelectionResult select_reward_topk(std::span<const double> scores, std::size_t k) {
  if (k < 1) throw DomainError("select_reward_topk: k must be >= 1");
  detail::require_nonempty(scores, "select_reward_topk");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> mask(scores.size(), false);
  for (std::size_t i = 0; i < std::min(k, scores.size()); ++i) mask[order[i]] = true;
  return detail::make_selection(std::move(mask), scores);
}

inline SelectionResult select_accept_all(std::span<const double> scores) {
  return detail::make_selection(std::vector<bool>(scores.size(), true), scores);
}

inline SelectionResult select_none(std::span<const double> scores) {
  return detail::make_selection(std::vector<bool>(scores.size(), false), scores);
}

// Running mean of every reward seen so far, for ThresholdMode::running.
class RunningThreshold {
 public:
  double update(std::span<const double> scores) {
    for (double s : scores) {
      if (count_ == 0) first_ = s;
      ++count_;
      offset_sum_ += s - first_;
    }
    mean_ = first_ + offset_sum_ / static_cast<double>(count_);
    return mean_;
  }
  double value() const { return mean_; }
  std::size_t count() const { return count_; }

 private:
  double first_ = 0.0;
  double offset_sum_ = 0.0;
  double mean_ = 0.0;
  std::size_t count_ = 0;
};

// Applies a strategy. `confidences` feed the confidence rule, `rewards` the
// reward rules; the result's scores are whichever the rule used. `groups`
// holds each row's pseudo-label class for the per_class threshold.
inline SelectionResult apply_selection(const SelectionStrategy& s, std::span<const double> confidences,
                                       std::span<const double> rewards, RunningThreshold* running = nullptr,
                                       std::span<const std::size_t> groups = {}) {
  switch (s.kind) {
    case SelectionKind::confidence: return select_confidence(confidences, s.tau);
    case SelectionKind::reward_average:
      if (s.threshold_mode == ThresholdMode::running) {
        if (!running) throw ConfigError("running threshold mode needs a RunningThreshold");
        detail::require_nonempty(rewards, "select_reward_average");
        return detail::threshold_above(rewards, running->update(rewards));
      }
      if (s.threshold_mode == ThresholdMode::per_class) return select_reward_group_average(rewards, groups);
      return select_reward_average(rewards);
    case SelectionKind::reward_fixed: return select_reward_fixed(rewards, s.tau);
    case SelectionKind::reward_topk: return select_reward_topk(rewards, s.k);
    case SelectionKind::accept_all: return select_accept_all(confidences);
    case SelectionKind::supervised_only: return select_none(confidences);
  }
  throw ConfigError("unhandled selection kind");
}

// min(cap, ceil(total_steps / current_iter)), at least 1.
inline std::size_t decay_forward_count(std::size_t total_steps, std::size_t current_iter, std::size_t cap) {
  if (current_iter < 1) throw DomainError("decay_forward_count: current_iter must be >= 1");
  if (cap < 1) throw DomainError("decay_forward_count: cap must be >= 1");
  const std::size_t ceil_div = (total_steps + current_iter - 1) / current_iter;
  return std::max<std::size_t>(1, std::min(cap, ceil_div));
}

// Best-of-n screening for one item. propose(j) returns candidate j's label,
// score(label) its reward. Ties keep the earliest candidate, so n = 1 is the
// plain single forward.
struct ScreenedLabel {
  std::vector<double> label;
  double reward = 0.0;
  std::size_t chosen = 0;
  std::vector<double> candidate_rewards;
};

template <typename Propose, typename Score>
ScreenedLabel multi_forward_screen(Propose&& propose, Score&& score, std::size_t n_forwards) {
  if (n_forwards < 1) throw DomainError("multi_forward_screen: n_forwards must be >= 1");
  ScreenedLabel best;
  for (std::size_t j = 0; j < n_forwards; ++j) {
    std::vector<double> label = propose(j);
    const double r = score(label);
    best.candidate_rewards.push_back(r);
    if (j == 0 || r > best.reward) {
      best.label = std::move(label);
      best.reward = r;
      best.chosen = j;
    }
  }
  return best;
}

// One forward of a whole unlabeled batch: pseudo labels, the features they
// were scored with, teacher confidences and rewards, all row-aligned.
struct CandidateBatch {
  Tensor labels;
  Tensor features;
  std::vector<double> confidences;
  std::vector<double> rewards;
};

// Batched form of multi_forward_screen: forward(j) produces candidate batch j
// and each row keeps its highest-reward candidate (earliest on ties).
template <typename Forward>
CandidateBatch multi_forward_screen_batch(Forward&& forward, std::size_t n_forwards) {
  if (n_forwards < 1) throw DomainError("multi_forward_screen: n_forwards must be >= 1");
  CandidateBatch best = forward(std::size_t{0});
  for (std::size_t j = 1; j < n_forwards; ++j) {
    const CandidateBatch next = forward(j);
    if (next.rewards.size() != best.rewards.size()) throw ShapeError("multi_forward_screen: batch size changed");
    for (std::size_t i = 0; i < best.rewards.size(); ++i) {
      if (next.rewards[i] > best.rewards[i]) {
        std::copy(next.labels.row(i).begin(), next.labels.row(i).end(), best.labels.row(i).begin());
        std::copy(next.features.row(i).begin(), next.features.row(i).end(), best.features.row(i).begin());
        best.confidences[i] = next.confidences[i];
        best.rewards[i] = next.rewards[i];
      }
    }
  }
  return best;
}

}  // namespace semireward
