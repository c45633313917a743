#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "semireward/label_codec.hpp"
#include "semireward/nn.hpp"
#include "semireward/ops.hpp"
#include "semireward/optim.hpp"

namespace semireward {

struct RewarderConfig {
  std::size_t feature_dim = 0;
  std::size_t label_dim = 0;
  std::size_t embed_dim = 128;
};

// Scores how well a label fits a feature vector:
//
//   r = sigmoid(mlp(cross_attention(emb_y(label), [emb_x(feature), emb_y(label)])))
//
// Single-head attention. The label embedding is the query; the memory holds
// two tokens, the feature embedding and the label embedding, shared key and
// value projections, 1/sqrt(D) scaling, an output projection and a residual
// connection back to the query. The MLP is D -> D -> 1 with a ReLU.
class Rewarder {
 public:
  Rewarder() = default;

  Rewarder(RewarderConfig config, Rng& rng) : config_(config) {
    if (config.feature_dim == 0 || config.label_dim == 0 || config.embed_dim == 0) {
      throw ConfigError("rewarder dimensions must be positive");
    }
    const std::size_t d = config.embed_dim;
    emb_x_ = add_linear(params_, "emb_x", config.feature_dim, d, rng);
    emb_y_ = add_linear(params_, "emb_y", config.label_dim, d, rng);
    query_ = add_linear(params_, "attn.query", d, d, rng);
    key_ = add_linear(params_, "attn.key", d, d, rng);
    value_ = add_linear(params_, "attn.value", d, d, rng);
    out_ = add_linear(params_, "attn.out", d, d, rng);
    hidden_ = add_linear(params_, "mlp.l0", d, d, rng);
    head_ = add_linear(params_, "mlp.l1", d, 1, rng);
  }

  const RewarderConfig& config() const noexcept { return config_; }
  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }

  static std::size_t expected_parameter_count(std::size_t feature_dim, std::size_t label_dim,
                                              std::size_t embed_dim) {
    const std::size_t d = embed_dim;
    return (feature_dim * d + d) + (label_dim * d + d) + 5 * (d * d + d) + (d + 1);
  }

  // features [B x feature_dim], labels [B x label_dim] -> rewards [B x 1].
  Var forward(std::span<const Var> bound, Var features, Var labels) const {
    check_inputs(features.value(), labels.value());
    const Var ex = linear(bound, emb_x_, features);
    const Var ey = linear(bound, emb_y_, labels);
    const Var q = linear(bound, query_, ey);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config_.embed_dim));
    const Var score_x = scale(row_sum(mul(q, linear(bound, key_, ex))), inv_sqrt_d);
    const Var score_y = scale(row_sum(mul(q, linear(bound, key_, ey))), inv_sqrt_d);
    const Var weights = softmax_rows(concat_cols(score_x, score_y));
    const Var context = add(mul_rows(linear(bound, value_, ex), slice_cols(weights, 0, 1)),
                            mul_rows(linear(bound, value_, ey), slice_cols(weights, 1, 1)));
    const Var attended = add(ey, linear(bound, out_, context));
    const Var hidden = relu(linear(bound, hidden_, attended));
    return sigmoid(linear(bound, head_, hidden));
  }

  // Frozen batch scoring; safe to call concurrently on a const Rewarder.
  std::vector<double> score(const Tensor& features, const Tensor& labels) const {
    ComputeTape tape;
    const auto bound = bind_frozen(tape, params_);
    const Var r = forward(bound, tape.constant_ref(features), tape.constant_ref(labels));
    return r.value().values();
  }

  double score(std::span<const double> feature, std::span<const double> label) const {
    const Tensor f({1, feature.size()}, std::vector<double>(feature.begin(), feature.end()));
    const Tensor y({1, label.size()}, std::vector<double>(label.begin(), label.end()));
    return score(f, y)[0];
  }

 private:
  void check_inputs(const Tensor& features, const Tensor& labels) const {
    if (features.rank() != 2 || features.cols() != config_.feature_dim) {
      throw ShapeError("rewarder: features must be [B x " + std::to_string(config_.feature_dim) + "], got " +
                       to_string(features.shape()));
    }
    if (labels.rank() != 2 || labels.cols() != config_.label_dim || labels.rows() != features.rows()) {
      throw ShapeError("rewarder: labels must be [B x " + std::to_string(config_.label_dim) + "], got " +
                       to_string(labels.shape()));
    }
  }

  RewarderConfig config_;
  ParameterSet params_;
  std::size_t emb_x_ = 0, emb_y_ = 0, query_ = 0, key_ = 0, value_ = 0, out_ = 0, hidden_ = 0, head_ = 0;
};

struct GeneratorConfig {
  std::size_t feature_dim = 0;
  std::size_t label_dim = 0;
  std::vector<std::size_t> hidden = {256, 128, 64};
  // Training fake labels are softmax(bound * tanh(z / bound) + gumbel_scale * g),
  // g ~ Gumbel(0, 1). 0 disables either part.
  double gumbel_scale = 2.0;
  double logit_bound = 1.0;
};

// Fake-label generator: FC/ReLU MLP feature_dim -> 256 -> 128 -> 64 -> C.
// fake_labels() puts the (clipped, optionally perturbed) output on the simplex
// with a row softmax.
class Generator {
 public:
  Generator() = default;

  Generator(GeneratorConfig config, Rng& rng) : config_(config) {
    if (config.feature_dim == 0 || config.label_dim == 0) {
      throw ConfigError("generator dimensions must be positive");
    }
    std::vector<std::size_t> widths{config.feature_dim};
    widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
    widths.push_back(config.label_dim);
    mlp_ = Mlp::create(params_, "mlp", std::move(widths), rng);
  }

  const GeneratorConfig& config() const noexcept { return config_; }
  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }

  static std::size_t expected_parameter_count(std::size_t feature_dim, std::size_t label_dim,
                                              const std::vector<std::size_t>& hidden) {
    std::size_t n = 0, in = feature_dim;
    for (std::size_t h : hidden) {
      n += in * h + h;
      in = h;
    }
    return n + in * label_dim + label_dim;
  }

  Var forward(std::span<const Var> bound, Var features) const {
    if (features.value().rank() != 2 || features.value().cols() != config_.feature_dim) {
      throw ShapeError("generator: features must be [B x " + std::to_string(config_.feature_dim) + "], got " +
                       to_string(features.value().shape()));
    }
    return mlp_.forward(bound, features).output;
  }

  // softmax(logits + perturbation); pass an empty perturbation for the plain
  // softmax.
  Var fake_labels(std::span<const Var> bound, Var features, const Tensor& perturbation = Tensor()) const {
    Var logits = forward(bound, features);
    if (config_.logit_bound > 0.0) {
      logits = scale(tanh(scale(logits, 1.0 / config_.logit_bound)), config_.logit_bound);
    }
    if (perturbation.rank() != 0) logits = add(logits, features.tape()->constant_ref(perturbation));
    return softmax_rows(logits);
  }

  Tensor fake_labels(const Tensor& features, const Tensor& perturbation = Tensor()) const {
    ComputeTape tape;
    const auto bound = bind_frozen(tape, params_);
    return fake_labels(bound, tape.constant_ref(features), perturbation).value();
  }

  // Gumbel(0, gumbel_scale) noise for a batch of `rows`; empty when disabled.
  Tensor draw_perturbation(std::size_t rows, Rng& rng) const {
    if (config_.gumbel_scale == 0.0) return Tensor();
    Tensor g({rows, config_.label_dim});
    for (double& v : g.values()) {
      double u = rng.uniform();
      while (u <= 0.0) u = rng.uniform();
      v = -config_.gumbel_scale * std::log(-std::log(u));
    }
    return g;
  }

 private:
  GeneratorConfig config_;
  ParameterSet params_;
  Mlp mlp_;
};

// ---------------------------------------------------------------------------
// Alternating rewarder / generator training

enum class RewarderLossKind { mse, bce };

inline RewarderLossKind parse_rewarder_loss(const std::string& name) {
  if (name == "mse") return RewarderLossKind::mse;
  if (name == "bce") return RewarderLossKind::bce;
  throw ConfigError("unknown rewarder loss '" + name + "'");
}

inline std::string to_string(RewarderLossKind k) { return k == RewarderLossKind::mse ? "mse" : "bce"; }

struct RewarderLossConfig {
  RewarderLossKind loss_kind = RewarderLossKind::mse;
  double learning_rate = 5e-4;
  SimilarityMetric similarity = SimilarityMetric::scaled_cosine;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("rewarder learning_rate must be > 0");
  }
};

namespace detail {

inline void check_reward_batch(const Tensor& features, const Tensor& truths) {
  if (features.rank() != 2 || features.rows() == 0) throw DomainError("reward batch is empty");
  if (truths.rank() != 2 || truths.rows() != features.rows()) {
    throw ShapeError("reward batch: truth rows do not match feature rows");
  }
}

}  // namespace detail

// Similarity targets S(truth_i, fake_i) for each row.
inline Tensor similarity_targets(const Tensor& truths, const Tensor& fakes, SimilarityMetric metric) {
  if (truths.shape() != fakes.shape()) throw ShapeError("similarity_targets: shape mismatch");
  Tensor out({truths.rows(), 1});
  for (std::size_t r = 0; r < truths.rows(); ++r) out[r] = label_similarity(truths.row(r), fakes.row(r), metric);
  return out;
}

// L_R = mean_i loss(R(x_i, G(x_i)), S(y_i, G(x_i))) with G frozen. Only the
// rewarder's parameters are watched, so backward() leaves G untouched.
// `features` and `truths` must outlive `tape`.
inline Var rewarder_loss(ComputeTape& tape, Rewarder& rewarder, const Generator& generator,
                         const Tensor& features, const Tensor& truths, const RewarderLossConfig& cfg,
                         const Tensor& perturbation = Tensor()) {
  detail::check_reward_batch(features, truths);
  const Tensor fakes = generator.fake_labels(features, perturbation);
  const Tensor targets = similarity_targets(truths, fakes, cfg.similarity);
  const auto bound = bind_trainable(tape, rewarder.params());
  const Var reward = rewarder.forward(bound, tape.constant_ref(features), tape.constant(fakes));
  const Var target = tape.constant(targets);
  return cfg.loss_kind == RewarderLossKind::mse ? mse_loss(reward, target) : bce_loss(reward, target);
}

// L_G = mean_i (R(x_i, G(x_i)) - 1)^2 with R frozen.
inline Var generator_loss(ComputeTape& tape, const Rewarder& rewarder, Generator& generator,
                          const Tensor& features, const Tensor& perturbation = Tensor()) {
  if (features.rank() != 2 || features.rows() == 0) throw DomainError("generator batch is empty");
  const auto g_bound = bind_trainable(tape, generator.params());
  const auto r_bound = bind_frozen(tape, rewarder.params());
  const Var feats = tape.constant_ref(features);
  const Var reward = rewarder.forward(r_bound, feats, generator.fake_labels(g_bound, feats, perturbation));
  return mse_loss(reward, tape.constant(Tensor({features.rows(), 1}, 1.0)));
}

struct AuxLosses {
  double rewarder = 0.0;
  double generator = 0.0;
  double total() const { return rewarder + generator; }
};

// One training iteration of the rewarder and generator on a batch. Both losses
// are evaluated against the pre-update parameters and share one draw of the
// fake-label perturbation, then each network takes one step of its own
// optimizer.
inline AuxLosses alternating_update(Rewarder& rewarder, Generator& generator, const Tensor& features,
                                    const Tensor& truths, AdamState& rewarder_opt, AdamState& generator_opt,
                                    const RewarderLossConfig& cfg, Rng& rng) {
  rewarder.params().zero_grad();
  generator.params().zero_grad();
  const Tensor perturbation = generator.draw_perturbation(features.rows(), rng);
  AuxLosses losses;
  {
    ComputeTape tape;
    const Var l = rewarder_loss(tape, rewarder, generator, features, truths, cfg, perturbation);
    losses.rewarder = l.value().item();
    tape.backward(l);
  }
  {
    ComputeTape tape;
    const Var l = generator_loss(tape, rewarder, generator, features, perturbation);
    losses.generator = l.value().item();
    tape.backward(l);
  }
  adam_step(rewarder.params(), rewarder_opt);
  adam_step(generator.params(), generator_opt);
  return losses;
}

}  // namespace semireward
