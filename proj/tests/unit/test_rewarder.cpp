#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "semireward/rewarder.hpp"
#include "support/gradcheck.hpp"

using namespace semireward;
using semireward::testing::check_parameter_gradients;

namespace {

constexpr std::size_t kF = 5, kC = 3, kD = 8;

Tensor random_simplex_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double z = 0.0;
    for (double& v : t.row(r)) z += (v = std::exp(rng.normal()));
    for (double& v : t.row(r)) v /= z;
  }
  return t;
}

void zero_all(ParameterSet& params) {
  for (auto& p : params) std::fill(p.values().begin(), p.values().end(), 0.0);
}

bool all_zero_grad(const ParameterSet& params) {
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (g != 0.0) return false;
    }
  }
  return true;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Separable toy data: one noisy prototype per class.
struct ToyData {
  Tensor prototypes;

  ToyData(std::size_t classes, std::size_t dims, Rng& rng) : prototypes(Tensor::randn({classes, dims}, rng)) {}

  void sample(std::size_t n, Rng& rng, Tensor& features, std::vector<std::size_t>& classes) const {
    features = Tensor({n, prototypes.cols()});
    classes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      classes[i] = rng.index(prototypes.rows());
      for (std::size_t c = 0; c < prototypes.cols(); ++c) {
        features.at(i, c) = prototypes.at(classes[i], c) + 0.1 * rng.normal();
      }
    }
  }
};

}  // namespace

TEST(RewarderForward, OutputStrictlyInsideUnitInterval) {
  Rng rng(1);
  const Rewarder r({kF, kC, kD}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor f = Tensor::randn({4, kF}, rng, 3.0);
    const Tensor y = random_simplex_rows(4, kC, rng);
    for (double s : r.score(f, y)) {
      EXPECT_GT(s, 0.0);
      EXPECT_LT(s, 1.0);
    }
  }
}

TEST(RewarderForward, ZeroWeightsGiveOneHalf) {
  Rng rng(2);
  Rewarder r({kF, kC, kD}, rng);
  zero_all(r.params());
  EXPECT_EQ(r.score(Tensor::randn({3, kF}, rng), random_simplex_rows(3, kC, rng)), (std::vector<double>(3, 0.5)));
}

TEST(RewarderForward, RejectsWrongDimensions) {
  Rng rng(3);
  const Rewarder r({kF, kC, kD}, rng);
  EXPECT_THROW(r.score(Tensor({2, kF + 1}), Tensor({2, kC})), ShapeError);
  EXPECT_THROW(r.score(Tensor({2, kF}), Tensor({2, kC + 1})), ShapeError);
  EXPECT_THROW(r.score(Tensor({2, kF}), Tensor({3, kC})), ShapeError);
}

TEST(RewarderForward, DeterministicBitwise) {
  Rng rng(4);
  const Rewarder r({kF, kC, kD}, rng);
  const Tensor f = Tensor::randn({5, kF}, rng);
  const Tensor y = random_simplex_rows(5, kC, rng);
  EXPECT_EQ(r.score(f, y), r.score(f, y));
}

TEST(RewarderGradient, MatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Rewarder r({kF, kC, kD}, rng);
    const Tensor f = Tensor::randn({3, kF}, rng);
    const Tensor y = random_simplex_rows(3, kC, rng);
    const Tensor w = Tensor::randn({3, 1}, rng);
    const auto result = check_parameter_gradients(r.params(), [&](ComputeTape& tape, std::span<const Var> bound) {
      return sum(mul(r.forward(bound, tape.constant_ref(f), tape.constant_ref(y)), tape.constant_ref(w)));
    });
    EXPECT_LT(result.max_relative_error, 1e-4) << result.worst;
  }
}

TEST(GeneratorForward, ZeroWeightsGiveUniformLabels) {
  Rng rng(6);
  Generator g({kF, kC}, rng);
  zero_all(g.params());
  const Tensor fake = g.fake_labels(Tensor::randn({2, kF}, rng));
  for (double v : fake.values()) EXPECT_NEAR(v, 1.0 / kC, 1e-15);
}

TEST(GeneratorForward, OutputLengthAndSimplex) {
  Rng rng(7);
  for (std::size_t c : {2u, 5u, 11u}) {
    const Generator g({kF, c}, rng);
    const Tensor x = Tensor::randn({4, kF}, rng);
    const Tensor fake = g.fake_labels(x, g.draw_perturbation(4, rng));
    ASSERT_EQ(fake.cols(), c);
    for (std::size_t r = 0; r < fake.rows(); ++r) {
      EXPECT_NEAR(std::accumulate(fake.row(r).begin(), fake.row(r).end(), 0.0), 1.0, 1e-12);
    }
  }
}

TEST(GeneratorForward, ClipBoundsTheLogits) {
  Rng rng(8);
  GeneratorConfig cfg{kF, kC};
  cfg.gumbel_scale = 0.0;
  cfg.logit_bound = 1.0;
  const Generator g(cfg, rng);
  const Tensor fake = g.fake_labels(Tensor::randn({16, kF}, rng, 50.0));
  // With logits in (-1, 1) no probability can exceed e / (e + (C-1)/e).
  const double cap = std::exp(1.0) / (std::exp(1.0) + (kC - 1) * std::exp(-1.0));
  for (double v : fake.values()) EXPECT_LE(v, cap);
}

TEST(GeneratorGradient, MatchesFiniteDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    GeneratorConfig cfg{kF, kC, {6, 5, 4}};
    cfg.logit_bound = trial % 2 == 0 ? 1.0 : 0.0;
    Generator g(cfg, rng);
    const Tensor x = Tensor::randn({3, kF}, rng);
    const Tensor noise = g.draw_perturbation(3, rng);
    const Tensor w = Tensor::randn({3, kC}, rng);
    const auto result = check_parameter_gradients(g.params(), [&](ComputeTape& tape, std::span<const Var> bound) {
      return sum(mul(g.fake_labels(bound, tape.constant_ref(x), noise), tape.constant_ref(w)));
    });
    EXPECT_LT(result.max_relative_error, 1e-4) << result.worst;
  }
}

TEST(RewarderLoss, FrozenGeneratorGetsNoGradient) {
  Rng rng(10);
  Rewarder r({kF, kC, kD}, rng);
  Generator g({kF, kC}, rng);
  const Tensor f = Tensor::randn({4, kF}, rng);
  const Tensor truth = one_hot_rows(std::vector<std::size_t>{0, 1, 2, 0}, kC);
  ComputeTape tape;
  tape.backward(rewarder_loss(tape, r, g, f, truth, RewarderLossConfig{}, g.draw_perturbation(4, rng)));
  EXPECT_TRUE(all_zero_grad(g.params()));
  EXPECT_FALSE(all_zero_grad(r.params()));
}

TEST(GeneratorLoss, FrozenRewarderGetsNoGradient) {
  Rng rng(11);
  Rewarder r({kF, kC, kD}, rng);
  Generator g({kF, kC}, rng);
  ComputeTape tape;
  tape.backward(generator_loss(tape, r, g, Tensor::randn({4, kF}, rng)));
  EXPECT_TRUE(all_zero_grad(r.params()));
  EXPECT_FALSE(all_zero_grad(g.params()));
}

TEST(RewarderLoss, HandComputedTwoItemBatch) {
  Rng rng(12);
  Rewarder r({kF, kC, kD}, rng);
  GeneratorConfig gcfg{kF, kC};
  gcfg.gumbel_scale = 0.0;
  Generator g(gcfg, rng);
  const Tensor f = Tensor::randn({2, kF}, rng);
  const Tensor truth = one_hot_rows(std::vector<std::size_t>{2, 0}, kC);

  const Tensor fake = g.fake_labels(f);
  const auto reward = r.score(f, fake);
  double expected = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    double dot = 0.0, nt = 0.0, nf = 0.0;
    for (std::size_t k = 0; k < kC; ++k) {
      dot += truth.at(i, k) * fake.at(i, k);
      nt += truth.at(i, k) * truth.at(i, k);
      nf += fake.at(i, k) * fake.at(i, k);
    }
    const double target = dot / (2.0 * std::sqrt(nt) * std::sqrt(nf)) + 0.5;
    expected += (reward[i] - target) * (reward[i] - target) / 2.0;
  }
  ComputeTape tape;
  EXPECT_NEAR(rewarder_loss(tape, r, g, f, truth, RewarderLossConfig{}).value().item(), expected, 1e-14);
}

TEST(RewarderLoss, ZeroWhenRewarderMatchesTargets) {
  // A rewarder whose head is zeroed outputs 0.5; targets of 0.5 come from fake
  // labels orthogonal to the truth.
  Rng rng(13);
  Rewarder r({kF, 2, kD}, rng);
  auto& params = r.params();
  for (std::size_t i = params.index_of("mlp.l1.weight"); i < params.size(); ++i) {
    std::fill(params[i].values().begin(), params[i].values().end(), 0.0);
  }
  GeneratorConfig gcfg{kF, 2};
  gcfg.gumbel_scale = 0.0;
  gcfg.logit_bound = 0.0;
  Generator g(gcfg, rng);
  auto& gp = g.params();
  std::fill(gp[gp.size() - 2].values().begin(), gp[gp.size() - 2].values().end(), 0.0);
  gp[gp.size() - 1].values() = {100.0, -100.0};  // fake = (1, 0)
  const Tensor truth = one_hot_rows(std::vector<std::size_t>{1, 1}, 2);
  ComputeTape tape;
  EXPECT_NEAR(rewarder_loss(tape, r, g, Tensor::randn({2, kF}, rng), truth, RewarderLossConfig{}).value().item(), 0.0,
              1e-30);
}

TEST(RewarderLoss, EmptyBatchIsDomainError) {
  Rng rng(14);
  Rewarder r({kF, kC, kD}, rng);
  Generator g({kF, kC}, rng);
  ComputeTape tape;
  EXPECT_THROW(rewarder_loss(tape, r, g, Tensor({0, kF}), Tensor({0, kC}), RewarderLossConfig{}), DomainError);
  EXPECT_THROW(generator_loss(tape, r, g, Tensor({0, kF})), DomainError);
}

TEST(RewarderLoss, BceVariantIsFinite) {
  Rng rng(15);
  Rewarder r({kF, kC, kD}, rng);
  Generator g({kF, kC}, rng);
  RewarderLossConfig cfg;
  cfg.loss_kind = RewarderLossKind::bce;
  ComputeTape tape;
  const Var l = rewarder_loss(tape, r, g, Tensor::randn({3, kF}, rng), one_hot_rows(std::vector<std::size_t>{0, 1, 2}, kC),
                              cfg);
  EXPECT_TRUE(std::isfinite(l.value().item()));
  EXPECT_GT(l.value().item(), 0.0);
  RewarderLossConfig frozen;
  frozen.learning_rate = 0.0;
  EXPECT_THROW(frozen.validate(), ConfigError);
}

TEST(AlternatingUpdate, UpdatesBothFromPreUpdateState) {
  Rng rng(16);
  Rewarder r({kF, kC, kD}, rng);
  Generator g({kF, kC}, rng);
  AdamState ro(r.params(), AdamConfig{}), go(g.params(), AdamConfig{});
  const Tensor f = Tensor::randn({4, kF}, rng);
  const Tensor truth = one_hot_rows(std::vector<std::size_t>{0, 1, 2, 1}, kC);

  // Reference: both losses against untouched copies, then independent steps.
  Rewarder r_ref = r;
  Generator g_ref = g;
  Rng noise_rng(99);
  const Tensor noise = g.draw_perturbation(4, noise_rng);
  {
    ComputeTape t;
    t.backward(rewarder_loss(t, r_ref, g, f, truth, RewarderLossConfig{}, noise));
  }
  {
    ComputeTape t;
    t.backward(generator_loss(t, r, g_ref, f, noise));
  }
  AdamState ro_ref(r_ref.params(), AdamConfig{}), go_ref(g_ref.params(), AdamConfig{});
  adam_step(r_ref.params(), ro_ref);
  adam_step(g_ref.params(), go_ref);

  Rng update_rng(99);
  alternating_update(r, g, f, truth, ro, go, RewarderLossConfig{}, update_rng);
  for (std::size_t i = 0; i < r.params().size(); ++i) EXPECT_EQ(r.params()[i], r_ref.params()[i]);
  for (std::size_t i = 0; i < g.params().size(); ++i) EXPECT_EQ(g.params()[i], g_ref.params()[i]);
}

TEST(AlternatingUpdate, ZeroLearningRateLeavesParameters) {
  Rng rng(17);
  Rewarder r({kF, kC, kD}, rng);
  Generator g({kF, kC}, rng);
  const Rewarder r0 = r;
  const Generator g0 = g;
  AdamState ro(r.params(), AdamConfig{0.0}), go(g.params(), AdamConfig{0.0});
  for (int i = 0; i < 3; ++i) {
    alternating_update(r, g, Tensor::randn({4, kF}, rng), one_hot_rows(std::vector<std::size_t>{0, 1, 2, 1}, kC), ro,
                       go, RewarderLossConfig{}, rng);
  }
  for (std::size_t i = 0; i < r.params().size(); ++i) EXPECT_EQ(r.params()[i], r0.params()[i]);
  for (std::size_t i = 0; i < g.params().size(); ++i) EXPECT_EQ(g.params()[i], g0.params()[i]);
}

TEST(AlternatingUpdate, ParametersChangeAfterOneStep) {
  Rng rng(18);
  Rewarder r({kF, kC, kD}, rng);
  Generator g({kF, kC}, rng);
  const Rewarder r0 = r;
  const Generator g0 = g;
  AdamState ro(r.params(), AdamConfig{}), go(g.params(), AdamConfig{});
  alternating_update(r, g, Tensor::randn({4, kF}, rng), one_hot_rows(std::vector<std::size_t>{0, 1, 2, 1}, kC), ro, go,
                     RewarderLossConfig{}, rng);
  bool r_changed = false, g_changed = false;
  for (std::size_t i = 0; i < r.params().size(); ++i) r_changed |= !(r.params()[i] == r0.params()[i]);
  for (std::size_t i = 0; i < g.params().size(); ++i) g_changed |= !(g.params()[i] == g0.params()[i]);
  EXPECT_TRUE(r_changed);
  EXPECT_TRUE(g_changed);
}

TEST(AlternatingUpdate, GeneratorLossTrendsDownOnFixedBatch) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    const ToyData toy(kC, 8, rng);
    Tensor f;
    std::vector<std::size_t> cls;
    toy.sample(16, rng, f, cls);
    const Tensor truth = one_hot_rows(cls, kC);
    Rewarder r({8, kC, 16}, rng);
    Generator g({8, kC}, rng);
    AdamState ro(r.params(), AdamConfig{}), go(g.params(), AdamConfig{});
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
      const auto l = alternating_update(r, g, f, truth, ro, go, RewarderLossConfig{}, rng);
      if (step < 20) first += l.generator;
      if (step >= 180) last += l.generator;
    }
    EXPECT_LT(last, first) << "seed " << seed;
  }
}

TEST(AlternatingUpdate, LearnsTrueSimilarityOnSeparableToyData) {
  double mean_r = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    const ToyData toy(kC, 8, rng);
    Rewarder r({8, kC, 32}, rng);
    Generator g({8, kC}, rng);
    AdamState ro(r.params(), AdamConfig{}), go(g.params(), AdamConfig{});
    for (int step = 0; step < 500; ++step) {
      Tensor f;
      std::vector<std::size_t> cls;
      toy.sample(16, rng, f, cls);
      alternating_update(r, g, f, one_hot_rows(cls, kC), ro, go, RewarderLossConfig{}, rng);
    }
    Tensor f;
    std::vector<std::size_t> cls;
    toy.sample(500, rng, f, cls);
    const Tensor candidates = random_simplex_rows(500, kC, rng);
    const Tensor truth = one_hot_rows(cls, kC);
    const auto scores = r.score(f, candidates);
    const Tensor targets = similarity_targets(truth, candidates, SimilarityMetric::scaled_cosine);
    mean_r += pearson(scores, targets.values()) / 5.0;
  }
  EXPECT_GT(mean_r, 0.8);
}

TEST(ParameterBudget, CountsMatchClosedForm) {
  Rng rng(19);
  const Rewarder r({384, 100, 128}, rng);
  const Generator g({384, 100}, rng);
  const std::size_t d = 128;
  const std::size_t rewarder_sum = (384 * d + d) + (100 * d + d) + 4 * (d * d + d) + (d * d + d) + (d + 1);
  const std::size_t generator_sum = (384 * 256 + 256) + (256 * 128 + 128) + (128 * 64 + 64) + (64 * 100 + 100);
  EXPECT_EQ(r.params().count(), rewarder_sum);
  EXPECT_EQ(Rewarder::expected_parameter_count(384, 100, 128), rewarder_sum);
  EXPECT_EQ(g.params().count(), generator_sum);
  EXPECT_EQ(Generator::expected_parameter_count(384, 100, {256, 128, 64}), generator_sum);
}
