#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "semireward/semireward.hpp"

using namespace semireward;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("semireward_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

DatasetSpec small_blobs(std::uint64_t seed) {
  DatasetSpec spec;
  spec.num_classes = 3;
  spec.dims = 6;
  spec.spread = 0.2;
  spec.n_labeled_per_class = 2;
  spec.n_unlabeled = 60;
  spec.n_test = 60;
  spec.seed = seed;
  return spec;
}

TrainConfig small_config(SelectionKind kind) {
  TrainConfig c;
  c.total_iters = 30;
  c.stage2_start_fraction = 0.2;
  c.labeled_batch = 4;
  c.unlabeled_batch = 8;
  c.rewarder_batch = 4;
  c.student_hidden = {12, 6};
  c.generator_hidden = {8};
  c.rewarder_embed_dim = 4;
  c.ema_momentum = 0.9;
  c.log_interval = 10;
  c.subsample_ratio = 0.5;
  c.selection.kind = kind;
  c.selection.decay_cap = 3;
  c.write_checkpoints = false;
  return c;
}

fs::path write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream(path, std::ios::binary) << text;
  return path;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset synthesis

TEST(Dataset, LabeledSplitIsExactlyBalanced) {
  DatasetSpec spec;
  spec.num_classes = 4;
  spec.n_labeled_per_class = 4;
  spec.n_unlabeled = 50;
  spec.n_test = 50;
  const Dataset ds = generate_dataset(spec);
  ASSERT_EQ(ds.labeled.size(), 16u);
  std::vector<int> per_class(4, 0);
  for (double t : ds.labeled.targets) ++per_class[static_cast<std::size_t>(t)];
  for (int c : per_class) EXPECT_EQ(c, 4);
  EXPECT_EQ(ds.unlabeled.size(), 50u);
  EXPECT_EQ(ds.test.size(), 50u);
  EXPECT_EQ(ds.input_dim(), 16u);
}

TEST(Dataset, SplitsAreDisjoint) {
  for (auto kind : {DatasetKind::gaussian_blobs, DatasetKind::concentric_rings, DatasetKind::rotation_regression}) {
    DatasetSpec spec = small_blobs(3);
    spec.kind = kind;
    spec.n_labeled = 5;
    const Dataset ds = generate_dataset(spec);
    std::set<std::size_t> ids;
    for (auto id : ds.labeled.ids) ids.insert(id);
    for (auto id : ds.unlabeled.ids) ids.insert(id);
    for (auto id : ds.test.ids) ids.insert(id);
    EXPECT_EQ(ids.size(), ds.labeled.size() + ds.unlabeled.size() + ds.test.size()) << to_string(kind);
    EXPECT_EQ(ds.unlabeled_truth.ids, ds.unlabeled.ids);
    EXPECT_EQ(ds.unlabeled_truth.targets.size(), ds.unlabeled.size());
  }
}

TEST(Dataset, SameSeedGivesIdenticalCsvBytes) {
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b"), c = fresh_dir("det_c");
  write_dataset_csv(generate_dataset(small_blobs(7)), a);
  write_dataset_csv(generate_dataset(small_blobs(7)), b);
  write_dataset_csv(generate_dataset(small_blobs(8)), c);
  for (const char* name : {"labeled.csv", "unlabeled.csv", "unlabeled_truth.csv", "test.csv"}) {
    const std::string bytes = slurp(a / name);
    EXPECT_FALSE(bytes.empty());
    EXPECT_EQ(bytes, slurp(b / name)) << name;
    EXPECT_NE(bytes, slurp(c / name)) << name;
  }
}

TEST(Dataset, CsvRoundTripKeepsSplits) {
  const auto dir = fresh_dir("roundtrip");
  const Dataset ds = generate_dataset(small_blobs(9));
  write_dataset_csv(ds, dir);
  const Dataset back = read_dataset_csv(dir, ds.codec);
  EXPECT_EQ(back.labeled.ids, ds.labeled.ids);
  EXPECT_EQ(back.labeled.targets, ds.labeled.targets);
  EXPECT_EQ(back.unlabeled.ids, ds.unlabeled.ids);
  EXPECT_EQ(back.unlabeled_truth.targets, ds.unlabeled_truth.targets);
  ASSERT_EQ(back.test.inputs.size(), ds.test.inputs.size());
  for (std::size_t i = 0; i < ds.test.inputs.size(); ++i) {
    EXPECT_NEAR(back.test.inputs.values()[i], ds.test.inputs.values()[i], 1e-5 * (1 + std::abs(ds.test.inputs.values()[i])));
  }
}

TEST(Dataset, CsvHeaderIsPresent) {
  const auto dir = fresh_dir("header");
  write_dataset_csv(generate_dataset(small_blobs(1)), dir);
  const std::string text = slurp(dir / "labeled.csv");
  EXPECT_EQ(text.substr(0, 3), "id,");
}

TEST(Dataset, OversizedOrEmptyCountsAreConfigErrors) {
  DatasetSpec spec = small_blobs(1);
  spec.n_unlabeled = DatasetSpec::kMaxPopulation;
  EXPECT_THROW(generate_dataset(spec), ConfigError);
  spec = small_blobs(1);
  spec.n_test = 0;
  EXPECT_THROW(generate_dataset(spec), ConfigError);
  spec = small_blobs(1);
  spec.n_labeled_per_class = 0;
  EXPECT_THROW(generate_dataset(spec), ConfigError);
}

TEST(Dataset, NearestCentroidSeparatesTightBlobs) {
  // Centroids sit at unit pairwise distance; spread 0.1 of that is easy.
  DatasetSpec spec;
  spec.num_classes = 4;
  spec.dims = 16;
  spec.spread = 0.1;
  spec.n_labeled_per_class = 200;
  spec.n_unlabeled = 10;
  spec.n_test = 2000;
  spec.seed = 5;
  const Dataset ds = generate_dataset(spec);
  std::vector<std::vector<double>> centroid(4, std::vector<double>(16, 0.0));
  for (std::size_t i = 0; i < ds.labeled.size(); ++i) {
    auto& c = centroid[static_cast<std::size_t>(ds.labeled.targets[i])];
    for (std::size_t d = 0; d < 16; ++d) c[d] += ds.labeled.inputs.at(i, d) / 200.0;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    double best = INFINITY;
    std::size_t best_class = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < 16; ++d) d2 += std::pow(ds.test.inputs.at(i, d) - centroid[c][d], 2);
      if (d2 < best) {
        best = d2;
        best_class = c;
      }
    }
    correct += best_class == static_cast<std::size_t>(ds.test.targets[i]) ? 1 : 0;
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(ds.test.size()), 0.99);
}

TEST(Dataset, RegressionTargetsStayInRange) {
  DatasetSpec spec;
  spec.kind = DatasetKind::rotation_regression;
  spec.num_classes = 10;
  spec.n_labeled = 12;
  spec.n_unlabeled = 100;
  spec.n_test = 100;
  const Dataset ds = generate_dataset(spec);
  EXPECT_EQ(ds.labeled.size(), 12u);
  for (double t : ds.test.targets) {
    EXPECT_GE(t, spec.range_lo);
    EXPECT_LE(t, spec.range_hi);
  }
}

// ---------------------------------------------------------------------------
// Evaluation

TEST(Evaluate, HandComputedRegressionCase) {
  const auto codec = LabelCodec::regression(4, 0.0, 10.0);
  const std::vector<double> pred{1.0, 2.0, 3.0}, truth{2.0, 2.0, 5.0};
  const EvalResult r = evaluate_predictions(pred, truth, codec);
  EXPECT_DOUBLE_EQ(r.mae, 1.0);
  EXPECT_DOUBLE_EQ(r.rmse, std::sqrt(5.0 / 3.0));
  EXPECT_TRUE(std::isnan(r.error_pct));
  EXPECT_EQ(r.primary(), r.mae);
}

TEST(Evaluate, ClassificationErrorIsPercentWrong) {
  const auto codec = LabelCodec::classification(3);
  const std::vector<double> pred{0, 1, 2, 2}, truth{0, 1, 2, 0};
  const EvalResult r = evaluate_predictions(pred, truth, codec);
  EXPECT_DOUBLE_EQ(r.error_pct, 25.0);
  EXPECT_TRUE(std::isnan(r.mae));
}

TEST(Evaluate, PerfectPredictionsScoreZero) {
  const std::vector<double> v{0.5, -3.0, 7.25};
  EXPECT_EQ(evaluate_predictions(v, v, LabelCodec::regression(4, -10, 10)).mae, 0.0);
  EXPECT_EQ(evaluate_predictions(v, v, LabelCodec::regression(4, -10, 10)).rmse, 0.0);
  const std::vector<double> c{0, 1, 1, 2};
  EXPECT_EQ(evaluate_predictions(c, c, LabelCodec::classification(3)).error_pct, 0.0);
}

TEST(Evaluate, EmptySplitIsDomainError) {
  const std::vector<double> none;
  EXPECT_THROW(evaluate_predictions(none, none, LabelCodec::classification(2)), DomainError);
  Rng rng(1);
  StudentModel m(3, {4}, LabelCodec::classification(2), rng);
  EXPECT_THROW(evaluate(m, LabeledSplit{}), DomainError);
}

TEST(Evaluate, InvariantToPermutation) {
  std::mt19937 gen(3);
  std::normal_distribution<double> noise(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> pred(37), truth(37);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      truth[i] = noise(gen);
      pred[i] = truth[i] + noise(gen);
    }
    std::vector<std::size_t> order(pred.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), gen);
    std::vector<double> p2, t2;
    for (auto i : order) {
      p2.push_back(pred[i]);
      t2.push_back(truth[i]);
    }
    const auto codec = LabelCodec::regression(4, -10, 10);
    const EvalResult a = evaluate_predictions(pred, truth, codec), b = evaluate_predictions(p2, t2, codec);
    EXPECT_NEAR(a.mae, b.mae, 1e-12);
    EXPECT_NEAR(a.rmse, b.rmse, 1e-12);
  }
}

TEST(Evaluate, ModelEvaluationIsPermutationInvariant) {
  const Dataset ds = generate_dataset(small_blobs(4));
  Rng rng(2);
  const StudentModel m(ds.input_dim(), {8}, ds.codec, rng);
  std::vector<std::size_t> order(ds.test.size());
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  LabeledSplit shuffled;
  shuffled.inputs = ds.test.inputs.gather_rows(order);
  for (auto i : order) {
    shuffled.targets.push_back(ds.test.targets[i]);
    shuffled.ids.push_back(ds.test.ids[i]);
  }
  EXPECT_DOUBLE_EQ(evaluate(m, ds.test).error_pct, evaluate(m, shuffled).error_pct);
}

TEST(Evaluate, RmseNeverBelowMae) {
  std::mt19937 gen(4);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  const auto codec = LabelCodec::regression(4, -10, 10);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> pred(1 + trial % 9), truth(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = trial % 2 ? 0.0 : u(gen);  // odd trials: constant predictor
      truth[i] = u(gen);
    }
    const EvalResult r = evaluate_predictions(pred, truth, codec);
    EXPECT_GE(r.rmse, r.mae - 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Pseudo-label quality

TEST(Quality, MatchesBruteForceRecount) {
  const auto codec = LabelCodec::classification(4);
  std::mt19937 gen(6);
  Tensor labels({20, 4}, 0.0);
  std::vector<double> truths(20);
  std::size_t expected = 0;
  double target_sum = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const std::size_t guess = gen() % 4, truth = gen() % 4;
    labels.at(i, guess) = 1.0;
    truths[i] = static_cast<double>(truth);
    expected += guess == truth ? 1 : 0;
    target_sum += guess == truth ? 1.0 : 0.5;  // scaled cosine of orthogonal one-hots
  }
  const QualityResult q = pseudo_label_quality(labels, truths, codec);
  EXPECT_EQ(q.count, 20u);
  EXPECT_DOUBLE_EQ(q.accuracy_pct, 100.0 * static_cast<double>(expected) / 20.0);
  EXPECT_NEAR(q.mean_reward_target, target_sum / 20.0, 1e-12);
}

TEST(Quality, AllCorrectIsHundredAndEmptyIsAbsent) {
  const auto codec = LabelCodec::classification(3);
  Tensor labels({3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) labels.at(i, i) = 1.0;
  const std::vector<double> truths{0, 1, 2};
  const QualityResult q = pseudo_label_quality(labels, truths, codec);
  EXPECT_EQ(q.accuracy_pct, 100.0);
  EXPECT_EQ(q.mean_reward_target, 1.0);
  const QualityResult none = pseudo_label_quality(Tensor(), {}, codec);
  EXPECT_EQ(none.count, 0u);
  EXPECT_TRUE(std::isnan(none.accuracy_pct));
  EXPECT_TRUE(std::isnan(none.mean_reward_target));
}

TEST(Quality, RandomLabelsScoreNearChance) {
  const auto codec = LabelCodec::classification(5);
  std::mt19937 gen(7);
  const std::size_t n = 20000;
  Tensor labels({n, 5}, 0.0);
  std::vector<double> truths(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels.at(i, gen() % 5) = 1.0;
    truths[i] = static_cast<double>(gen() % 5);
  }
  EXPECT_NEAR(pseudo_label_quality(labels, truths, codec).accuracy_pct, 20.0, 1.5);
}

TEST(Quality, RegressionUsesRewardTargetOnly) {
  const auto codec = LabelCodec::regression(6, 0.0, 60.0);
  Tensor labels({1, 6}, 0.0);
  const LabelVector v = encode_label(25.0, codec);
  std::copy(v.values.begin(), v.values.end(), labels.row(0).begin());
  const std::vector<double> truths{25.0};
  const QualityResult q = pseudo_label_quality(labels, truths, codec);
  EXPECT_TRUE(std::isnan(q.accuracy_pct));
  EXPECT_NEAR(q.mean_reward_target, 1.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Calibration table

TEST(Calibration, CalibratedScorerTracksBinCenters) {
  std::mt19937 gen(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 10000;
  std::vector<double> scores(n), correct(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = u(gen);
    correct[i] = u(gen) < scores[i] ? 1.0 : 0.0;
  }
  const auto bins = calibration_export(scores, correct, 10);
  ASSERT_EQ(bins.size(), 10u);
  for (const auto& b : bins) {
    ASSERT_GT(b.count, 0u);
    EXPECT_NEAR(b.accuracy, 0.5 * (b.lo + b.hi), 0.05) << "bin [" << b.lo << ", " << b.hi << "]";
  }
}

TEST(Calibration, BinsPartitionUnitIntervalAndCountsSum) {
  std::mt19937 gen(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t n_bins : {2u, 3u, 7u, 10u, 64u}) {
    std::vector<double> scores(333), correct(333, 1.0);
    for (auto& s : scores) s = u(gen);
    scores[0] = 0.0;
    scores[1] = 1.0;
    const auto bins = calibration_export(scores, correct, n_bins);
    EXPECT_EQ(bins.front().lo, 0.0);
    EXPECT_EQ(bins.back().hi, 1.0);
    std::size_t total = 0;
    for (std::size_t b = 0; b < bins.size(); ++b) {
      if (b > 0) {
        EXPECT_EQ(bins[b].lo, bins[b - 1].hi);
      }
      EXPECT_LT(bins[b].lo, bins[b].hi);
      total += bins[b].count;
    }
    EXPECT_EQ(total, scores.size());
    EXPECT_GE(bins.back().count, 1u);  // the score of exactly 1
  }
}

TEST(Calibration, SingleBinOccupied) {
  const std::vector<double> scores{0.41, 0.42, 0.43}, correct{1, 0, 1};
  const auto bins = calibration_export(scores, correct, 5);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    if (b == 2) {
      EXPECT_EQ(bins[b].count, 3u);
      EXPECT_NEAR(bins[b].accuracy, 2.0 / 3.0, 1e-12);
      EXPECT_NEAR(bins[b].mean_score, 0.42, 1e-12);
    } else {
      EXPECT_EQ(bins[b].count, 0u);
      EXPECT_TRUE(std::isnan(bins[b].accuracy));
    }
  }
}

TEST(Calibration, RejectsBadInput) {
  const std::vector<double> one{0.5}, none;
  EXPECT_THROW(calibration_export(none, none, 10), DomainError);
  EXPECT_THROW(calibration_export(one, one, 1), DomainError);
  const std::vector<double> two{0.5, 0.5};
  EXPECT_THROW(calibration_export(one, two, 10), ShapeError);
  const std::vector<double> outside{1.5};
  EXPECT_THROW(calibration_export(outside, one, 10), DomainError);
}

TEST(Calibration, CsvHasHeaderAndOneRowPerBin) {
  const auto dir = fresh_dir("calcsv");
  fs::create_directories(dir);
  const std::vector<double> scores{0.1, 0.9}, correct{0, 1};
  write_calibration_csv(dir / "cal.csv", calibration_export(scores, correct, 4));
  std::ifstream in(dir / "cal.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_NE(lines[0].find("count"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Configuration files

TEST(Config, ParsesNestedExperiment) {
  const auto dir = fresh_dir("config");
  const auto path = write_text(dir / "exp.json", R"({
    "dataset": {"kind": "gaussian_blobs", "num_classes": 3, "dims": 8, "spread": 0.3, "seed": 4},
    "selection": {"kind": "confidence", "tau": 0.8},
    "total_iters": 200, "student_hidden": [16, 8], "feature_norm": "rms", "eval_model": "student"
  })");
  const ExperimentConfig e = load_experiment(path);
  EXPECT_EQ(e.dataset.num_classes, 3u);
  EXPECT_EQ(e.dataset.spread, 0.3);
  EXPECT_EQ(e.train.selection.kind, SelectionKind::confidence);
  EXPECT_EQ(e.train.selection.tau, 0.8);
  EXPECT_EQ(e.train.total_iters, 200u);
  EXPECT_EQ(e.train.student_hidden, (std::vector<std::size_t>{16, 8}));
  EXPECT_EQ(e.train.feature_norm, FeatureNorm::rms);
  EXPECT_EQ(e.train.eval_model, EvalModel::student);
}

TEST(Config, UnknownKeysAndBadValuesAreConfigErrors) {
  const auto dir = fresh_dir("config_bad");
  EXPECT_THROW(load_experiment(write_text(dir / "a.json", R"({"total_iter": 5})")), ConfigError);
  EXPECT_THROW(load_experiment(write_text(dir / "b.json", R"({"selection": {"kind": "magic"}})")), ConfigError);
  EXPECT_THROW(load_experiment(write_text(dir / "c.json", R"({"dataset": {"spreed": 1}})")), ConfigError);
  EXPECT_THROW(load_experiment(write_text(dir / "d.json", R"({"ema_momentum": 2})")), ConfigError);
  EXPECT_THROW(load_experiment(write_text(dir / "e.json", "{not json")), ConfigError);
  EXPECT_THROW(load_experiment(write_text(dir / "f.json", R"({"similarity": "js_divergence"})")), Error);
  EXPECT_THROW(load_experiment(dir / "missing.json"), IoError);
}

TEST(Config, DottedOverridesWin) {
  const auto dir = fresh_dir("config_override");
  const auto path = write_text(dir / "exp.json", R"({"selection": {"kind": "confidence"}, "total_iters": 100})");
  const ExperimentConfig e = load_experiment(
      path, {"selection.kind=reward_topk", "selection.k=3", "total_iters=7", "dataset.spread=0.5",
             "student_hidden=[5,4]", "feature_norm=rms"});
  EXPECT_EQ(e.train.selection.kind, SelectionKind::reward_topk);
  EXPECT_EQ(e.train.selection.k, 3u);
  EXPECT_EQ(e.train.total_iters, 7u);
  EXPECT_EQ(e.dataset.spread, 0.5);
  EXPECT_EQ(e.train.student_hidden, (std::vector<std::size_t>{5, 4}));
  EXPECT_THROW(load_experiment(path, {"total_iters"}), ConfigError);
  EXPECT_THROW(load_experiment(path, {"total_iters.x=3"}), ConfigError);
  EXPECT_THROW(load_experiment(path, {"selection..kind=confidence"}), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig e;
  e.dataset = small_blobs(3);
  e.train = small_config(SelectionKind::reward_fixed);
  e.train.selection.tau = 0.6;
  e.train.stage2_truth = Stage2Truth::labeled_only;
  const ExperimentConfig back = experiment_from_json(to_json(e));
  EXPECT_EQ(to_json(back), to_json(e));
}

// ---------------------------------------------------------------------------
// Checkpoint restore and rewarder calibration

TEST(Restore, RebuildsTeacherAndRewarderExactly) {
  const Dataset data = generate_dataset(small_blobs(5));
  TrainConfig cfg = small_config(SelectionKind::reward_average);
  cfg.feature_norm = FeatureNorm::rms;
  RunState s = init_run_state(cfg, data.codec, data.input_dim(), feature_std(data.labeled.inputs));
  Rng draw(3);
  for (int i = 0; i < 8; ++i) {
    const auto lb = detail::draw_labeled(data.labeled, 4, data.codec, draw);
    if (s.stage() == Stage::stage1) {
      stage1_step(s, lb);
    } else {
      stage2_step(s, lb, detail::draw_unlabeled(data.unlabeled, 8, draw));
    }
  }
  const auto dir = fresh_dir("restore");
  fs::create_directories(dir);
  write_checkpoint(dir / "run.ckpt", checkpoint_entries(s));
  const RestoredRun r = restore_run(read_checkpoint(dir / "run.ckpt"));
  EXPECT_EQ(r.codec, data.codec);
  EXPECT_EQ(r.feature_norm, FeatureNorm::rms);
  ASSERT_TRUE(r.rewarder.has_value());

  const auto want = pseudo_label_generate(s.teacher, data.unlabeled.inputs);
  const auto got = pseudo_label_generate(r.teacher, data.unlabeled.inputs);
  EXPECT_EQ(got.labels, want.labels);
  EXPECT_EQ(got.features, want.features);
  EXPECT_EQ(r.rewarder->score(normalize_features(got.features, r.feature_norm), got.labels),
            s.rewarder.score(s.rewarder_features(want.features), want.labels));
}

TEST(Restore, MissingLayoutIsIoError) {
  EXPECT_THROW(restore_run({}), IoError);
  std::vector<NamedTensor> entries{{"meta.codec", Tensor({4}, std::vector<double>{0, 3, 0, 2})}};
  EXPECT_THROW(restore_run(entries), IoError);
}

TEST(Restore, CalibrationCoversEveryUnlabeledPair) {
  const Dataset data = generate_dataset(small_blobs(6));
  const TrainConfig cfg = small_config(SelectionKind::reward_average);
  RunState s = init_run_state(cfg, data.codec, data.input_dim(), feature_std(data.labeled.inputs));
  const RestoredRun r = restore_run(checkpoint_entries(s));
  const auto bins = calibrate_rewarder(r, data, 5);
  std::size_t total = 0;
  for (const auto& b : bins) {
    total += b.count;
    if (b.count > 0) {
      EXPECT_GE(b.accuracy, 0.0);
      EXPECT_LE(b.accuracy, 1.0);
    }
  }
  EXPECT_EQ(total, data.unlabeled.size());

  DatasetSpec other = small_blobs(6);
  other.num_classes = 4;
  EXPECT_THROW(calibrate_rewarder(r, generate_dataset(other), 5), ConfigError);
  TrainConfig plain = cfg;
  plain.selection.kind = SelectionKind::confidence;
  RunState p = init_run_state(plain, data.codec, data.input_dim(), feature_std(data.labeled.inputs));
  EXPECT_THROW(calibrate_rewarder(restore_run(checkpoint_entries(p)), data, 5), ConfigError);
}

// ---------------------------------------------------------------------------
// Strategy comparison

TEST(Compare, IdenticalStrategiesGiveIdenticalRows) {
  ExperimentConfig e;
  e.dataset = small_blobs(2);
  e.train = small_config(SelectionKind::reward_average);
  const SelectionStrategy s = e.train.selection;
  const CompareSummary c = compare_strategies(e, {s, s});
  ASSERT_EQ(c.rows.size(), 2u);
  EXPECT_EQ(c.failures(), 0u);
  EXPECT_NE(c.rows[0].label, c.rows[1].label);
  EXPECT_EQ(c.rows[0].final_metric, c.rows[1].final_metric);
  EXPECT_EQ(c.rows[0].best_metric, c.rows[1].best_metric);
  EXPECT_EQ(c.rows[0].iterations_to_best, c.rows[1].iterations_to_best);
  EXPECT_EQ(c.rows[0].speedup, 1.0);
  EXPECT_EQ(c.rows[1].speedup, 1.0);
  EXPECT_LE(c.rows[0].best_metric, c.rows[0].final_metric);
}

TEST(Compare, SpeedupIsBaseOverVariantIterations) {
  EXPECT_EQ(relative_speedup(100, 50), 2.0);
  EXPECT_EQ(relative_speedup(30, 60), 0.5);
  EXPECT_EQ(relative_speedup(0, 0), 1.0);
  EXPECT_TRUE(std::isnan(relative_speedup(10, 0)));
}

TEST(Compare, FailedRunIsMarkedAndOthersStillRun) {
  ExperimentConfig e;
  e.dataset = small_blobs(3);
  e.train = small_config(SelectionKind::confidence);
  SelectionStrategy broken = e.train.selection;
  broken.tau = 2.0;
  SelectionStrategy plain;
  plain.kind = SelectionKind::supervised_only;
  const auto dir = fresh_dir("compare_fail");
  const CompareSummary c = compare_strategies(e, {e.train.selection, broken, plain}, dir);
  ASSERT_EQ(c.rows.size(), 3u);
  EXPECT_EQ(c.failures(), 1u);
  EXPECT_FALSE(c.rows[0].failed);
  EXPECT_TRUE(c.rows[1].failed);
  EXPECT_FALSE(c.rows[1].error.empty());
  EXPECT_TRUE(std::isnan(c.rows[1].speedup));
  EXPECT_FALSE(c.rows[2].failed);
  EXPECT_TRUE(std::isfinite(c.rows[2].final_metric));

  EXPECT_TRUE(fs::exists(dir / "compare.csv"));
  EXPECT_TRUE(fs::exists(dir / c.rows[0].label / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / c.rows[2].label / "summary.json"));
  const Json j = read_json_file(dir / "compare.json");
  ASSERT_EQ(j.at("runs").size(), 3u);
  EXPECT_EQ(j.at("runs")[1].at("status"), "failed");
  const std::string csv = slurp(dir / "compare.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Compare, NeedsTwoStrategies) {
  ExperimentConfig e;
  e.dataset = small_blobs(3);
  e.train = small_config(SelectionKind::confidence);
  EXPECT_THROW(compare_strategies(e, {e.train.selection}), ConfigError);
}
