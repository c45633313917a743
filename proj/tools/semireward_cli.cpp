#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semireward/semireward.hpp"

namespace fs = std::filesystem;
using namespace semireward;

namespace {

fs::path output_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SEMIREWARD_OUT"); env && *env) return env;
  return "semireward_out";
}

// "kind" or "kind:param", where param is tau for threshold kinds and k for top-k.
// Everything else comes from the config's own selection block.
SelectionStrategy parse_strategy(const std::string& text, const SelectionStrategy& base) {
  SelectionStrategy s = base;
  const auto colon = text.find(':');
  s.kind = parse_selection_kind(text.substr(0, colon));
  if (colon != std::string::npos) {
    const std::string param = text.substr(colon + 1);
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(param, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != param.size()) throw ConfigError("strategy '" + text + "': bad parameter");
    if (s.kind == SelectionKind::reward_topk) {
      if (value < 1 || value != static_cast<double>(static_cast<std::size_t>(value)))
        throw ConfigError("strategy '" + text + "': k must be a positive integer");
      s.k = static_cast<std::size_t>(value);
    } else {
      s.tau = value;
    }
  }
  s.validate();
  return s;
}

std::vector<SelectionStrategy> parse_strategies(const std::string& list, const SelectionStrategy& base) {
  std::vector<SelectionStrategy> out;
  std::stringstream parts(list);
  std::string item;
  while (std::getline(parts, item, ',')) {
    if (item.empty()) throw ConfigError("empty entry in --strategies");
    out.push_back(parse_strategy(item, base));
  }
  return out;
}

std::string fmt(double v) { return std::isnan(v) ? "-" : format_number(v); }

void print_row(const MetricsRow& r, bool regression) {
  if (regression) {
    std::printf("  mae %s  rmse %s", fmt(r.test_mae).c_str(), fmt(r.test_rmse).c_str());
  } else {
    std::printf("  error %s%%", fmt(r.test_error).c_str());
  }
}

int cmd_train(const std::string& config, const std::vector<std::string>& sets, const fs::path& out) {
  const ExperimentConfig e = load_experiment(config, sets);
  const Dataset data = generate_dataset(e.dataset);
  fs::create_directories(out);
  write_json_file(out / "config.json", to_json(e));
  const RunSummary s = train_run(e.train, data, out);
  const bool reg = data.codec.is_regression();
  std::printf("final (iteration %zu):", s.iterations_run);
  print_row(s.final_row, reg);
  std::printf("\nbest (iteration %zu):", s.best_iteration);
  print_row(s.best_row, reg);
  std::printf("\n%.3f ms/iteration, outputs in %s\n", 1000.0 * s.seconds_per_iteration(), out.string().c_str());
  return 0;
}

int cmd_compare(const std::string& config, const std::vector<std::string>& sets, const std::string& list,
                const fs::path& out) {
  const ExperimentConfig e = load_experiment(config, sets);
  const auto strategies = parse_strategies(list, e.train.selection);
  const CompareSummary c = compare_strategies(e, strategies, out);
  std::printf("%-24s %12s %12s %10s %8s\n", "strategy", "final", "best", "it_to_best", "speedup");
  for (const auto& r : c.rows) {
    if (r.failed) {
      std::printf("%-24s FAILED: %s\n", r.label.c_str(), r.error.c_str());
      continue;
    }
    std::printf("%-24s %12s %12s %10zu %8s\n", r.label.c_str(), fmt(r.final_metric).c_str(),
                fmt(r.best_metric).c_str(), r.iterations_to_best, fmt(r.speedup).c_str());
  }
  std::printf("outputs in %s\n", out.string().c_str());
  if (c.failures() > 0) {
    std::fprintf(stderr, "run_failed: %zu of %zu runs failed\n", c.failures(), c.rows.size());
    return 3;
  }
  return 0;
}

int cmd_gen_data(const std::string& spec_path, const std::vector<std::string>& sets, const fs::path& out) {
  Json j = read_json_file(spec_path);
  if (!j.is_object()) throw ConfigError(spec_path + ": top level must be an object");
  // Either a bare dataset spec or a full experiment config.
  const bool nested = j.contains("dataset");
  apply_overrides(j, sets);
  const DatasetSpec spec = nested ? dataset_from_json(j.at("dataset")) : dataset_from_json(j);
  spec.validate();
  const Dataset data = generate_dataset(spec);
  fs::create_directories(out);
  write_dataset_csv(data, out);
  write_json_file(out / "dataset.json", to_json(spec));
  std::printf("labeled %zu, unlabeled %zu, test %zu -> %s\n", data.labeled.size(), data.unlabeled.size(),
              data.test.size(), out.string().c_str());
  return 0;
}

int cmd_calibrate(const std::string& checkpoint, const std::string& dataset_dir, std::size_t bins,
                  const fs::path& out) {
  const RestoredRun run = restore_run(read_checkpoint(checkpoint));
  const Dataset data = read_dataset_csv(dataset_dir, run.codec);
  const auto table = calibrate_rewarder(run, data, bins);
  fs::create_directories(out);
  write_calibration_csv(out / "calibration.csv", table);
  std::printf("%-16s %8s %12s %12s\n", "bin", "count", "mean_reward", "accuracy");
  for (const auto& b : table) {
    std::printf("[%.3f, %.3f]   %8zu %12s %12s\n", b.lo, b.hi, b.count, fmt(b.mean_score).c_str(),
                fmt(b.accuracy).c_str());
  }
  std::printf("outputs in %s\n", (out / "calibration.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised training with a learned pseudo-label rewarder"};
  app.require_subcommand(1);
  std::string out_flag;
  std::vector<std::string> sets;
  app.add_option("-o,--out", out_flag, "Output directory (default: $SEMIREWARD_OUT, then ./semireward_out)");

  std::string config;
  auto* train = app.add_subcommand("train", "Train one configuration");
  train->add_option("config", config, "Experiment JSON")->required();
  train->add_option("-s,--set", sets, "Override a config key: dotted.key=value (repeatable)");

  std::string strategies;
  auto* compare = app.add_subcommand("compare", "Train several selection strategies on the same data");
  compare->add_option("config", config, "Experiment JSON")->required();
  compare->add_option("--strategies", strategies, "Comma list of kind[:tau|k]")->required();
  compare->add_option("-s,--set", sets, "Override a config key: dotted.key=value (repeatable)");

  std::string spec;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
  gen->add_option("spec", spec, "Dataset spec JSON (or an experiment config)")->required();
  gen->add_option("-s,--set", sets, "Override a spec key: dotted.key=value (repeatable)");

  std::string checkpoint, dataset_dir;
  std::size_t bins = 10;
  auto* cal = app.add_subcommand("calibrate", "Reward calibration table for a checkpoint");
  cal->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  cal->add_option("dataset", dataset_dir, "Dataset directory written by gen-data")->required();
  cal->add_option("--bins", bins, "Number of reward bins")->check(CLI::Range(2, 1000));

  for (auto* sub : {train, compare, gen, cal}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "usage_error: %s\n", e.what());
    return 2;
  }

  const fs::path out = output_dir(out_flag);
  try {
    if (*train) return cmd_train(config, sets, out);
    if (*compare) return cmd_compare(config, sets, strategies, out);
    if (*gen) return cmd_gen_data(spec, sets, out);
    return cmd_calibrate(checkpoint, dataset_dir, bins, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "%s: %s\n", e.kind().c_str(), e.what());
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config_error: %s\n", e.what());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal_error: %s\n", e.what());
  }
  return 1;
}
