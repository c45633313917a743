#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semireward/dataset.hpp"
#include "semireward/error.hpp"
#include "semireward/train_config.hpp"

namespace semireward {

using Json = nlohmann::json;

// A dataset plus a training configuration. On disk: the TrainConfig fields at
// top level, "selection" as a nested object, and "dataset" for the data settings.
struct ExperimentConfig {
  DatasetSpec dataset;
  TrainConfig train;
};

inline Json to_json(const DatasetSpec& s) {
  return Json{{"kind", to_string(s.kind)},
              {"num_classes", s.num_classes},
              {"dims", s.dims},
              {"spread", s.spread},
              {"range_lo", s.range_lo},
              {"range_hi", s.range_hi},
              {"nuisance", s.nuisance},
              {"n_labeled_per_class", s.n_labeled_per_class},
              {"n_labeled", s.n_labeled},
              {"n_unlabeled", s.n_unlabeled},
              {"n_test", s.n_test},
              {"seed", s.seed}};
}

inline Json to_json(const SelectionStrategy& s) {
  return Json{{"kind", to_string(s.kind)},
              {"tau", s.tau},
              {"k", s.k},
              {"decay_enabled", s.decay_enabled},
              {"decay_cap", s.decay_cap},
              {"threshold_mode", to_string(s.threshold_mode)}};
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"total_iters", c.total_iters},
              {"stage2_start_fraction", c.stage2_start_fraction},
              {"subsample_ratio", c.subsample_ratio},
              {"labeled_batch", c.labeled_batch},
              {"unlabeled_batch", c.unlabeled_batch},
              {"rewarder_batch", c.rewarder_batch},
              {"student_hidden", c.student_hidden},
              {"student_lr", c.student_lr},
              {"student_weight_decay", c.student_weight_decay},
              {"student_loss", c.student_loss},
              {"ema_momentum", c.ema_momentum},
              {"augment_scale", c.augment_scale},
              {"rewarder_embed_dim", c.rewarder_embed_dim},
              {"rewarder_lr", c.rewarder_lr},
              {"generator_lr", c.generator_lr},
              {"rewarder_loss", to_string(c.rewarder_loss)},
              {"similarity", to_string(c.similarity)},
              {"generator_hidden", c.generator_hidden},
              {"gumbel_scale", c.gumbel_scale},
              {"logit_bound", c.logit_bound},
              {"feature_norm", to_string(c.feature_norm)},
              {"selection", to_json(c.selection)},
              {"stage2_truth", to_string(c.stage2_truth)},
              {"pseudo_label_noise", c.pseudo_label_noise},
              {"eval_model", to_string(c.eval_model)},
              {"log_interval", c.log_interval},
              {"early_stop_patience", c.early_stop_patience},
              {"write_checkpoints", c.write_checkpoints},
              {"seed", c.seed}};
}

inline Json to_json(const ExperimentConfig& e) {
  Json j = to_json(e.train);
  j["dataset"] = to_json(e.dataset);
  return j;
}

namespace detail {

// Reads known keys from a JSON object and rejects anything else.
class FieldReader {
 public:
  FieldReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path(key) + ": wrong type (" + j_.at(key).dump() + ")");
    }
  }

  template <typename T, typename Parse>
  void read_enum(const std::string& key, T& out, Parse parse) {
    std::string name;
    bool present = j_.contains(key);
    read(key, name);
    if (present) out = parse(name);
  }

  const Json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path(key) + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline DatasetSpec dataset_from_json(const Json& j, const std::string& where = "dataset") {
  DatasetSpec s;
  detail::FieldReader r(j, where);
  r.read_enum("kind", s.kind, parse_dataset_kind);
  r.read("num_classes", s.num_classes);
  r.read("dims", s.dims);
  r.read("spread", s.spread);
  r.read("range_lo", s.range_lo);
  r.read("range_hi", s.range_hi);
  r.read("nuisance", s.nuisance);
  r.read("n_labeled_per_class", s.n_labeled_per_class);
  r.read("n_labeled", s.n_labeled);
  r.read("n_unlabeled", s.n_unlabeled);
  r.read("n_test", s.n_test);
  r.read("seed", s.seed);
  r.finish();
  return s;
}

inline SelectionStrategy selection_from_json(const Json& j, const std::string& where = "selection") {
  SelectionStrategy s;
  detail::FieldReader r(j, where);
  r.read_enum("kind", s.kind, parse_selection_kind);
  r.read("tau", s.tau);
  r.read("k", s.k);
  r.read("decay_enabled", s.decay_enabled);
  r.read("decay_cap", s.decay_cap);
  r.read_enum("threshold_mode", s.threshold_mode, parse_threshold_mode);
  r.finish();
  return s;
}

inline ExperimentConfig experiment_from_json(const Json& j) {
  ExperimentConfig e;
  TrainConfig& c = e.train;
  detail::FieldReader r(j, "");
  if (const Json* d = r.child("dataset")) e.dataset = dataset_from_json(*d);
  if (const Json* s = r.child("selection")) c.selection = selection_from_json(*s);
  r.read("total_iters", c.total_iters);
  r.read("stage2_start_fraction", c.stage2_start_fraction);
  r.read("subsample_ratio", c.subsample_ratio);
  r.read("labeled_batch", c.labeled_batch);
  r.read("unlabeled_batch", c.unlabeled_batch);
  r.read("rewarder_batch", c.rewarder_batch);
  r.read("student_hidden", c.student_hidden);
  r.read("student_lr", c.student_lr);
  r.read("student_weight_decay", c.student_weight_decay);
  r.read("student_loss", c.student_loss);
  r.read("ema_momentum", c.ema_momentum);
  r.read("augment_scale", c.augment_scale);
  r.read("rewarder_embed_dim", c.rewarder_embed_dim);
  r.read("rewarder_lr", c.rewarder_lr);
  r.read("generator_lr", c.generator_lr);
  r.read_enum("rewarder_loss", c.rewarder_loss, parse_rewarder_loss);
  r.read_enum("similarity", c.similarity, parse_similarity);
  r.read("generator_hidden", c.generator_hidden);
  r.read("gumbel_scale", c.gumbel_scale);
  r.read("logit_bound", c.logit_bound);
  r.read_enum("feature_norm", c.feature_norm, parse_feature_norm);
  r.read_enum("stage2_truth", c.stage2_truth, parse_stage2_truth);
  r.read("pseudo_label_noise", c.pseudo_label_noise);
  r.read_enum("eval_model", c.eval_model, parse_eval_model);
  r.read("log_interval", c.log_interval);
  r.read("early_stop_patience", c.early_stop_patience);
  r.read("write_checkpoints", c.write_checkpoints);
  r.read("seed", c.seed);
  r.finish();
  return e;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// Sets a dotted key ("selection.kind", "dataset.spread") from command-line
// text. The text is read as JSON when it parses (numbers, booleans, arrays),
// otherwise as a plain string.
inline void apply_override(Json& j, const std::string& dotted, const std::string& text) {
  if (dotted.empty()) throw ConfigError("empty override key");
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  Json* node = &j;
  std::stringstream parts(dotted);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("malformed override key '" + dotted + "'");
    keys.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    Json& next = (*node)[keys[i]];
    if (next.is_null()) next = Json::object();
    if (!next.is_object()) throw ConfigError("override '" + dotted + "': '" + keys[i] + "' is not an object");
    node = &next;
  }
  (*node)[keys.back()] = value;
}

// "key=value" pairs applied in order.
inline void apply_overrides(Json& j, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
    apply_override(j, a.substr(0, eq), a.substr(eq + 1));
  }
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {}) {
  Json j = read_json_file(path);
  if (!j.is_object()) throw ConfigError(path.string() + ": top level must be an object");
  apply_overrides(j, overrides);
  ExperimentConfig e = experiment_from_json(j);
  e.dataset.validate();
  e.train.validate_for(e.dataset.codec());
  return e;
}

}  // namespace semireward
