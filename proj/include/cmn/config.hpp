#pragma once

// Experiment configuration: a small sectioned key=value format, validated
// up front with explicit field paths. Unknown sections or keys are errors.
//
//   [task]
//   kind = synthetic
//   count = 2
//   ...
//   [run]
//   seeds = 1,2,3

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cmn/tasks.hpp"
#include "cmn/trainer.hpp"
#include "cmn/transfer_cell.hpp"

namespace cmn {

struct ConfigError : ValueError {
  std::string field;  // "section.key" path, empty for file-level problems
  ConfigError(std::string f, const std::string& what)
      : ValueError(f.empty() ? what : f + ": " + what), field(std::move(f)) {}
};

struct ExperimentConfig {
  struct Task {
    std::string kind = "synthetic";  // synthetic | csv
    std::string mode = "blobs";      // blobs | stripes
    int count = 2;
    int classes_per_task = 2;
    int dim = 8;
    int side = 6;
    int samples_per_class = 60;
    int test_per_class = 30;
    double separation = 4.0;
    double noise = 1.0;
    bool shared_geometry = false;
    double geometry_correlation = 0.0;  // class-geometry overlap of later tasks with task 0
    int later_samples_per_class = 0;    // train-set size for tasks >= 1 (0 = samples_per_class)
    std::string source = "data";  // data | noise (ablation source task)
    int noise_samples = 200;
    std::vector<std::string> paths;  // csv kind: one file per task
    int image_side = 0;
  } task;

  std::string method = "cmn";  // cmn | one | joint | finetune | scratch | ablation:<strategy>
  std::string eval = "class_incremental";  // class_incremental | task_aware (accuracy-matrix scope)

  struct Backbone {
    std::string kind = "tiny_mlp";  // tiny_mlp | tiny_conv
    int width = 16;
    int depth = 2;
  } backbone;

  OptimizerConfig short_opt{0.01, 0.9, 1e-5, 40, 32, 10};
  OptimizerConfig long_opt{0.1, 0.9, 1e-5, 40, 32, 10};
  ConsolidationConfig consolidation{2.0, 0.8};

  std::vector<std::uint64_t> seeds{1};
  std::string out;  // empty: resolved from CMN_OUT_ROOT or ./results
  int threads = 0;  // 0 = one per seed, capped by hardware

  void validate() const;
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& field) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(field, "expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& v, const std::string& field) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(field, "expected a number, got '" + v + "'");
  }
}

inline int parse_int(const std::string& v, const std::string& field) {
  try {
    std::size_t used = 0;
    long l = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(l);
  } catch (const std::exception&) {
    throw ConfigError(field, "expected an integer, got '" + v + "'");
  }
}

inline std::vector<std::string> split_list(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, sep)) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline void apply_optimizer_key(OptimizerConfig& opt, const std::string& section,
                                const std::string& key, const std::string& value) {
  std::string field = section + "." + key;
  if (key == "lr")
    opt.lr = parse_double(value, field);
  else if (key == "momentum")
    opt.momentum = parse_double(value, field);
  else if (key == "weight_decay")
    opt.weight_decay = parse_double(value, field);
  else if (key == "epochs")
    opt.epochs = parse_int(value, field);
  else if (key == "batch_size")
    opt.batch_size = parse_int(value, field);
  else if (key == "patience")
    opt.patience = parse_int(value, field);
  else
    throw ConfigError(field, "unknown key");
}

inline void validate_optimizer(const OptimizerConfig& opt, const std::string& section) {
  if (opt.lr <= 0.0) throw ConfigError(section + ".lr", "must be > 0");
  if (opt.momentum < 0.0 || opt.momentum >= 1.0)
    throw ConfigError(section + ".momentum", "must be in [0, 1)");
  if (opt.batch_size < 1) throw ConfigError(section + ".batch_size", "must be >= 1");
  if (opt.epochs < 0) throw ConfigError(section + ".epochs", "must be >= 0");
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  if (task.kind != "synthetic" && task.kind != "csv")
    throw ConfigError("task.kind", "must be 'synthetic' or 'csv', got '" + task.kind + "'");
  if (task.mode != "blobs" && task.mode != "stripes")
    throw ConfigError("task.mode", "must be 'blobs' or 'stripes', got '" + task.mode + "'");
  if (task.count < 1) throw ConfigError("task.count", "must be >= 1");
  if (task.classes_per_task < 1) throw ConfigError("task.classes_per_task", "must be >= 1");
  if (task.dim < 1) throw ConfigError("task.dim", "must be >= 1");
  if (task.side < 2) throw ConfigError("task.side", "must be >= 2");
  if (task.samples_per_class < 1 || task.test_per_class < 1)
    throw ConfigError("task.samples_per_class", "samples per class must be >= 1");
  if (task.separation < 0.0) throw ConfigError("task.separation", "must be >= 0");
  if (task.geometry_correlation < 0.0 || task.geometry_correlation > 1.0)
    throw ConfigError("task.geometry_correlation", "must be in [0, 1]");
  if (task.later_samples_per_class < 0)
    throw ConfigError("task.later_samples_per_class", "must be >= 0");
  if (task.source != "data" && task.source != "noise")
    throw ConfigError("task.source", "must be 'data' or 'noise', got '" + task.source + "'");
  if (task.noise_samples < task.classes_per_task)
    throw ConfigError("task.noise_samples", "need at least one sample per class");
  if (task.kind == "csv" && task.paths.empty())
    throw ConfigError("task.paths", "csv tasks need at least one file");

  bool ablation = method.rfind("ablation:", 0) == 0;
  if (ablation) {
    transfer_strategy_from_string(method.substr(9));  // throws on unknown
    if (task.count != 2)
      throw ConfigError("task.count", "ablation methods need exactly 2 tasks (source, target)");
  } else if (method != "cmn" && method != "one" && method != "joint" && method != "finetune" &&
             method != "scratch") {
    throw ConfigError("method.name", "unknown method '" + method + "'");
  }
  if (task.source == "noise" && !ablation)
    throw ConfigError("task.source", "noise source is only meaningful for ablation methods");
  if (eval != "class_incremental" && eval != "task_aware")
    throw ConfigError("method.eval", "must be 'class_incremental' or 'task_aware', got '" + eval + "'");

  if (backbone.kind != "tiny_mlp" && backbone.kind != "tiny_conv")
    throw ConfigError("backbone.kind", "must be 'tiny_mlp' or 'tiny_conv'");
  if (backbone.width < 1) throw ConfigError("backbone.width", "must be >= 1");
  if (backbone.depth < 1) throw ConfigError("backbone.depth", "must be >= 1");

  detail::validate_optimizer(short_opt, "short");
  detail::validate_optimizer(long_opt, "long");
  if (consolidation.temperature <= 0.0)
    throw ConfigError("consolidation.temperature", "must be > 0");
  if (consolidation.beta < 0.0 || consolidation.beta > 1.0)
    throw ConfigError("consolidation.beta", "must be in [0, 1]");

  if (seeds.empty()) throw ConfigError("run.seeds", "need at least one seed");
  if (threads < 0) throw ConfigError("run.threads", "must be >= 0");
}

inline ExperimentConfig parse_experiment_config(std::istream& in, const std::string& origin) {
  ExperimentConfig cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);

    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("", origin + " line " + std::to_string(lineno) + ": unterminated section");
      section = line.substr(1, line.size() - 2);
      if (section != "task" && section != "method" && section != "backbone" &&
          section != "short" && section != "long" && section != "consolidation" &&
          section != "run")
        throw ConfigError(section, "unknown section");
      continue;
    }

    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", origin + " line " + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      auto sb = s.find_first_not_of(" \t");
      auto se = s.find_last_not_of(" \t");
      return sb == std::string::npos ? std::string() : s.substr(sb, se - sb + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    std::string field = section + "." + key;
    if (section.empty()) throw ConfigError(key, "key outside any section");

    if (section == "task") {
      if (key == "kind")
        cfg.task.kind = value;
      else if (key == "mode")
        cfg.task.mode = value;
      else if (key == "count")
        cfg.task.count = detail::parse_int(value, field);
      else if (key == "classes_per_task")
        cfg.task.classes_per_task = detail::parse_int(value, field);
      else if (key == "dim")
        cfg.task.dim = detail::parse_int(value, field);
      else if (key == "side")
        cfg.task.side = detail::parse_int(value, field);
      else if (key == "samples_per_class")
        cfg.task.samples_per_class = detail::parse_int(value, field);
      else if (key == "test_per_class")
        cfg.task.test_per_class = detail::parse_int(value, field);
      else if (key == "separation")
        cfg.task.separation = detail::parse_double(value, field);
      else if (key == "noise")
        cfg.task.noise = detail::parse_double(value, field);
      else if (key == "shared_geometry")
        cfg.task.shared_geometry = detail::parse_bool(value, field);
      else if (key == "geometry_correlation")
        cfg.task.geometry_correlation = detail::parse_double(value, field);
      else if (key == "later_samples_per_class")
        cfg.task.later_samples_per_class = detail::parse_int(value, field);
      else if (key == "source")
        cfg.task.source = value;
      else if (key == "noise_samples")
        cfg.task.noise_samples = detail::parse_int(value, field);
      else if (key == "paths")
        cfg.task.paths = detail::split_list(value, ';');
      else if (key == "image_side")
        cfg.task.image_side = detail::parse_int(value, field);
      else
        throw ConfigError(field, "unknown key");
    } else if (section == "method") {
      if (key == "name")
        cfg.method = value;
      else if (key == "eval")
        cfg.eval = value;
      else
        throw ConfigError(field, "unknown key");
    } else if (section == "backbone") {
      if (key == "kind")
        cfg.backbone.kind = value;
      else if (key == "width")
        cfg.backbone.width = detail::parse_int(value, field);
      else if (key == "depth")
        cfg.backbone.depth = detail::parse_int(value, field);
      else
        throw ConfigError(field, "unknown key");
    } else if (section == "short") {
      detail::apply_optimizer_key(cfg.short_opt, section, key, value);
    } else if (section == "long") {
      detail::apply_optimizer_key(cfg.long_opt, section, key, value);
    } else if (section == "consolidation") {
      if (key == "temperature")
        cfg.consolidation.temperature = detail::parse_double(value, field);
      else if (key == "beta")
        cfg.consolidation.beta = detail::parse_double(value, field);
      else
        throw ConfigError(field, "unknown key");
    } else if (section == "run") {
      if (key == "seeds") {
        cfg.seeds.clear();
        for (const auto& s : detail::split_list(value, ','))
          cfg.seeds.push_back(static_cast<std::uint64_t>(detail::parse_int(s, field)));
      } else if (key == "out") {
        cfg.out = value;
      } else if (key == "threads") {
        cfg.threads = detail::parse_int(value, field);
      } else {
        throw ConfigError(field, "unknown key");
      }
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path);
  return parse_experiment_config(in, path);
}

// Builds the concrete task sequence for one run seed. Data are a pure
// function of the run seed, so matched-seed baselines see identical tasks.
template <class T>
TaskSequence<T> build_tasks(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.task.kind == "csv") {
    TaskSequence<T> seq;
    seq.provenance = "csv";
    int offset = 0;
    for (const auto& path : cfg.task.paths) {
      CsvSchema schema;
      schema.image_side = cfg.task.image_side;
      auto task = load_csv_dataset<T>(path, schema);
      task.class_start = offset;
      for (auto& y : task.train_y) y += offset;
      for (auto& y : task.test_y) y += offset;
      offset += task.class_count;
      seq.tasks.push_back(std::move(task));
    }
    seq.total_classes = offset;
    seq.validate();
    return seq;
  }

  SyntheticSpec spec;
  spec.mode = cfg.task.mode == "blobs" ? SyntheticSpec::GaussianBlobs
                                       : SyntheticSpec::StripedPatterns;
  spec.classes_per_task = cfg.task.classes_per_task;
  spec.dim = cfg.task.dim;
  spec.side = cfg.task.side;
  spec.samples_per_class = cfg.task.samples_per_class;
  spec.test_per_class = cfg.task.test_per_class;
  spec.separation = cfg.task.separation;
  spec.noise = cfg.task.noise;
  spec.shared_geometry = cfg.task.shared_geometry;
  spec.geometry_correlation = cfg.task.geometry_correlation;
  spec.later_samples_per_class = cfg.task.later_samples_per_class;
  spec.seed = derive_seed(seed, {0xda7au});
  auto seq = gen_synthetic_tasks<T>(spec, cfg.task.count);

  if (cfg.task.source == "noise") {
    // Ablation pair with an unlearnable source: replace task 0 with noise of
    // the same shape and class span.
    auto& t0 = seq.tasks[0];
    auto noise = gen_noise_task<T>(t0.feature_shape, t0.class_count, cfg.task.noise_samples,
                                   derive_seed(seed, {0xda7au, 1}), t0.class_start);
    t0 = std::move(noise);
    seq.validate();
  }
  return seq;
}

inline RunConfigs build_run_configs(const ExperimentConfig& cfg, int feature_dim_or_channels) {
  RunConfigs r;
  r.body = cfg.backbone.kind == "tiny_mlp"
               ? NetworkSpec::tiny_mlp(feature_dim_or_channels, cfg.backbone.width,
                                       2, cfg.backbone.depth)
               : NetworkSpec::tiny_conv(feature_dim_or_channels, cfg.backbone.width, 2);
  r.short_opt = cfg.short_opt;
  r.long_opt = cfg.long_opt;
  r.consolidation = cfg.consolidation;
  r.eval = cfg.eval == "task_aware" ? EvalScope::TaskAware : EvalScope::ClassIncremental;
  return r;
}

}  // namespace cmn
