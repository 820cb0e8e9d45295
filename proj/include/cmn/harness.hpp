#pragma once

// Experiment orchestration: seeded runs (in parallel worker threads), result
// persistence (JSON records, CSV matrices/curves), metric recomputation,
// binary checkpoints and plot-data emission. All writes are atomic
// (temp file + rename) and confined to the output directory.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmn/baselines.hpp"
#include "cmn/config.hpp"
#include "cmn/digest.hpp"

namespace cmn {

using Json = nlohmann::json;

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string default_out_root() {
  if (const char* env = std::getenv("CMN_OUT_ROOT")) return env;
  return "results";
}

// -- canonical config JSON + digest ------------------------------------------

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["task"] = {{"kind", c.task.kind},
               {"mode", c.task.mode},
               {"count", c.task.count},
               {"classes_per_task", c.task.classes_per_task},
               {"dim", c.task.dim},
               {"side", c.task.side},
               {"samples_per_class", c.task.samples_per_class},
               {"test_per_class", c.task.test_per_class},
               {"separation", c.task.separation},
               {"noise", c.task.noise},
               {"shared_geometry", c.task.shared_geometry},
               {"geometry_correlation", c.task.geometry_correlation},
               {"later_samples_per_class", c.task.later_samples_per_class},
               {"source", c.task.source},
               {"noise_samples", c.task.noise_samples},
               {"paths", c.task.paths},
               {"image_side", c.task.image_side}};
  j["method"] = c.method;
  j["eval"] = c.eval;
  j["backbone"] = {{"kind", c.backbone.kind}, {"width", c.backbone.width}, {"depth", c.backbone.depth}};
  auto opt_json = [](const OptimizerConfig& o) {
    return Json{{"lr", o.lr},         {"momentum", o.momentum},
                {"weight_decay", o.weight_decay}, {"epochs", o.epochs},
                {"batch_size", o.batch_size},     {"patience", o.patience}};
  };
  j["short"] = opt_json(c.short_opt);
  j["long"] = opt_json(c.long_opt);
  j["consolidation"] = {{"temperature", c.consolidation.temperature}, {"beta", c.consolidation.beta}};
  return j;
}

inline std::string config_digest(const ExperimentConfig& c) {
  auto dump = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) h = (h ^ ch) * 0x100000001b3ULL;
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// -- matrix / baselines CSV --------------------------------------------------

inline std::string matrix_to_csv(const AccuracyMatrix& r) {
  std::string out;
  for (int i = 0; i < r.tasks(); ++i) {
    for (int j = 0; j < r.tasks(); ++j) {
      if (j) out += ',';
      if (r.has(i, j)) out += detail::format_double(r.get(i, j));
    }
    out += '\n';
  }
  return out;
}

inline AccuracyMatrix matrix_from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open matrix CSV " + path);
  std::vector<std::vector<std::optional<double>>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::optional<double>> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell.empty())
        row.emplace_back();
      else
        row.emplace_back(std::stod(cell));
    }
    // A trailing empty cell is eaten by getline; pad below instead.
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValueError("matrix CSV " + path + " is empty");
  AccuracyMatrix r(static_cast<int>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() > rows.size())
      throw ValueError("matrix CSV " + path + ": row " + std::to_string(i + 1) +
                       " wider than the matrix");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      if (rows[i][j]) r.set(static_cast<int>(i), static_cast<int>(j), *rows[i][j]);
  }
  return r;
}

inline std::string baselines_to_csv(const BaselineAccuracies& b) {
  std::string out = "task,one,joint,random_init\n";
  std::size_t t = std::max({b.one.size(), b.joint.size(), b.random_init.size()});
  for (std::size_t i = 0; i < t; ++i) {
    out += std::to_string(i);
    out += ',';
    if (i < b.one.size()) out += detail::format_double(b.one[i]);
    out += ',';
    if (i < b.joint.size()) out += detail::format_double(b.joint[i]);
    out += ',';
    if (i < b.random_init.size()) out += detail::format_double(b.random_init[i]);
    out += '\n';
  }
  return out;
}

inline BaselineAccuracies baselines_from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open baselines CSV " + path);
  std::string line;
  if (!std::getline(in, line)) throw ValueError("baselines CSV " + path + " is empty");
  auto header = detail::split_list(line, ',');
  BaselineAccuracies b;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col >= header.size()) throw ValueError("baselines CSV " + path + ": too many columns");
      const auto& name = header[col];
      if (!cell.empty() && name != "task") {
        double v = std::stod(cell);
        if (name == "one")
          b.one.push_back(v);
        else if (name == "joint")
          b.joint.push_back(v);
        else if (name == "random_init")
          b.random_init.push_back(v);
        else
          throw ValueError("baselines CSV " + path + ": unknown column '" + name + "'");
      }
      ++col;
    }
  }
  return b;
}

// -- metrics -----------------------------------------------------------------

// Everything derivable from R and the baselines. AF is exported in percentage
// points (x100), the conventional unit for this metric; ACC/BWT/FWT stay as fractions.
inline Json metrics_from_matrix(const AccuracyMatrix& r, const BaselineAccuracies& base) {
  Json m;
  m["acc"] = acc(r);
  m["bwt"] = r.tasks() >= 2 ? Json(bwt(r)) : Json(nullptr);
  bool have_probes = true;
  for (int i = 1; i < r.tasks(); ++i)
    if (!r.has(i - 1, i)) have_probes = false;
  if (r.tasks() >= 2 && have_probes && base.random_init.size() == static_cast<std::size_t>(r.tasks()))
    m["fwt"] = fwt(r, base.random_init);
  else
    m["fwt"] = nullptr;
  if (r.tasks() >= 2 && base.one.size() == static_cast<std::size_t>(r.tasks()) &&
      base.joint.size() == static_cast<std::size_t>(r.tasks()))
    m["af_pp"] = af(r, base) * 100.0;
  else
    m["af_pp"] = nullptr;
  return m;
}

// -- per-seed experiment -----------------------------------------------------

struct SeedOutcome {
  std::uint64_t seed = 0;
  Json metrics;                           // deterministic record
  double wall_seconds = 0.0;              // kept out of the metrics JSON
  std::string curves_csv;                 // per-epoch rows, may be header-only
  std::optional<AccuracyMatrix> matrix;
  std::optional<BaselineAccuracies> base;
};

namespace detail {

inline std::string curves_header(int tasks) {
  std::string h = "seed,task,phase,epoch,loss,train_acc";
  for (int j = 0; j < tasks; ++j) h += ",acc_task" + std::to_string(j);
  return h + "\n";
}

inline std::string curves_from_log(const TrainLog& log, std::uint64_t seed, int tasks) {
  std::string out = curves_header(tasks);
  for (const auto& r : log.records) {
    out += std::to_string(seed) + "," + std::to_string(r.task) + "," + r.phase + "," +
           std::to_string(r.epoch) + "," + format_double(r.loss) + "," +
           format_double(r.train_acc);
    for (int j = 0; j < tasks; ++j) {
      out += ',';
      if (j < static_cast<int>(r.task_acc.size())) out += format_double(r.task_acc[j]);
    }
    out += '\n';
  }
  return out;
}

template <class T>
int body_input_dim(const TaskSequence<T>& tasks) {
  const auto& shape = tasks.tasks[0].feature_shape;
  return shape.size() == 1 ? shape[0] : shape[0];  // dim or channels
}

inline Json rational_json(const Rational& r) {
  return Json{{"num", r.num}, {"den", r.den}, {"value", r.value()}};
}

}  // namespace detail

inline SeedOutcome run_experiment_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto start = std::chrono::steady_clock::now();
  SeedOutcome out;
  out.seed = seed;

  auto tasks = build_tasks<double>(cfg, seed);
  auto rc = build_run_configs(cfg, detail::body_input_dim(tasks));

  Json m;
  m["config_digest"] = config_digest(cfg);
  m["method"] = cfg.method;
  m["seed"] = seed;
  m["tasks"] = static_cast<int>(tasks.tasks.size());

  bool ablation = cfg.method.rfind("ablation:", 0) == 0;
  if (ablation) {
    auto res = run_transfer_ablation<double>(transfer_strategy_from_string(cfg.method.substr(9)),
                                             tasks, rc, seed);
    m["curve"] = res.curve;
    m["final_acc"] = res.final_acc;
    out.curves_csv = detail::curves_header(1);
    for (std::size_t e = 0; e < res.curve.size(); ++e)
      out.curves_csv += std::to_string(seed) + ",1,short," + std::to_string(e) + ",," +
                        "," + detail::format_double(res.curve[e]) + "\n";
  } else if (cfg.method == "cmn" || cfg.method == "finetune") {
    AccuracyMatrix r(1);
    Json it = Json::array();
    if (cfg.method == "cmn") {
      auto res = run_sequence(tasks, rc, seed);
      r = res.matrix;
      m["params"] = {{"test", res.params.test_params}, {"training", res.params.training_params}};
      for (const auto& t : res.iteration_times) it.push_back(detail::rational_json(t));
      out.curves_csv = detail::curves_from_log(res.log, seed, r.tasks());
    } else {
      auto res = run_baseline(BaselineKind::Finetune, tasks, rc, seed);
      r = res.matrix;
      m["params"] = {{"test", res.model_params}, {"training", res.model_params}};
      for (const auto& t : tasks.tasks)
        it.push_back(detail::rational_json(
            iteration_time(static_cast<long long>(t.train_x.size()), rc.short_opt.batch_size)));
      out.curves_csv = detail::curves_header(r.tasks());
    }
    m["iteration_time"] = it;

    // Matched-seed One/Joint baselines so AF differences are attributable to
    // the method, plus random-init accuracies for completeness.
    BaselineAccuracies base;
    base.one = run_baseline(BaselineKind::One, tasks, rc, seed).per_task;
    base.joint = run_baseline(BaselineKind::Joint, tasks, rc, seed).per_task;
    base.random_init = random_init_accuracies(tasks, rc, seed);
    m["baselines"] = {{"one", base.one}, {"joint", base.joint}, {"random_init", base.random_init}};

    Json mat = Json::array();
    for (int i = 0; i < r.tasks(); ++i) {
      Json row = Json::array();
      for (int j = 0; j < r.tasks(); ++j)
        row.push_back(r.has(i, j) ? Json(r.get(i, j)) : Json(nullptr));
      mat.push_back(row);
    }
    m["matrix"] = mat;
    m.update(metrics_from_matrix(r, base));
    out.matrix = r;
    out.base = base;
  } else {
    auto res = run_baseline(baseline_kind_from_string(cfg.method), tasks, rc, seed);
    m["acc_per_task"] = res.per_task;
    double mean = 0.0;
    for (double v : res.per_task) mean += v;
    m["acc"] = mean / res.per_task.size();
    m["params"] = {{"test", res.model_params}, {"training", res.model_params}};
    out.curves_csv = detail::curves_header(static_cast<int>(tasks.tasks.size()));
  }

  out.metrics = std::move(m);
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

struct RunOverrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> threads;
};

inline std::vector<Json> run_experiment(ExperimentConfig cfg, const RunOverrides& ov = {}) {
  if (ov.seed) cfg.seeds = {*ov.seed};
  if (ov.epochs) {
    cfg.short_opt.epochs = *ov.epochs;
    cfg.long_opt.epochs = *ov.epochs;
  }
  if (ov.out) cfg.out = *ov.out;
  if (ov.threads) cfg.threads = *ov.threads;
  cfg.validate();

  std::filesystem::path outdir = cfg.out.empty() ? default_out_root() : cfg.out;
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw IoError("cannot create output directory " + outdir.string() + ": " + ec.message());

  // Each seed owns its full model state; results are merged by this single
  // writer after the workers join, in seed order.
  std::vector<SeedOutcome> outcomes(cfg.seeds.size());
  std::vector<std::exception_ptr> errors(cfg.seeds.size());
  std::size_t workers = cfg.threads > 0 ? static_cast<std::size_t>(cfg.threads)
                                        : cfg.seeds.size();
  workers = std::min({workers, cfg.seeds.size(),
                      static_cast<std::size_t>(std::max(1u, std::thread::hardware_concurrency()))});
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < cfg.seeds.size(); i = next.fetch_add(1)) {
      try {
        outcomes[i] = run_experiment_seed(cfg, cfg.seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<Json> records;
  for (const auto& o : outcomes) {
    std::string tag = "seed_" + std::to_string(o.seed);
    detail::atomic_write(outdir / (tag + "_metrics.json"), o.metrics.dump(2) + "\n");
    Json result = o.metrics;
    result["wall_time_seconds"] = o.wall_seconds;
    detail::atomic_write(outdir / (tag + "_result.json"), result.dump(2) + "\n");
    detail::atomic_write(outdir / (tag + "_curves.csv"), o.curves_csv);
    if (o.matrix) detail::atomic_write(outdir / (tag + "_matrix.csv"), matrix_to_csv(*o.matrix));
    if (o.base) detail::atomic_write(outdir / (tag + "_baselines.csv"), baselines_to_csv(*o.base));
    records.push_back(o.metrics);
  }
  return records;
}

// -- metric recomputation ----------------------------------------------------

inline Json compute_metrics_from_files(const std::string& matrix_csv,
                                       const std::string& baselines_csv) {
  auto r = matrix_from_csv(matrix_csv);
  r.require_lower_triangle();
  auto base = baselines_from_csv(baselines_csv);
  if (r.tasks() >= 2 &&
      (base.one.size() != static_cast<std::size_t>(r.tasks()) ||
       base.joint.size() != static_cast<std::size_t>(r.tasks())))
    throw ValueError("AF requires complete one/joint baseline vectors (" +
                     std::to_string(r.tasks()) + " entries each)");
  return metrics_from_matrix(r, base);
}

// Recomputes every stored record's metrics from its persisted matrix and
// baseline CSVs and verifies the stored values to 1e-12.
inline Json compute_metrics(const std::string& results_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(results_dir)) throw IoError(results_dir + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(results_dir)) {
    auto name = entry.path().filename().string();
    if (name.rfind("seed_", 0) == 0 && name.size() > 13 &&
        name.substr(name.size() - 13) == "_metrics.json")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValueError("no metrics records in " + results_dir);

  Json out = Json::array();
  for (const auto& f : files) {
    std::ifstream in(f);
    Json stored;
    in >> stored;
    Json entry;
    entry["file"] = f.filename().string();
    entry["stored"] = Json::object();
    for (const char* k : {"acc", "bwt", "fwt", "af_pp"})
      if (stored.contains(k)) entry["stored"][k] = stored[k];

    auto stem = f.filename().string();
    stem = stem.substr(0, stem.size() - 13);  // "seed_<s>"
    auto matrix_path = fs::path(results_dir) / (stem + "_matrix.csv");
    if (fs::exists(matrix_path)) {
      auto r = matrix_from_csv(matrix_path.string());
      auto base = baselines_from_csv((fs::path(results_dir) / (stem + "_baselines.csv")).string());
      auto recomputed = metrics_from_matrix(r, base);
      for (const char* k : {"acc", "bwt", "fwt", "af_pp"}) {
        if (stored[k].is_null() != recomputed[k].is_null())
          throw ValueError(f.filename().string() + ": stored " + k +
                           " presence disagrees with recomputation");
        if (!stored[k].is_null() &&
            std::abs(stored[k].get<double>() - recomputed[k].get<double>()) > 1e-12)
          throw ValueError(f.filename().string() + ": stored " + k + " = " +
                           std::to_string(stored[k].get<double>()) + " but recomputed " +
                           std::to_string(recomputed[k].get<double>()));
      }
      entry["recomputed"] = recomputed;
    }
    out.push_back(entry);
  }
  return out;
}

// -- curves / summary emission -----------------------------------------------

inline void emit_curves(const std::string& results_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(results_dir)) throw IoError(results_dir + " is not a directory");
  std::vector<fs::path> curve_files, metric_files;
  for (const auto& entry : fs::directory_iterator(results_dir)) {
    auto name = entry.path().filename().string();
    if (name.rfind("seed_", 0) == 0) {
      if (name.size() > 11 && name.substr(name.size() - 11) == "_curves.csv")
        curve_files.push_back(entry.path());
      if (name.size() > 13 && name.substr(name.size() - 13) == "_metrics.json")
        metric_files.push_back(entry.path());
    }
  }
  std::sort(curve_files.begin(), curve_files.end());
  std::sort(metric_files.begin(), metric_files.end());
  if (metric_files.empty()) throw ValueError("no results in " + results_dir);

  std::string all;
  bool first = true;
  for (const auto& f : curve_files) {
    std::ifstream in(f);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (header) {
        if (first) all += line + "\n";
        header = false;
        first = false;
        continue;
      }
      all += line + "\n";
    }
  }
  detail::atomic_write(fs::path(results_dir) / "curves_all.csv", all);

  // Table-1-style summary: method x tasks x metric, "mean ± std" across
  // seeds, in percentage points.
  std::vector<Json> records;
  for (const auto& f : metric_files) {
    std::ifstream in(f);
    Json j;
    in >> j;
    records.push_back(std::move(j));
  }
  auto mean_std = [&](const char* key, double scale) -> std::optional<std::string> {
    std::vector<double> vals;
    for (const auto& r : records)
      if (r.contains(key) && r[key].is_number()) vals.push_back(r[key].get<double>() * scale);
    if (vals.empty() || vals.size() != records.size()) return std::nullopt;
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    double sd = std::sqrt(var / vals.size());
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, sd);
    return std::string(buf);
  };
  std::string method = records[0].value("method", "?");
  std::string tasks = std::to_string(records[0].value("tasks", 0));
  std::string summary = "method,tasks,metric,value\n";
  if (auto v = mean_std("acc", 100.0)) summary += method + "," + tasks + ",ACC," + *v + "\n";
  if (auto v = mean_std("bwt", 100.0)) summary += method + "," + tasks + ",BWT," + *v + "\n";
  if (auto v = mean_std("fwt", 100.0)) summary += method + "," + tasks + ",FWT," + *v + "\n";
  if (auto v = mean_std("af_pp", 1.0)) summary += method + "," + tasks + ",AF," + *v + "\n";
  if (auto v = mean_std("final_acc", 100.0))
    summary += method + "," + tasks + ",final_acc," + *v + "\n";
  detail::atomic_write(fs::path(results_dir) / "summary.csv", summary);
}

// -- checkpoints -------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline Json spec_to_json(const NetworkSpec& s) {
  Json layers = Json::array();
  for (const auto& l : s.layers)
    layers.push_back({{"kind", l.kind == LayerKind::Linear ? "linear" : "conv"},
                      {"in", l.in},
                      {"out", l.out},
                      {"kernel", l.kernel},
                      {"pad", l.pad}});
  return Json{{"layers", layers}, {"head_in", s.head_in}, {"head_dim", s.head_dim}};
}

inline NetworkSpec spec_from_json(const Json& j) {
  NetworkSpec s;
  for (const auto& l : j.at("layers")) {
    LayerSpec ls;
    ls.kind = l.at("kind") == "linear" ? LayerKind::Linear : LayerKind::ConvBlock;
    ls.in = l.at("in");
    ls.out = l.at("out");
    ls.kernel = l.at("kernel");
    ls.pad = l.at("pad");
    s.layers.push_back(ls);
  }
  s.head_in = j.at("head_in");
  s.head_dim = j.at("head_dim");
  return s;
}

template <class T>
void collect_net(const std::string& prefix, const NetworkParams<T>& net, Json& tensors,
                 std::vector<const Tensor<T>*>& order) {
  auto names = [&](const std::string& n, const Tensor<T>& t) {
    tensors.push_back({{"name", prefix + "." + n}, {"shape", t.shape()}});
    order.push_back(&t);
  };
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    names("w" + std::to_string(i), net.weights[i]);
    names("b" + std::to_string(i), net.biases[i]);
  }
  names("head_w", net.head_w);
  names("head_b", net.head_b);
}

}  // namespace detail

template <class T>
void save_checkpoint(const CmnState<T>& state, const std::string& path) {
  Json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["dtype"] = "f64";
  manifest["body"] = detail::spec_to_json(state.body);
  manifest["task_index"] = state.task_index;
  manifest["task_open"] = state.task_open;
  Json offsets = Json::array();
  for (auto [s, e] : state.class_offsets) offsets.push_back({s, e});
  manifest["class_offsets"] = offsets;

  Json tensors = Json::array();
  std::vector<const Tensor<T>*> order;
  if (state.l_params) {
    manifest["l_head_dim"] = state.l_params->spec.head_dim;
    detail::collect_net("l", *state.l_params, tensors, order);
  }
  if (state.s_params) {
    manifest["s_head_dim"] = state.s_params->spec.head_dim;
    detail::collect_net("s", *state.s_params, tensors, order);
  }
  if (state.l_old_snapshot) {
    manifest["snapshot_head_dim"] = state.l_old_snapshot->spec.head_dim;
    detail::collect_net("snapshot", *state.l_old_snapshot, tensors, order);
  }
  Json cells = Json::array();
  for (std::size_t i = 0; i < state.cells.size(); ++i) {
    const auto& c = state.cells[i];
    cells.push_back({{"l_channels", c.l_channels()}, {"s_channels", c.s_channels()}});
    std::string p = "cell" + std::to_string(i);
    const char* names[] = {"eca", "proj", "embed_long", "embed_short", "gate_bias"};
    auto parts = c.all();
    for (std::size_t k = 0; k < parts.size(); ++k) {
      tensors.push_back({{"name", p + "." + names[k]}, {"shape", parts[k]->shape()}});
      order.push_back(parts[k]);
    }
  }
  manifest["cells"] = cells;
  manifest["tensors"] = tensors;

  std::string mbytes = manifest.dump();
  std::ostringstream buf(std::ios::binary);
  buf.write("CMNK", 4);
  std::uint32_t ver = kCheckpointVersion;
  buf.write(reinterpret_cast<const char*>(&ver), sizeof ver);
  std::uint64_t mlen = mbytes.size();
  buf.write(reinterpret_cast<const char*>(&mlen), sizeof mlen);
  buf.write(mbytes.data(), static_cast<std::streamsize>(mbytes.size()));
  for (const auto* t : order) {
    std::vector<double> vals(t->data().begin(), t->data().end());
    buf.write(reinterpret_cast<const char*>(vals.data()),
              static_cast<std::streamsize>(vals.size() * sizeof(double)));
  }
  detail::atomic_write(path, buf.str());
}

template <class T = double>
CmnState<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "CMNK")
    throw IoError("checkpoint " + path + ": bad magic");
  std::uint32_t ver = 0;
  if (!in.read(reinterpret_cast<char*>(&ver), sizeof ver))
    throw IoError("checkpoint " + path + ": truncated header");
  if (ver != kCheckpointVersion)
    throw IoError("checkpoint " + path + ": schema version " + std::to_string(ver) +
                  ", expected " + std::to_string(kCheckpointVersion));
  std::uint64_t mlen = 0;
  if (!in.read(reinterpret_cast<char*>(&mlen), sizeof mlen))
    throw IoError("checkpoint " + path + ": truncated header");
  std::string mbytes(mlen, '\0');
  if (!in.read(mbytes.data(), static_cast<std::streamsize>(mlen)))
    throw IoError("checkpoint " + path + ": truncated manifest");
  Json manifest;
  try {
    manifest = Json::parse(mbytes);
  } catch (const std::exception& e) {
    throw IoError("checkpoint " + path + ": corrupt manifest: " + e.what());
  }

  CmnState<T> state;
  state.body = detail::spec_from_json(manifest.at("body"));
  state.task_index = manifest.at("task_index");
  state.task_open = manifest.at("task_open");
  for (const auto& o : manifest.at("class_offsets"))
    state.class_offsets.emplace_back(o.at(0).get<int>(), o.at(1).get<int>());

  std::size_t cursor = 0;
  const auto& tensors = manifest.at("tensors");
  auto read_tensor = [&](const Shape& expect) {
    if (cursor >= tensors.size()) throw IoError("checkpoint " + path + ": missing tensors");
    Shape shape = tensors[cursor].at("shape").get<Shape>();
    if (!expect.empty() && shape != expect)
      throw IoError("checkpoint " + path + ": tensor " +
                    tensors[cursor].at("name").get<std::string>() + " has shape " +
                    shape_str(shape) + ", manifest expects " + shape_str(expect));
    ++cursor;
    auto n = static_cast<std::size_t>(shape_numel(shape));
    std::vector<double> vals(n);
    if (!in.read(reinterpret_cast<char*>(vals.data()),
                 static_cast<std::streamsize>(n * sizeof(double))))
      throw IoError("checkpoint " + path + ": truncated tensor data");
    std::vector<T> cast(vals.begin(), vals.end());
    return Tensor<T>::from(shape, std::move(cast), false);
  };
  auto read_net = [&](int head_dim) {
    NetworkParams<T> net;
    net.spec = state.body;
    net.spec.head_dim = head_dim;
    for (const auto& l : net.spec.layers) {
      Shape wshape = l.kind == LayerKind::Linear ? Shape{l.in, l.out}
                                                 : Shape{l.out, l.in, l.kernel, l.kernel};
      net.weights.push_back(read_tensor(wshape));
      net.biases.push_back(read_tensor({l.out}));
    }
    net.head_w = read_tensor({net.spec.head_in, head_dim});
    net.head_b = read_tensor({head_dim});
    return net;
  };

  if (manifest.contains("l_head_dim")) state.l_params = read_net(manifest["l_head_dim"]);
  if (manifest.contains("s_head_dim")) state.s_params = read_net(manifest["s_head_dim"]);
  if (manifest.contains("snapshot_head_dim"))
    state.l_old_snapshot = read_net(manifest["snapshot_head_dim"]);
  for (const auto& cj : manifest.at("cells")) {
    TransferCell<T> c;
    c.eca.kernel = read_tensor({});
    int lc = cj.at("l_channels"), sc = cj.at("s_channels");
    c.proj = read_tensor({lc, sc});
    c.embed_long = read_tensor({lc, sc});
    c.embed_short = read_tensor({sc, sc});
    c.gate_bias = read_tensor({sc});
    state.cells.push_back(std::move(c));
  }
  if (cursor != tensors.size())
    throw IoError("checkpoint " + path + ": manifest lists " + std::to_string(tensors.size()) +
                  " tensors, decoded " + std::to_string(cursor));
  char extra;
  if (in.read(&extra, 1))
    throw IoError("checkpoint " + path + ": trailing bytes after tensor data");
  return state;
}

}  // namespace cmn
