// Experiment driver. Subcommands:
//   run <config>                 execute an experiment config, one run per seed
//   metrics <dir>                recompute + verify metrics from stored CSVs
//   metrics <R.csv> <base.csv>   compute metrics from a matrix/baselines pair
//   curves <dir>                 merge per-seed curves and emit the summary table
//   checkpoint save <config> <file> [--seed N]   train CMN and save final state
//   checkpoint load <file>       validate a checkpoint and print its manifest
//
// Exit codes: 0 success, 2 config error, 3 numerical divergence, 4 I/O error.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cmn/cmn.hpp"

namespace {

int run_cmd(const std::string& config_path, const cmn::RunOverrides& ov) {
  auto cfg = cmn::load_experiment_config(config_path);
  auto records = cmn::run_experiment(cfg, ov);
  std::string outdir = ov.out ? *ov.out : (cfg.out.empty() ? cmn::default_out_root() : cfg.out);
  std::cout << records.size() << " run(s) written to " << outdir << "\n";
  for (const auto& r : records) {
    std::cout << "seed " << r["seed"] << ":";
    for (const char* k : {"acc", "bwt", "af_pp", "final_acc"})
      if (r.contains(k) && r[k].is_number())
        std::cout << " " << k << "=" << r[k].get<double>();
    std::cout << "\n";
  }
  return 0;
}

int metrics_cmd(const std::string& target, const std::string& baselines_csv) {
  cmn::Json out;
  if (!baselines_csv.empty())
    out = cmn::compute_metrics_from_files(target, baselines_csv);
  else
    out = cmn::compute_metrics(target);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int curves_cmd(const std::string& dir) {
  cmn::emit_curves(dir);
  std::cout << "wrote " << dir << "/curves_all.csv and " << dir << "/summary.csv\n";
  return 0;
}

int checkpoint_save_cmd(const std::string& config_path, const std::string& out_path,
                        std::uint64_t seed) {
  auto cfg = cmn::load_experiment_config(config_path);
  if (cfg.method != "cmn")
    throw cmn::ConfigError("method.name", "checkpoint save requires method cmn");
  auto tasks = cmn::build_tasks<double>(cfg, seed);
  auto rc = cmn::build_run_configs(cfg, tasks.tasks[0].feature_shape[0]);
  auto res = cmn::run_sequence(tasks, rc, seed);
  cmn::save_checkpoint(res.state, out_path);
  std::cout << "checkpoint written to " << out_path << "\n";
  return 0;
}

int checkpoint_load_cmd(const std::string& path) {
  auto state = cmn::load_checkpoint<double>(path);
  std::cout << "checkpoint ok: " << state.task_index << " task(s), "
            << state.class_offsets.size() << " class range(s)";
  if (state.l_params)
    std::cout << ", L-Net head " << state.l_params->spec.head_dim << " ("
              << cmn::count_params(*state.l_params) << " params, digest "
              << std::hex << cmn::digest_params(*state.l_params) << std::dec << ")";
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cycled memory network experiment driver"};
  app.require_subcommand(1);

  std::string config_path, target, baselines_csv, ckpt_path, out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = 0, threads = 0;

  auto* run = app.add_subcommand("run", "execute an experiment config");
  run->add_option("config", config_path, "config file")->required();
  auto* seed_opt = run->add_option("--seed", seed, "run a single seed");
  run->add_option("--out", out_dir, "output directory override");
  run->add_option("--epochs", epochs, "epoch override for both phases");
  run->add_option("--threads", threads, "worker thread count");

  auto* metrics = app.add_subcommand("metrics", "recompute metrics from stored results");
  metrics->add_option("target", target, "results dir or R-matrix CSV")->required();
  metrics->add_option("baselines", baselines_csv, "baselines CSV (with a matrix CSV target)");

  auto* curves = app.add_subcommand("curves", "emit merged curves and summary table");
  curves->add_option("dir", target, "results dir")->required();

  auto* ckpt = app.add_subcommand("checkpoint", "save or load model checkpoints");
  ckpt->require_subcommand(1);
  auto* save = ckpt->add_subcommand("save", "train per config and save the final state");
  save->add_option("config", config_path, "config file")->required();
  save->add_option("file", ckpt_path, "checkpoint path")->required();
  save->add_option("--seed", seed, "seed (default: first in config)");
  auto* load = ckpt->add_subcommand("load", "validate a checkpoint");
  load->add_option("file", ckpt_path, "checkpoint path")->required();

  CLI11_PARSE(app, argc, argv);
  seed_set = seed_opt->count() > 0;

  try {
    if (run->parsed()) {
      cmn::RunOverrides ov;
      if (seed_set) ov.seed = seed;
      if (!out_dir.empty()) ov.out = out_dir;
      if (epochs > 0) ov.epochs = epochs;
      if (threads > 0) ov.threads = threads;
      return run_cmd(config_path, ov);
    }
    if (metrics->parsed()) return metrics_cmd(target, baselines_csv);
    if (curves->parsed()) return curves_cmd(target);
    if (ckpt->parsed()) {
      if (save->parsed()) {
        std::uint64_t s = save->count("--seed") > 0
                              ? seed
                              : cmn::load_experiment_config(config_path).seeds.front();
        return checkpoint_save_cmd(config_path, ckpt_path, s);
      }
      return checkpoint_load_cmd(ckpt_path);
    }
  } catch (const cmn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cmn::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const cmn::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
