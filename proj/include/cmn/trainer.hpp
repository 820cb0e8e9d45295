#pragma once

// SGD with momentum/weight decay and the two-phase lifelong training loop:
// L-S transfer half-cycle (train S-Net + cells against a frozen L-Net) and
// S-L transform half-cycle (distill S-Net and the old L-Net snapshot into the
// expanded L-Net). run_sequence drives the full memory-learning loop over a
// task sequence and fills the accuracy matrix row by row.

#include <cstdint>
#include <string>
#include <vector>

#include "cmn/consolidation.hpp"
#include "cmn/metrics.hpp"
#include "cmn/model.hpp"
#include "cmn/tasks.hpp"

namespace cmn {

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  int epochs = 40;
  int batch_size = 32;
  int patience = 10;  // early stop after this many epochs without improvement; 0 = off

  void validate() const {
    if (lr <= 0.0) throw ValueError("optimizer.lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ValueError("optimizer.momentum must be in [0, 1)");
    if (batch_size < 1) throw ValueError("optimizer.batch_size must be >= 1");
    if (epochs < 0) throw ValueError("optimizer.epochs must be >= 0");
  }
};

struct EpochRecord {
  int task = 0;
  int epoch = 0;
  std::string phase;  // "short" | "consolidate"
  double loss = 0.0;
  double train_acc = 0.0;
  std::vector<double> task_acc;  // eval accuracy per seen task
};

struct TrainLog {
  std::vector<EpochRecord> records;

  void append(const TrainLog& other) {
    records.insert(records.end(), other.records.begin(), other.records.end());
  }
};

struct DivergenceError : NumericError {
  std::string phase;
  int epoch;
  DivergenceError(std::string ph, int ep, const std::string& what)
      : NumericError("divergence in phase '" + ph + "' epoch " + std::to_string(ep) + ": " + what),
        phase(std::move(ph)),
        epoch(ep) {}
};

// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v
template <class T>
struct SgdOptimizer {
  OptimizerConfig cfg;
  std::vector<Tensor<T>*> params;
  std::vector<std::vector<T>> velocity;

  SgdOptimizer(OptimizerConfig c, std::vector<Tensor<T>*> ps) : cfg(c), params(std::move(ps)) {
    cfg.validate();
    for (auto* p : params) velocity.emplace_back(p->data().size(), T(0));
  }

  void step() {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& data = params[i]->data();
      const auto& grad = params[i]->grad();
      auto& v = velocity[i];
      if (grad.size() != data.size())
        throw ShapeError("sgd_step: gradient/parameter size mismatch");
      for (std::size_t j = 0; j < data.size(); ++j) {
        v[j] = static_cast<T>(cfg.momentum) * v[j] + grad[j] +
               static_cast<T>(cfg.weight_decay) * data[j];
        data[j] -= static_cast<T>(cfg.lr) * v[j];
      }
    }
  }
};

namespace detail {

// Hard cross-entropy from integer labels; logits rank 1 (single sample,
// labels size 1) or rank 2 (batch rows).
template <class T>
Tensor<T> hard_ce(const Tensor<T>& logits, const std::vector<int>& labels) {
  int rows = logits.rank() == 2 ? logits.shape()[0] : 1;
  int cols = logits.rank() == 2 ? logits.shape()[1] : logits.shape()[0];
  std::vector<T> onehot(static_cast<std::size_t>(rows) * cols, T(0));
  for (int r = 0; r < rows; ++r) {
    if (labels[r] < 0 || labels[r] >= cols)
      throw ValueError("hard_ce: label " + std::to_string(labels[r]) + " out of range");
    onehot[static_cast<std::size_t>(r) * cols + labels[r]] = T(1);
  }
  auto target = Tensor<T>::from(logits.shape(), std::move(onehot));
  return cross_entropy_soft(target, softmax_t(logits, 1.0));
}

template <class T>
Tensor<T> make_batch(const std::vector<std::vector<T>>& xs, const std::vector<std::size_t>& idx,
                     std::size_t from, std::size_t to, int dim) {
  std::vector<T> flat;
  flat.reserve((to - from) * static_cast<std::size_t>(dim));
  for (std::size_t i = from; i < to; ++i)
    flat.insert(flat.end(), xs[idx[i]].begin(), xs[idx[i]].end());
  return Tensor<T>::from({static_cast<int>(to - from), dim}, std::move(flat));
}

template <class T>
int argmax(const Tensor<T>& v) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(v.numel()); ++j)
    if (v.data()[static_cast<std::size_t>(j)] > v.data()[static_cast<std::size_t>(best)]) best = j;
  return best;
}

template <class T, class ForwardFn>
double eval_accuracy(const std::vector<std::vector<T>>& xs, const std::vector<int>& ys,
                     const Shape& feature_shape, ForwardFn forward) {
  if (xs.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto x = Tensor<T>::from(feature_shape, xs[i]);
    if (forward(x) == ys[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(xs.size());
}

inline bool diverged(double loss) { return !std::isfinite(loss) || loss > 1e6; }

// Runs one training step's worth of work, converting any numeric breakage
// (overflowed parameters, degenerate softmax rows) into a phase-tagged abort.
template <class Fn>
auto guard_numerics(const char* phase, int epoch, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const DivergenceError&) {
    throw;
  } catch (const NumericError& e) {
    throw DivergenceError(phase, epoch, e.what());
  }
}

}  // namespace detail

// How the accuracy matrix is filled: argmax over every consolidated class
// (class-incremental) or restricted to the evaluated task's head slice
// (task-aware). Published results in this area use either protocol, so
// both are supported and selected per run.
enum class EvalScope { ClassIncremental, TaskAware };

// Accuracy of the L-Net (full-head class-incremental prediction) on one task.
template <class T>
double evaluate_long_on_task(const CmnState<T>& state, const TaskDataset<T>& task) {
  return detail::eval_accuracy(task.test_x, task.test_y, task.feature_shape,
                               [&](const Tensor<T>& x) {
                                 return predict(state, x, PredictScope::AllClasses);
                               });
}

// Accuracy on one task under an explicit evaluation scope; task_index selects
// the head slice when scope is TaskAware.
template <class T>
double evaluate_long_on_task(const CmnState<T>& state, const TaskDataset<T>& task,
                             int task_index, EvalScope scope) {
  return detail::eval_accuracy(
      task.test_x, task.test_y, task.feature_shape, [&](const Tensor<T>& x) {
        return scope == EvalScope::TaskAware
                   ? predict(state, x, PredictScope::Task, task_index)
                   : predict(state, x, PredictScope::AllClasses);
      });
}

// L-S transfer half-cycle: minimizes cross-entropy over S-Net and cell
// parameters with the L-Net structurally frozen.
template <class T>
TrainLog train_short_phase(CmnState<T>& state, const TaskDataset<T>& task,
                           const OptimizerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!state.s_params) throw ValueError("train_short_phase: begin_task not called");
  if (task.train_x.empty()) throw ValueError("train_short_phase: empty dataset");
  task.validate();

  state.s_params->set_track(true);
  for (auto& c : state.cells) c.set_track(true);
  if (state.l_params) state.l_params->set_track(false);

  std::vector<Tensor<T>*> params = state.s_params->all();
  for (auto& c : state.cells)
    for (auto* t : c.all()) params.push_back(t);
  SgdOptimizer<T> opt(cfg, params);

  bool batched = task.feature_shape.size() == 1;
  int dim = batched ? task.feature_shape[0] : 0;
  std::vector<std::size_t> idx(task.train_x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng shuffle_rng(derive_seed(seed, {0x5348u, (std::uint64_t)state.task_index}));

  TrainLog log;
  double best_loss = 1e300;
  int stale = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(idx.begin(), idx.end(), shuffle_rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t from = 0; from < idx.size(); from += cfg.batch_size) {
      std::size_t to = std::min(idx.size(), from + cfg.batch_size);
      double lv = detail::guard_numerics("short", epoch, [&] {
        Tensor<T> loss;
        if (batched) {
          auto x = detail::make_batch(task.train_x, idx, from, to, dim);
          std::vector<int> labels;
          for (std::size_t i = from; i < to; ++i) labels.push_back(task.train_y[idx[i]] - task.class_start);
          loss = detail::hard_ce(forward_short(state, x), labels);
        } else {
          Tensor<T> acc;
          for (std::size_t i = from; i < to; ++i) {
            auto x = Tensor<T>::from(task.feature_shape, task.train_x[idx[i]]);
            auto one = detail::hard_ce(forward_short(state, x), {task.train_y[idx[i]] - task.class_start});
            acc = acc.valid() ? add(acc, one) : one;
          }
          loss = scale(acc, static_cast<T>(1.0 / static_cast<double>(to - from)));
        }
        double v = static_cast<double>(loss.item());
        if (detail::diverged(v)) throw DivergenceError("short", epoch, "loss " + std::to_string(v));
        loss.backward();
        opt.step();
        return v;
      });
      epoch_loss += lv;
      ++batches;
    }
    epoch_loss /= batches;
    detail::guard_numerics("short", epoch, [&] {
      for (auto* p : params) p->assert_finite("short-phase parameters");
      EpochRecord rec;
      rec.task = state.task_index - 1;
      rec.epoch = epoch;
      rec.phase = "short";
      rec.loss = epoch_loss;
      rec.train_acc = detail::eval_accuracy(
          task.train_x, task.train_y, task.feature_shape, [&](const Tensor<T>& x) {
            return task.class_start + detail::argmax(forward_short(state, x));
          });
      rec.task_acc = {detail::eval_accuracy(
          task.test_x, task.test_y, task.feature_shape, [&](const Tensor<T>& x) {
            return task.class_start + detail::argmax(forward_short(state, x));
          })};
      log.records.push_back(rec);
      return 0;
    });

    if (epoch_loss < best_loss - 1e-5) {
      best_loss = epoch_loss;
      stale = 0;
    } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
      break;
    }
  }
  return log;
}

// S-L transform half-cycle: minimizes the dual-distillation total loss over
// the new L-Net only, on current-task data. The S-Net and the pre-expansion
// L-Net snapshot are frozen teachers.
template <class T>
TrainLog consolidate_phase(CmnState<T>& state, const TaskDataset<T>& task,
                           const OptimizerConfig& cfg, const ConsolidationConfig& cons,
                           std::uint64_t seed,
                           const std::vector<const TaskDataset<T>*>& eval_tasks = {}) {
  cfg.validate();
  cons.validate();
  if (!state.s_params) throw ValueError("consolidate_phase: missing S-Net");
  if (!state.l_params || !state.l_old_snapshot)
    throw ValueError("consolidate_phase: head not expanded");
  if (task.train_x.empty()) throw ValueError("consolidate_phase: empty dataset");

  state.l_params->set_track(true);
  state.s_params->set_track(false);
  for (auto& c : state.cells) c.set_track(false);
  state.l_old_snapshot->set_track(false);

  SgdOptimizer<T> opt(cfg, state.l_params->all());

  bool batched = task.feature_shape.size() == 1;
  int dim = batched ? task.feature_shape[0] : 0;
  std::vector<std::size_t> idx(task.train_x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Independent stream from the short phase.
  Rng shuffle_rng(derive_seed(seed, {0x434fu, (std::uint64_t)state.task_index}));

  auto s_logits_for = [&](const Tensor<T>& x) {
    if (state.cells.empty()) return forward_plain(*state.s_params, x).logits;
    return transfer_forward(state.cells, *state.s_params, *state.l_old_snapshot, x).logits;
  };

  TrainLog log;
  double best_loss = 1e300;
  int stale = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(idx.begin(), idx.end(), shuffle_rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t from = 0; from < idx.size(); from += cfg.batch_size) {
      std::size_t to = std::min(idx.size(), from + cfg.batch_size);
      double lv = detail::guard_numerics("consolidate", epoch, [&] {
        Tensor<T> loss;
        if (batched) {
          auto x = detail::make_batch(task.train_x, idx, from, to, dim);
          std::vector<int> labels;
          for (std::size_t i = from; i < to; ++i) labels.push_back(task.train_y[idx[i]]);
          auto l_new = forward_plain(*state.l_params, x).logits;
          auto l_old = forward_plain(*state.l_old_snapshot, x).logits;
          loss = loss_total(l_new, l_old, s_logits_for(x), labels, cons);
        } else {
          Tensor<T> acc;
          for (std::size_t i = from; i < to; ++i) {
            auto x = Tensor<T>::from(task.feature_shape, task.train_x[idx[i]]);
            auto l_new = forward_plain(*state.l_params, x).logits;
            auto l_old = forward_plain(*state.l_old_snapshot, x).logits;
            auto one = loss_total(l_new, l_old, s_logits_for(x), {task.train_y[idx[i]]}, cons);
            acc = acc.valid() ? add(acc, one) : one;
          }
          loss = scale(acc, static_cast<T>(1.0 / static_cast<double>(to - from)));
        }
        double v = static_cast<double>(loss.item());
        if (detail::diverged(v)) throw DivergenceError("consolidate", epoch, "loss " + std::to_string(v));
        loss.backward();
        opt.step();
        return v;
      });
      epoch_loss += lv;
      ++batches;
    }
    epoch_loss /= batches;
    detail::guard_numerics("consolidate", epoch, [&] {
      for (auto* p : state.l_params->all()) p->assert_finite("consolidation parameters");
      EpochRecord rec;
      rec.task = state.task_index - 1;
      rec.epoch = epoch;
      rec.phase = "consolidate";
      rec.loss = epoch_loss;
      rec.train_acc = detail::eval_accuracy(
          task.train_x, task.train_y, task.feature_shape, [&](const Tensor<T>& x) {
            return predict(state, x, PredictScope::AllClasses);
          });
      for (const auto* t : eval_tasks) rec.task_acc.push_back(evaluate_long_on_task(state, *t));
      log.records.push_back(rec);
      return 0;
    });

    if (epoch_loss < best_loss - 1e-5) {
      best_loss = epoch_loss;
      stale = 0;
    } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
      break;
    }
  }
  return log;
}

struct RunConfigs {
  NetworkSpec body;  // backbone without head sizing
  OptimizerConfig short_opt{0.01, 0.9, 1e-5, 40, 32, 10};
  OptimizerConfig long_opt{0.1, 0.9, 1e-5, 40, 32, 10};
  ConsolidationConfig consolidation{2.0, 0.8};
  EvalScope eval = EvalScope::ClassIncremental;
};

template <class T>
struct RunResult {
  CmnState<T> state;
  AccuracyMatrix matrix{1};
  TrainLog log;
  ParamReport params;
  std::vector<Rational> iteration_times;  // per task, train samples / batch
};

// Full memory-learning loop: for each task, L-S half-cycle then S-L
// consolidation (direct copy for the first task), then evaluate the L-Net on
// every task seen so far.
template <class T>
RunResult<T> run_sequence(const TaskSequence<T>& tasks, const RunConfigs& cfgs,
                          std::uint64_t seed) {
  tasks.validate();
  if (tasks.tasks.empty()) throw ValueError("run_sequence: empty task sequence");

  RunResult<T> result;
  result.state = make_cmn_state<T>(cfgs.body);
  result.matrix = AccuracyMatrix(static_cast<int>(tasks.tasks.size()));

  for (std::size_t k = 0; k < tasks.tasks.size(); ++k) {
    const auto& task = tasks.tasks[k];
    begin_task(result.state, task.class_count, derive_seed(seed, {1, k}));
    result.log.append(train_short_phase(result.state, task, cfgs.short_opt, seed));
    if (k == 0) {
      promote_first_task(result.state);
    } else {
      expand_long_head(result.state, task.class_count, derive_seed(seed, {2, k}));
      std::vector<const TaskDataset<T>*> seen;
      for (std::size_t j = 0; j <= k; ++j) seen.push_back(&tasks.tasks[j]);
      result.log.append(
          consolidate_phase(result.state, task, cfgs.long_opt, cfgs.consolidation, seed, seen));
      finish_consolidation(result.state);
    }
    for (std::size_t j = 0; j <= k; ++j)
      result.matrix.set(static_cast<int>(k), static_cast<int>(j),
                        evaluate_long_on_task(result.state, tasks.tasks[j],
                                              static_cast<int>(j), cfgs.eval));
    result.iteration_times.push_back(
        iteration_time(static_cast<long long>(task.train_x.size()), cfgs.short_opt.batch_size));
  }
  result.params = param_report(result.state);
  return result;
}

}  // namespace cmn
