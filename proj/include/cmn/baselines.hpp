#pragma once

// Reference learners for the metric suite (One, Joint, fine-tuning, scratch)
// and the two-task transfer-strategy ablation. Baselines share the CMN run's
// data order and, where a comparison is controlled, its initialization seeds.

#include <cstdint>
#include <string>
#include <vector>

#include "cmn/trainer.hpp"

namespace cmn {

enum class BaselineKind { One, Joint, Finetune, Scratch };

inline BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "one") return BaselineKind::One;
  if (s == "joint") return BaselineKind::Joint;
  if (s == "finetune") return BaselineKind::Finetune;
  if (s == "scratch") return BaselineKind::Scratch;
  throw ValueError("unknown baseline kind: " + s);
}

template <class T>
struct BaselineResult {
  std::vector<double> per_task;  // m_i (one/scratch), n_{i,i} (joint), R[i][i] (finetune)
  AccuracyMatrix matrix{1};      // filled for finetune only
  std::int64_t model_params = 0;
};

namespace detail {

// Same init stream as begin_task, so One/Joint/finetune share the CMN S-Net's
// initial parameters for a controlled comparison.
inline std::uint64_t snet_init_seed(std::uint64_t seed, std::size_t task_index) {
  return derive_seed(derive_seed(seed, {1, task_index}), {7, (std::uint64_t)task_index});
}

// Minimal supervised fit with the short-phase update rule. Labels are given
// as global ids; label_offset shifts them into head range. When an L-Net and
// strategy are supplied the forward pass goes through the transfer path.
template <class T>
std::vector<double> fit_classifier(NetworkParams<T>& net, const TaskDataset<T>& task,
                                   int label_offset, const OptimizerConfig& cfg,
                                   std::uint64_t stream_seed,
                                   const NetworkParams<T>* l_net = nullptr,
                                   std::vector<TransferCell<T>>* cells = nullptr,
                                   TransferStrategy strategy = TransferStrategy::None) {
  cfg.validate();
  if (task.train_x.empty()) throw ValueError("fit_classifier: empty dataset");

  net.set_track(true);
  std::vector<Tensor<T>*> params = net.all();
  if (cells && strategy != TransferStrategy::None && strategy != TransferStrategy::Direct) {
    for (auto& c : *cells) {
      c.set_track(true);
      for (auto* t : c.all()) params.push_back(t);
    }
  }
  SgdOptimizer<T> opt(cfg, params);

  std::vector<TransferCell<T>> no_cells;
  auto forward = [&](const Tensor<T>& x) {
    if (!l_net || strategy == TransferStrategy::None)
      return forward_plain(net, x).logits;
    return transfer_forward(cells ? *cells : no_cells, net, *l_net, x, false, strategy).logits;
  };

  bool batched = task.feature_shape.size() == 1;
  int dim = batched ? task.feature_shape[0] : 0;
  std::vector<std::size_t> idx(task.train_x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng shuffle_rng(stream_seed);

  std::vector<double> curve;
  double best_loss = 1e300;
  int stale = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(idx.begin(), idx.end(), shuffle_rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t from = 0; from < idx.size(); from += cfg.batch_size) {
      std::size_t to = std::min(idx.size(), from + cfg.batch_size);
      double lv = guard_numerics("baseline", epoch, [&] {
        Tensor<T> loss;
        if (batched) {
          auto x = make_batch(task.train_x, idx, from, to, dim);
          std::vector<int> labels;
          for (std::size_t i = from; i < to; ++i) labels.push_back(task.train_y[idx[i]] - label_offset);
          loss = hard_ce(forward(x), labels);
        } else {
          Tensor<T> acc;
          for (std::size_t i = from; i < to; ++i) {
            auto x = Tensor<T>::from(task.feature_shape, task.train_x[idx[i]]);
            auto one = hard_ce(forward(x), {task.train_y[idx[i]] - label_offset});
            acc = acc.valid() ? add(acc, one) : one;
          }
          loss = scale(acc, static_cast<T>(1.0 / static_cast<double>(to - from)));
        }
        double v = static_cast<double>(loss.item());
        if (diverged(v)) throw DivergenceError("baseline", epoch, "loss " + std::to_string(v));
        loss.backward();
        opt.step();
        return v;
      });
      epoch_loss += lv;
      ++batches;
    }
    epoch_loss /= batches;
    guard_numerics("baseline", epoch, [&] {
      for (auto* p : params) p->assert_finite("baseline parameters");
      curve.push_back(eval_accuracy(task.test_x, task.test_y, task.feature_shape,
                                    [&](const Tensor<T>& x) {
                                      return label_offset + argmax(forward(x));
                                    }));
      return 0;
    });

    if (epoch_loss < best_loss - 1e-5) {
      best_loss = epoch_loss;
      stale = 0;
    } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
      break;
    }
  }
  return curve;
}

// Accuracy with predictions taken over the head slice [lo, hi), or the full
// head when the range is unset (hi <= lo).
template <class T>
double net_accuracy(const NetworkParams<T>& net, const TaskDataset<T>& task, int label_offset,
                    int lo = 0, int hi = 0) {
  return eval_accuracy(task.test_x, task.test_y, task.feature_shape, [&](const Tensor<T>& x) {
    auto logits = forward_plain(net, x).logits;
    int a = 0, b = static_cast<int>(logits.numel());
    if (hi > lo) {
      a = lo;
      b = std::min(b, hi);
    }
    int best = a;
    for (int j = a + 1; j < b; ++j)
      if (logits.data()[static_cast<std::size_t>(j)] > logits.data()[static_cast<std::size_t>(best)])
        best = j;
    return label_offset + best;
  });
}

// Expands a plain classifier head, copying old columns (finetune baseline).
template <class T>
void expand_net_head(NetworkParams<T>& net, int c_k, std::uint64_t seed) {
  int head_in = net.spec.head_in;
  int old_dim = net.spec.head_dim;
  int new_dim = old_dim + c_k;
  Rng rng(derive_seed(seed, {13, (std::uint64_t)new_dim}));
  double bound = std::sqrt(6.0 / head_in);
  std::vector<T> w(static_cast<std::size_t>(head_in) * new_dim);
  for (int r = 0; r < head_in; ++r) {
    for (int j = 0; j < old_dim; ++j)
      w[static_cast<std::size_t>(r) * new_dim + j] =
          net.head_w.data()[static_cast<std::size_t>(r) * old_dim + j];
    for (int j = old_dim; j < new_dim; ++j)
      w[static_cast<std::size_t>(r) * new_dim + j] = static_cast<T>(rng.uniform(-bound, bound));
  }
  std::vector<T> b(static_cast<std::size_t>(new_dim), T(0));
  for (int j = 0; j < old_dim; ++j) b[static_cast<std::size_t>(j)] = net.head_b.data()[static_cast<std::size_t>(j)];
  net.spec.head_dim = new_dim;
  net.head_w = Tensor<T>::from({head_in, new_dim}, std::move(w), true);
  net.head_b = Tensor<T>::from({new_dim}, std::move(b), true);
}

}  // namespace detail

template <class T>
BaselineResult<T> run_baseline(BaselineKind kind, const TaskSequence<T>& tasks,
                               const RunConfigs& cfgs, std::uint64_t seed) {
  tasks.validate();
  if (tasks.tasks.empty()) throw ValueError("run_baseline: empty task sequence");
  BaselineResult<T> result;
  int t = static_cast<int>(tasks.tasks.size());

  switch (kind) {
    case BaselineKind::One:
    case BaselineKind::Scratch: {
      for (std::size_t k = 0; k < tasks.tasks.size(); ++k) {
        const auto& task = tasks.tasks[k];
        std::uint64_t init_seed = kind == BaselineKind::One
                                      ? detail::snet_init_seed(seed, k)
                                      : derive_seed(seed, {0x73u, k});
        auto net = init_params<T>(detail::with_head(cfgs.body, task.class_count),
                                  InitScheme::fan_in_uniform(), init_seed);
        detail::fit_classifier(net, task, task.class_start, cfgs.short_opt,
                               derive_seed(seed, {0x5348u, k + 1}));
        result.per_task.push_back(detail::net_accuracy(net, task, task.class_start));
        result.model_params = count_params(net);
      }
      break;
    }
    case BaselineKind::Joint: {
      // One net, full head, trained on the union of every task's train set.
      TaskDataset<T> pooled;
      pooled.feature_shape = tasks.tasks[0].feature_shape;
      pooled.class_start = 0;
      pooled.class_count = tasks.total_classes;
      for (const auto& task : tasks.tasks) {
        pooled.train_x.insert(pooled.train_x.end(), task.train_x.begin(), task.train_x.end());
        pooled.train_y.insert(pooled.train_y.end(), task.train_y.begin(), task.train_y.end());
      }
      pooled.test_x = pooled.train_x;
      pooled.test_y = pooled.train_y;
      auto net = init_params<T>(detail::with_head(cfgs.body, tasks.total_classes),
                                InitScheme::fan_in_uniform(), detail::snet_init_seed(seed, 0));
      detail::fit_classifier(net, pooled, 0, cfgs.short_opt, derive_seed(seed, {0x5348u, 1}));
      for (const auto& task : tasks.tasks)
        result.per_task.push_back(detail::net_accuracy(net, task, 0));
      result.model_params = count_params(net);
      break;
    }
    case BaselineKind::Finetune: {
      result.matrix = AccuracyMatrix(t);
      auto net = init_params<T>(detail::with_head(cfgs.body, tasks.tasks[0].class_count),
                                InitScheme::fan_in_uniform(), detail::snet_init_seed(seed, 0));
      for (std::size_t k = 0; k < tasks.tasks.size(); ++k) {
        const auto& task = tasks.tasks[k];
        if (k > 0) detail::expand_net_head(net, task.class_count, derive_seed(seed, {2, k}));
        // Global labels over the full head, same data order as the CMN run.
        detail::fit_classifier(net, task, 0, cfgs.short_opt, derive_seed(seed, {0x5348u, k + 1}));
        for (std::size_t j = 0; j <= k; ++j) {
          const auto& tj = tasks.tasks[j];
          int lo = 0, hi = 0;
          if (cfgs.eval == EvalScope::TaskAware) {
            lo = tj.class_start;
            hi = tj.class_start + tj.class_count;
          }
          result.matrix.set(static_cast<int>(k), static_cast<int>(j),
                            detail::net_accuracy(net, tj, 0, lo, hi));
        }
        result.per_task.push_back(result.matrix.get(static_cast<int>(k), static_cast<int>(k)));
      }
      result.model_params = count_params(net);
      break;
    }
  }
  return result;
}

// Mean test accuracy of untrained seeded nets, the b_i reference for FWT.
template <class T>
std::vector<double> random_init_accuracies(const TaskSequence<T>& tasks, const RunConfigs& cfgs,
                                           std::uint64_t seed, int inits = 5) {
  std::vector<double> out;
  for (std::size_t k = 0; k < tasks.tasks.size(); ++k) {
    const auto& task = tasks.tasks[k];
    double acc = 0.0;
    for (int i = 0; i < inits; ++i) {
      auto net = init_params<T>(detail::with_head(cfgs.body, task.class_count),
                                InitScheme::fan_in_uniform(), derive_seed(seed, {0x62u, k, (std::uint64_t)i}));
      acc += detail::net_accuracy(net, task, task.class_start);
    }
    out.push_back(acc / inits);
  }
  return out;
}

struct AblationResult {
  std::vector<double> curve;  // per-epoch target-task test accuracy
  double final_acc = 0.0;
};

// Two-task transfer-strategy ablation: train a source net, then learn the
// target task through the chosen transfer strategy.
template <class T>
AblationResult run_transfer_ablation(TransferStrategy strategy, const TaskSequence<T>& tasks,
                                     const RunConfigs& cfgs, std::uint64_t seed) {
  tasks.validate();
  if (tasks.tasks.size() != 2)
    throw ValueError("run_transfer_ablation: exactly two tasks (source, target) required");
  const auto& source = tasks.tasks[0];
  const auto& target = tasks.tasks[1];

  auto l_net = init_params<T>(detail::with_head(cfgs.body, source.class_count),
                              InitScheme::fan_in_uniform(), detail::snet_init_seed(seed, 0));
  detail::fit_classifier(l_net, source, source.class_start, cfgs.short_opt,
                         derive_seed(seed, {0x5348u, 1}));
  l_net.set_track(false);

  auto s_net = init_params<T>(detail::with_head(cfgs.body, target.class_count),
                              InitScheme::fan_in_uniform(), detail::snet_init_seed(seed, 1));
  std::vector<TransferCell<T>> cells;
  for (std::size_t i = 0; i < cfgs.body.layers.size(); ++i)
    cells.push_back(make_transfer_cell<T>(l_net.spec.layers[i].out, s_net.spec.layers[i].out,
                                          derive_seed(derive_seed(seed, {1, 1}), {11, 1, i})));

  AblationResult res;
  res.curve = detail::fit_classifier(s_net, target, target.class_start, cfgs.short_opt,
                                     derive_seed(seed, {0x5348u, 2}), &l_net, &cells, strategy);
  res.final_acc = res.curve.empty() ? 0.0 : res.curve.back();
  return res;
}

}  // namespace cmn
