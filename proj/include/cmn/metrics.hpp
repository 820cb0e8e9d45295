#pragma once

// Lifelong-learning evaluation metrics over the accuracy matrix R, where
// R[i][j] is the accuracy on task j after finishing task i. The lower
// triangle is mandatory; R[i-1][i] entries above the diagonal are optional
// and only needed for FWT.

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cmn/model.hpp"
#include "cmn/tensor.hpp"

namespace cmn {

struct AccuracyMatrix {
  std::vector<std::vector<std::optional<double>>> cells;

  AccuracyMatrix() = default;
  explicit AccuracyMatrix(int t) : cells(t, std::vector<std::optional<double>>(t)) {
    if (t < 1) throw ValueError("AccuracyMatrix: need at least one task");
  }

  int tasks() const { return static_cast<int>(cells.size()); }

  void set(int i, int j, double v) {
    if (v < 0.0 || v > 1.0)
      throw ValueError("AccuracyMatrix: entry " + std::to_string(v) + " outside [0, 1]");
    cells.at(i).at(j) = v;
  }

  double get(int i, int j) const {
    const auto& c = cells.at(i).at(j);
    if (!c)
      throw ValueError("AccuracyMatrix: missing entry R[" + std::to_string(i + 1) + "][" +
                       std::to_string(j + 1) + "]");
    return *c;
  }

  bool has(int i, int j) const { return cells.at(i).at(j).has_value(); }

  void require_lower_triangle() const {
    for (int i = 0; i < tasks(); ++i)
      for (int j = 0; j <= i; ++j) (void)get(i, j);
  }
};

struct BaselineAccuracies {
  std::vector<double> one;          // m_i, per-task individual training
  std::vector<double> joint;        // n_{i,i}, joint training on the union
  std::vector<double> random_init;  // b_i, untrained nets (for FWT)
};

// Mean of the final row: overall performance after the last task.
inline double acc(const AccuracyMatrix& r) {
  int t = r.tasks();
  double s = 0.0;
  for (int j = 0; j < t; ++j) s += r.get(t - 1, j);
  return s / t;
}

// Mean gap between final and just-trained accuracy on earlier tasks;
// negative values are forgetting.
inline double bwt(const AccuracyMatrix& r) {
  int t = r.tasks();
  if (t < 2) throw ValueError("bwt undefined for a single task");
  double s = 0.0;
  for (int i = 0; i < t - 1; ++i) s += r.get(t - 1, i) - r.get(i, i);
  return s / (t - 1);
}

// Mean gain on a task before training it, relative to a random-init net.
inline double fwt(const AccuracyMatrix& r, const std::vector<double>& random_init) {
  int t = r.tasks();
  if (t < 2) throw ValueError("fwt undefined for a single task");
  if (static_cast<int>(random_init.size()) != t)
    throw ValueError("fwt: expected " + std::to_string(t) + " random-init accuracies");
  double s = 0.0;
  for (int i = 1; i < t; ++i) s += r.get(i - 1, i) - random_init[i];
  return s / (t - 1);
}

// Anterograde-forgetting metric: cumulative gap against Joint on running
// average accuracy plus the gap against One on just-trained accuracy.
inline double af(const AccuracyMatrix& r, const BaselineAccuracies& base) {
  int t = r.tasks();
  if (t < 2) throw ValueError("af undefined for a single task");
  if (static_cast<int>(base.one.size()) != t || static_cast<int>(base.joint.size()) != t)
    throw ValueError("af: baseline vectors must have one entry per task");
  double joint_part = 0.0, one_part = 0.0;
  for (int i = 1; i < t; ++i) {
    double acc_i = 0.0;
    for (int j = 0; j <= i; ++j) acc_i += r.get(i, j);
    acc_i /= (i + 1);
    joint_part += acc_i - base.joint[i];
    one_part += r.get(i, i) - base.one[i];
  }
  return (joint_part + one_part) / (t - 1);
}

// Exact batches-per-epoch, kept as a reduced rational.
struct Rational {
  long long num = 0;
  long long den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

inline Rational iteration_time(long long samples, long long batch_size) {
  if (batch_size < 1) throw ValueError("iteration_time: batch_size must be >= 1");
  if (samples < 0) throw ValueError("iteration_time: negative sample count");
  long long g = std::gcd(samples, batch_size);
  if (g == 0) return {0, 1};
  return {samples / g, batch_size / g};
}

// Test-time vs training-time parameter counts. At test time only the L-Net
// runs; training adds the S-Net and every transfer cell.
struct ParamReport {
  std::int64_t test_params = 0;
  std::int64_t training_params = 0;
};

template <class T>
ParamReport param_report(const CmnState<T>& state) {
  ParamReport rep;
  if (state.l_params) rep.test_params = count_params(*state.l_params);
  rep.training_params = rep.test_params;
  if (state.s_params) rep.training_params += count_params(*state.s_params);
  for (const auto& c : state.cells)
    for (const auto* t : c.all()) rep.training_params += t->numel();
  return rep;
}

template <class T>
ParamReport param_report(const NetworkParams<T>& baseline_model) {
  auto n = count_params(baseline_model);
  return {n, n};
}

}  // namespace cmn
