#pragma once

// Dual knowledge distillation for the S-L transform half-cycle: a memory
// preservation loss over the old-class logit slice, a hybrid hard/soft loss
// bringing in the S-Net's new-task knowledge, and their sum. The frozen
// network is always the teacher; the new L-Net is the student.

#include <cmath>
#include <string>
#include <vector>

#include "cmn/tensor.hpp"

namespace cmn {

struct ConsolidationConfig {
  double temperature = 2.0;
  double beta = 0.8;

  void validate() const {
    if (temperature <= 0.0) throw ValueError("consolidation.temperature must be > 0");
    if (beta < 0.0 || beta > 1.0) throw ValueError("consolidation.beta must be in [0, 1]");
  }
};

inline constexpr double kCrossEntropyEps = 1e-12;

namespace detail {

template <class T>
void require_distribution(const Tensor<T>& t, const char* which) {
  int rows = t.rank() == 2 ? t.shape()[0] : 1;
  int cols = t.rank() == 2 ? t.shape()[1] : t.shape()[0];
  for (int r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      double v = static_cast<double>(t.data()[static_cast<std::size_t>(r) * cols + j]);
      if (v < 0.0)
        throw ValueError(std::string(which) + " has a negative entry in row " + std::to_string(r));
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw ValueError(std::string(which) + " row " + std::to_string(r) +
                       " sums to " + std::to_string(sum) + ", not 1");
  }
}

}  // namespace detail

// -sum(target * log(pred + eps)), mean over batch rows. First argument is the
// fixed teacher, second the trainable student.
template <class T>
Tensor<T> cross_entropy_soft(const Tensor<T>& target, const Tensor<T>& pred) {
  if (target.shape() != pred.shape())
    throw ShapeError("cross_entropy_soft: shapes differ, " + shape_str(target.shape()) +
                     " vs " + shape_str(pred.shape()));
  detail::require_distribution(target, "cross_entropy_soft target");
  detail::require_distribution(pred, "cross_entropy_soft prediction");
  int rows = target.rank() == 2 ? target.shape()[0] : 1;
  auto nll = sum_all(mul(target, log_eps(pred, static_cast<T>(kCrossEntropyEps))));
  return scale(nll, static_cast<T>(-1.0 / rows));
}

// Long-term distillation: keeps the new L-Net's old-class distribution close to the frozen
// snapshot's, on current-task data only. l_old_logits span the old classes;
// the student is the matching leading slice of the new head.
template <class T>
Tensor<T> loss_dis_long(const Tensor<T>& l_new_logits, const Tensor<T>& l_old_logits,
                        const ConsolidationConfig& cfg) {
  cfg.validate();
  int new_cols = l_new_logits.rank() == 2 ? l_new_logits.shape()[1] : l_new_logits.shape()[0];
  int old_cols = l_old_logits.rank() == 2 ? l_old_logits.shape()[1] : l_old_logits.shape()[0];
  if (old_cols > new_cols)
    throw ShapeError("loss_dis_long: old head (" + std::to_string(old_cols) +
                     ") wider than new head (" + std::to_string(new_cols) + ")");
  auto teacher = softmax_t(l_old_logits, cfg.temperature);
  auto student = softmax_t(slice_cols(l_new_logits, 0, old_cols), cfg.temperature);
  return cross_entropy_soft(teacher, student);
}

// Short-term distillation: (1-beta) * hard CE over the full head with global labels
//        + beta * T^2 * soft CE against the S-Net on the new-class slice.
template <class T>
Tensor<T> loss_dis_short(const Tensor<T>& l_new_logits, const Tensor<T>& s_logits,
                         const std::vector<int>& labels, const ConsolidationConfig& cfg) {
  cfg.validate();
  int rows = l_new_logits.rank() == 2 ? l_new_logits.shape()[0] : 1;
  int total = l_new_logits.rank() == 2 ? l_new_logits.shape()[1] : l_new_logits.shape()[0];
  int ck = s_logits.rank() == 2 ? s_logits.shape()[1] : s_logits.shape()[0];
  int new_start = total - ck;
  if (new_start < 0)
    throw ShapeError("loss_dis_short: S-Net head wider than L-Net head");
  if (static_cast<int>(labels.size()) != rows)
    throw ShapeError("loss_dis_short: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  for (int r = 0; r < rows; ++r)
    if (labels[r] < new_start || labels[r] >= total)
      throw ValueError("loss_dis_short: label " + std::to_string(labels[r]) + " at row " +
                       std::to_string(r) + " outside task range [" +
                       std::to_string(new_start) + ", " + std::to_string(total) + ")");

  std::vector<T> onehot(static_cast<std::size_t>(rows) * total, T(0));
  for (int r = 0; r < rows; ++r)
    onehot[static_cast<std::size_t>(r) * total + labels[r]] = T(1);
  auto targets = Tensor<T>::from(l_new_logits.shape(), std::move(onehot));

  auto hard = cross_entropy_soft(targets, softmax_t(l_new_logits, 1.0));
  auto teacher = softmax_t(s_logits, cfg.temperature);
  auto student = softmax_t(slice_cols(l_new_logits, new_start, total), cfg.temperature);
  auto soft = cross_entropy_soft(teacher, student);
  double t2 = cfg.temperature * cfg.temperature;
  return add(scale(hard, static_cast<T>(1.0 - cfg.beta)),
             scale(soft, static_cast<T>(cfg.beta * t2)));
}

// Combined consolidation loss: sum of the two distillation terms.
template <class T>
Tensor<T> loss_total(const Tensor<T>& l_new_logits, const Tensor<T>& l_old_logits,
                     const Tensor<T>& s_logits, const std::vector<int>& labels,
                     const ConsolidationConfig& cfg) {
  return add(loss_dis_long(l_new_logits, l_old_logits, cfg),
             loss_dis_short(l_new_logits, s_logits, labels, cfg));
}

}  // namespace cmn
