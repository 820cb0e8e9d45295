#pragma once

// Lifecycle of the dual-network system: per-task S-Net creation, L-Net head
// growth, the freezing discipline between half-cycles and first-task
// bootstrapping. The L-Net is the only network used at test time.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmn/digest.hpp"
#include "cmn/layers.hpp"
#include "cmn/transfer_cell.hpp"

namespace cmn {

enum class PredictScope { AllClasses, Task };

template <class T>
struct CmnState {
  NetworkSpec body;  // backbone without a head; head dims are set per network
  std::optional<NetworkParams<T>> l_params;
  std::optional<NetworkParams<T>> s_params;
  std::optional<NetworkParams<T>> l_old_snapshot;  // pre-expansion L-Net, long-term distillation teacher
  std::vector<TransferCell<T>> cells;
  int task_index = 0;  // tasks begun so far
  bool task_open = false;
  std::vector<std::pair<int, int>> class_offsets;  // [start, end) per task

  int consolidated_classes() const {
    return l_params ? l_params->spec.head_dim : 0;
  }
};

template <class T>
CmnState<T> make_cmn_state(NetworkSpec body) {
  CmnState<T> s;
  body.head_dim = 1;  // placeholder; real heads are sized per task
  body.validate();
  s.body = std::move(body);
  return s;
}

namespace detail {

inline NetworkSpec with_head(NetworkSpec body, int head_dim) {
  body.head_dim = head_dim;
  body.validate();
  return body;
}

}  // namespace detail

// Opens task k: fresh S-Net with a C_k head, fresh transfer cells (absent for
// the first task) and a frozen L-Net.
template <class T>
void begin_task(CmnState<T>& state, int c_k, std::uint64_t seed) {
  if (c_k < 1) throw ValueError("begin_task: class count must be >= 1");
  if (state.task_open) throw ValueError("begin_task called mid-phase; consolidate first");
  int k = state.task_index;
  int start = state.class_offsets.empty() ? 0 : state.class_offsets.back().second;
  state.class_offsets.emplace_back(start, start + c_k);

  state.s_params = init_params<T>(detail::with_head(state.body, c_k),
                                  InitScheme::fan_in_uniform(), derive_seed(seed, {7, (std::uint64_t)k}));
  state.cells.clear();
  if (k > 0) {
    if (!state.l_params) throw ValueError("begin_task: missing L-Net after first task");
    state.l_params->set_track(false);
    for (std::size_t i = 0; i < state.body.layers.size(); ++i) {
      int lc = state.l_params->spec.layers[i].out;
      int sc = state.s_params->spec.layers[i].out;
      state.cells.push_back(
          make_transfer_cell<T>(lc, sc, derive_seed(seed, {11, (std::uint64_t)k, i})));
    }
  }
  state.task_open = true;
  state.task_index = k + 1;
}

// Current-task logits (C_k wide): the transfer path after the first task,
// plain S-Net forward before any long-term memory exists.
template <class T>
Tensor<T> forward_short(const CmnState<T>& state, const Tensor<T>& x) {
  if (!state.s_params) throw ValueError("forward_short: no active S-Net");
  if (state.cells.empty()) return forward_plain(*state.s_params, x).logits;
  return transfer_forward(state.cells, *state.s_params, *state.l_params, x).logits;
}

// Grows the L-Net head by c_k outputs. Existing head weights are copied
// bit-exactly; new columns draw fan-in uniform, new biases start at zero.
template <class T>
void expand_long_head(CmnState<T>& state, int c_k, std::uint64_t seed) {
  if (c_k < 1) throw ValueError("expand_long_head: class count must be >= 1");
  if (!state.l_params) throw ValueError("expand_long_head: no L-Net");
  state.l_old_snapshot = state.l_params->clone();
  state.l_old_snapshot->set_track(false);
  auto& l = *state.l_params;
  int head_in = l.spec.head_in;
  int old_dim = l.spec.head_dim;
  int new_dim = old_dim + c_k;

  Rng rng(derive_seed(seed, {13, (std::uint64_t)new_dim}));
  double bound = std::sqrt(6.0 / head_in);
  std::vector<T> w(static_cast<std::size_t>(head_in) * new_dim);
  for (int r = 0; r < head_in; ++r) {
    for (int j = 0; j < old_dim; ++j)
      w[static_cast<std::size_t>(r) * new_dim + j] = l.head_w.data()[static_cast<std::size_t>(r) * old_dim + j];
    for (int j = old_dim; j < new_dim; ++j)
      w[static_cast<std::size_t>(r) * new_dim + j] = static_cast<T>(rng.uniform(-bound, bound));
  }
  std::vector<T> b(static_cast<std::size_t>(new_dim), T(0));
  for (int j = 0; j < old_dim; ++j) b[static_cast<std::size_t>(j)] = l.head_b.data()[static_cast<std::size_t>(j)];

  bool tracked = l.head_w.tracked();
  l.spec.head_dim = new_dim;
  l.head_w = Tensor<T>::from({head_in, new_dim}, std::move(w), tracked);
  l.head_b = Tensor<T>::from({new_dim}, std::move(b), tracked);
}

// First-task consolidation: the L-Net is born as a bit-exact copy of the
// trained S-Net. With no old memory to preserve, distilling into a fresh net
// would only approximate this copy.
template <class T>
void promote_first_task(CmnState<T>& state) {
  if (state.task_index != 1)
    throw ValueError("promote_first_task: only valid after the first task, k=" +
                     std::to_string(state.task_index));
  if (!state.s_params) throw ValueError("promote_first_task: no trained S-Net");
  state.l_params = state.s_params->clone();
  state.l_params->set_track(false);
  state.task_open = false;
}

// Marks the S-L half-cycle finished (used by the trainer after distillation).
template <class T>
void finish_consolidation(CmnState<T>& state) {
  if (!state.task_open) throw ValueError("finish_consolidation: no open task");
  state.l_params->set_track(false);
  state.l_old_snapshot.reset();
  state.task_open = false;
}

// Argmax over the L-Net head, either across all consolidated classes or
// restricted to one task's slice. Ties resolve to the lowest index.
template <class T>
int predict(const CmnState<T>& state, const Tensor<T>& x, PredictScope scope,
            int task = -1) {
  if (!state.l_params) throw ValueError("predict: no L-Net yet");
  auto logits = forward_plain(*state.l_params, x).logits;
  int lo = 0, hi = static_cast<int>(logits.numel());
  if (scope == PredictScope::Task) {
    if (task < 0 || task >= static_cast<int>(state.class_offsets.size()))
      throw ValueError("predict: unknown task index " + std::to_string(task));
    lo = state.class_offsets[static_cast<std::size_t>(task)].first;
    hi = std::min(hi, state.class_offsets[static_cast<std::size_t>(task)].second);
  }
  int best = lo;
  for (int j = lo + 1; j < hi; ++j)
    if (logits.data()[static_cast<std::size_t>(j)] > logits.data()[static_cast<std::size_t>(best)]) best = j;
  return best;
}

template <class T>
std::uint64_t digest_state_cells(const CmnState<T>& state) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& c : state.cells)
    for (const auto* t : c.all()) h = digest_values(t->data(), h);
  return h;
}

}  // namespace cmn
