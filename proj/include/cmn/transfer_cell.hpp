#pragma once

// The gated knowledge-transfer unit between corresponding L-Net and S-Net
// layers. Three stages per layer pair:
//   memory processing   h_vec = ReLU(P * eca(h_check))
//   recall gate         g     = sigmoid(El * GAP(h_check) + Es * GAP(h_tilde) + b)
//   memory integration  h_hat = h_tilde + g (x) h_vec
// Gate embeddings start at constant 1 and the bias at 0; P and the attention
// kernel use fan-in uniform init. Cells live for one task and are trained
// jointly with the S-Net.

#include <cstdint>
#include <string>
#include <vector>

#include "cmn/layers.hpp"
#include "cmn/tensor.hpp"

namespace cmn {

enum class TransferStrategy { Cell, None, Matrix, Direct };

inline TransferStrategy transfer_strategy_from_string(const std::string& s) {
  if (s == "cell") return TransferStrategy::Cell;
  if (s == "none") return TransferStrategy::None;
  if (s == "matrix") return TransferStrategy::Matrix;
  if (s == "direct") return TransferStrategy::Direct;
  throw ValueError("unknown transfer strategy: " + s);
}

template <class T>
struct TransferCell {
  EcaParams<T> eca;        // over the L-feature channels
  Tensor<T> proj;          // [Cl x Cs]
  Tensor<T> embed_long;    // [Cl x Cs], gate embedding for pooled L-feature
  Tensor<T> embed_short;   // [Cs x Cs], gate embedding for pooled S-feature
  Tensor<T> gate_bias;     // [Cs]

  int l_channels() const { return proj.shape()[0]; }
  int s_channels() const { return proj.shape()[1]; }

  std::vector<Tensor<T>*> all() {
    return {&eca.kernel, &proj, &embed_long, &embed_short, &gate_bias};
  }
  std::vector<const Tensor<T>*> all() const {
    return {&eca.kernel, &proj, &embed_long, &embed_short, &gate_bias};
  }
  void set_track(bool t) {
    for (auto* p : all()) p->set_track(t);
  }
};

template <class T>
TransferCell<T> make_transfer_cell(int l_channels, int s_channels, std::uint64_t seed) {
  Rng rng(seed);
  TransferCell<T> c;
  int k = eca_kernel_size(l_channels);
  c.eca.kernel = detail::init_tensor<T>({k}, k, InitScheme::fan_in_uniform(), rng, true);
  c.proj = detail::init_tensor<T>({l_channels, s_channels}, l_channels,
                                  InitScheme::fan_in_uniform(), rng, true);
  c.embed_long = Tensor<T>::full({l_channels, s_channels}, T(1), true);
  c.embed_short = Tensor<T>::full({s_channels, s_channels}, T(1), true);
  c.gate_bias = Tensor<T>::zeros({s_channels}, true);
  return c;
}

// Maps the L-Net feature into the S-Net feature space.
template <class T>
Tensor<T> memory_processing(const TransferCell<T>& cell, const Tensor<T>& h_check) {
  Tensor<T> attended = eca_attention(cell.eca, h_check);
  Tensor<T> projected = h_check.rank() == 3 ? channel_project(cell.proj, attended)
                                            : matmul(attended, cell.proj);
  return relu(projected);
}

// Per-channel gate in (0, 1) from the pooled features of both networks.
template <class T>
Tensor<T> recall_gate(const TransferCell<T>& cell, const Tensor<T>& h_check,
                      const Tensor<T>& h_tilde) {
  Tensor<T> pl = h_check.rank() == 3 ? global_avg_pool(h_check) : h_check;
  Tensor<T> ps = h_tilde.rank() == 3 ? global_avg_pool(h_tilde) : h_tilde;
  return sigmoid(add(add(matmul(pl, cell.embed_long), matmul(ps, cell.embed_short)),
                     cell.gate_bias));
}

// h_hat = h_tilde + g (x) h_vec, gate broadcast over spatial dims.
template <class T>
Tensor<T> memory_integration(const Tensor<T>& h_tilde, const Tensor<T>& g,
                             const Tensor<T>& h_vec) {
  if (h_tilde.shape() != h_vec.shape())
    throw ShapeError("memory_integration: feature shapes differ, " +
                     shape_str(h_tilde.shape()) + " vs " + shape_str(h_vec.shape()));
  return add(h_tilde, mul(g, h_vec));
}

template <class T>
Tensor<T> apply_transfer(const TransferCell<T>& cell, const Tensor<T>& h_check,
                         const Tensor<T>& h_tilde, TransferStrategy strategy) {
  switch (strategy) {
    case TransferStrategy::None:
      return h_tilde;
    case TransferStrategy::Direct:
      return add(h_tilde, h_check);
    case TransferStrategy::Matrix: {
      // PNN-style lateral adapter: bare linear projection, no gate/attention.
      Tensor<T> lateral = h_check.rank() == 3 ? channel_project(cell.proj, h_check)
                                              : matmul(h_check, cell.proj);
      return add(h_tilde, lateral);
    }
    case TransferStrategy::Cell: {
      Tensor<T> h_vec = memory_processing(cell, h_check);
      Tensor<T> g = recall_gate(cell, h_check, h_tilde);
      return memory_integration(h_tilde, g, h_vec);
    }
  }
  throw ValueError("unknown transfer strategy");
}

// S-Net forward with one cell after every hidden layer. The L-Net must be
// structurally frozen (untracked parameters): its features enter the graph as
// constants and no gradient path into it exists. bypass skips every cell and
// is bit-identical to forward_plain.
template <class T>
ForwardResult<T> transfer_forward(const std::vector<TransferCell<T>>& cells,
                                  const NetworkParams<T>& s_params,
                                  const NetworkParams<T>& l_params, const Tensor<T>& x,
                                  bool bypass = false,
                                  TransferStrategy strategy = TransferStrategy::Cell) {
  if (bypass || strategy == TransferStrategy::None) return forward_plain(s_params, x);
  for (auto* p : l_params.all())
    if (p->tracked())
      throw ValueError("transfer_forward: L-Net parameters must be frozen");
  bool needs_cells = strategy == TransferStrategy::Cell || strategy == TransferStrategy::Matrix;
  if (needs_cells && cells.size() != s_params.spec.layers.size())
    throw ValueError("transfer_forward: " + std::to_string(cells.size()) + " cells for " +
                     std::to_string(s_params.spec.layers.size()) + " hidden layers");
  if (l_params.spec.layers.size() != s_params.spec.layers.size())
    throw ValueError("transfer_forward: L/S hidden layer counts differ");

  ForwardResult<T> l_run = forward_plain(l_params, x);

  ForwardResult<T> r;
  Tensor<T> h = x;
  for (std::size_t i = 0; i < s_params.spec.layers.size(); ++i) {
    Tensor<T> h_tilde = detail::apply_layer(s_params, i, h);
    Tensor<T> h_check = l_run.hidden[i];
    Tensor<T> merged = strategy == TransferStrategy::Direct
                           ? add(h_tilde, h_check)
                           : apply_transfer(cells[i], h_check, h_tilde, strategy);
    r.hidden.push_back(merged);
    h = merged;
  }
  r.logits = detail::apply_head(s_params, h);
  return r;
}

}  // namespace cmn
