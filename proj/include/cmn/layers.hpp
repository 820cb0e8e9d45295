#pragma once

// Layer descriptors, parameter stores, initialization and the plain forward
// pass shared by every network in the framework. Two desk-scale backbones are
// provided: TinyMLP (linear + ReLU stacks) and TinyConv (3x3 conv blocks with
// global average pooling before the head).

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cmn/rng.hpp"
#include "cmn/tensor.hpp"

namespace cmn {

enum class LayerKind { Linear, ConvBlock };

struct LayerSpec {
  LayerKind kind = LayerKind::Linear;
  int in = 0;   // input dim (Linear) or input channels (ConvBlock)
  int out = 0;  // output dim / channels
  int kernel = 3;
  int pad = 1;
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;  // hidden layers; the head is separate
  int head_in = 0;
  int head_dim = 0;

  void validate() const {
    if (head_dim < 1) throw ValueError("NetworkSpec: head_dim must be >= 1");
    int prev = layers.empty() ? head_in : layers.front().in;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].in != prev)
        throw ValueError("NetworkSpec: layer " + std::to_string(i) + " input dim " +
                         std::to_string(layers[i].in) + " does not chain from " +
                         std::to_string(prev));
      prev = layers[i].out;
    }
    if (!layers.empty() && head_in != prev)
      throw ValueError("NetworkSpec: head input " + std::to_string(head_in) +
                       " does not chain from last layer output " + std::to_string(prev));
  }

  static NetworkSpec tiny_mlp(int input_dim, int width, int head_dim, int depth = 2) {
    NetworkSpec s;
    int prev = input_dim;
    for (int i = 0; i < depth; ++i) {
      s.layers.push_back({LayerKind::Linear, prev, width});
      prev = width;
    }
    s.head_in = prev;
    s.head_dim = head_dim;
    s.validate();
    return s;
  }

  static NetworkSpec tiny_conv(int in_channels, int channels, int head_dim) {
    NetworkSpec s;
    s.layers.push_back({LayerKind::ConvBlock, in_channels, channels, 3, 1});
    s.layers.push_back({LayerKind::ConvBlock, channels, channels, 3, 1});
    s.head_in = channels;  // after global average pooling
    s.head_dim = head_dim;
    s.validate();
    return s;
  }
};

struct InitScheme {
  enum Kind { FanInUniform, Constant } kind = FanInUniform;
  double value = 0.0;

  static InitScheme fan_in_uniform() { return {FanInUniform, 0.0}; }
  static InitScheme constant(double c) { return {Constant, c}; }
};

namespace detail {

template <class T>
Tensor<T> init_tensor(Shape shape, int fan_in, const InitScheme& scheme, Rng& rng, bool track) {
  auto n = shape_numel(shape);
  std::vector<T> v(static_cast<std::size_t>(n));
  if (scheme.kind == InitScheme::Constant) {
    for (auto& x : v) x = static_cast<T>(scheme.value);
  } else {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  }
  return Tensor<T>::from(std::move(shape), std::move(v), track);
}

}  // namespace detail

template <class T>
struct NetworkParams {
  NetworkSpec spec;
  std::vector<Tensor<T>> weights;  // per hidden layer
  std::vector<Tensor<T>> biases;
  Tensor<T> head_w;
  Tensor<T> head_b;

  std::vector<Tensor<T>*> all() {
    std::vector<Tensor<T>*> out;
    for (auto& w : weights) out.push_back(&w);
    for (auto& b : biases) out.push_back(&b);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }
  std::vector<const Tensor<T>*> all() const {
    std::vector<const Tensor<T>*> out;
    for (auto& w : weights) out.push_back(&w);
    for (auto& b : biases) out.push_back(&b);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }

  void set_track(bool t) {
    for (auto* p : all()) p->set_track(t);
  }

  NetworkParams clone() const {
    NetworkParams c;
    c.spec = spec;
    for (auto& w : weights) c.weights.push_back(w.detached());
    for (auto& b : biases) c.biases.push_back(b.detached());
    c.head_w = head_w.detached();
    c.head_b = head_b.detached();
    return c;
  }
};

// Deterministic given (spec, scheme, seed). Under fan-in uniform the weights
// draw U(-sqrt(6/fan_in), +sqrt(6/fan_in)) and biases start at zero.
template <class T>
NetworkParams<T> init_params(const NetworkSpec& spec, const InitScheme& scheme,
                             std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  NetworkParams<T> p;
  p.spec = spec;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::Linear) {
      p.weights.push_back(detail::init_tensor<T>({l.in, l.out}, l.in, scheme, rng, true));
    } else {
      p.weights.push_back(
          detail::init_tensor<T>({l.out, l.in, l.kernel, l.kernel}, l.in * l.kernel * l.kernel,
                                 scheme, rng, true));
    }
    InitScheme bias_scheme = scheme.kind == InitScheme::Constant ? scheme : InitScheme::constant(0.0);
    p.biases.push_back(detail::init_tensor<T>({l.out}, 1, bias_scheme, rng, true));
  }
  p.head_w = detail::init_tensor<T>({spec.head_in, spec.head_dim}, spec.head_in, scheme, rng, true);
  InitScheme bias_scheme = scheme.kind == InitScheme::Constant ? scheme : InitScheme::constant(0.0);
  p.head_b = detail::init_tensor<T>({spec.head_dim}, 1, bias_scheme, rng, true);
  return p;
}

template <class T>
std::int64_t count_params(const NetworkParams<T>& p) {
  std::int64_t n = 0;
  for (auto* t : p.all()) n += t->numel();
  return n;
}

template <class T>
struct ForwardResult {
  Tensor<T> logits;
  std::vector<Tensor<T>> hidden;  // post-activation output of every hidden layer
};

namespace detail {

template <class T>
Tensor<T> apply_head(const NetworkParams<T>& p, Tensor<T> h) {
  if (h.rank() == 3) h = global_avg_pool(h);
  return add(matmul(h, p.head_w), p.head_b);
}

template <class T>
Tensor<T> apply_layer(const NetworkParams<T>& p, std::size_t i, const Tensor<T>& h) {
  const auto& l = p.spec.layers[i];
  if (l.kind == LayerKind::Linear) return relu(add(matmul(h, p.weights[i]), p.biases[i]));
  return relu(add(conv2d(h, p.weights[i], l.pad), p.biases[i]));
}

}  // namespace detail

// Plain stacked forward: h_l = ReLU(W_l h_{l-1} + b_l), raw logits from the
// head. All hidden activations are returned; the transfer cells tap them.
template <class T>
ForwardResult<T> forward_plain(const NetworkParams<T>& p, const Tensor<T>& x) {
  ForwardResult<T> r;
  Tensor<T> h = x;
  for (std::size_t i = 0; i < p.spec.layers.size(); ++i) {
    h = detail::apply_layer(p, i, h);
    r.hidden.push_back(h);
  }
  r.logits = detail::apply_head(p, h);
  return r;
}

// -- efficient channel attention ---------------------------------------------

template <class T>
struct EcaParams {
  Tensor<T> kernel;  // odd-length 1-D kernel over the channel axis
};

// Adaptive kernel size: nearest odd >= 3 to |log2(C)/2 + 1/2|, clamped so it
// never exceeds the channel count (floor 3; a length-3 kernel zero-pads fine
// even for C < 3).
inline int eca_kernel_size(int channels) {
  if (channels < 1) throw ValueError("eca_kernel_size: channels must be >= 1");
  double t = std::abs(std::log2(static_cast<double>(channels)) / 2.0 + 0.5);
  int k = static_cast<int>(std::lround(t));
  if (k % 2 == 0) ++k;
  if (k < 3) k = 3;
  while (k > channels && k > 3) k -= 2;
  return k;
}

template <class T>
EcaParams<T> init_eca(int channels, std::uint64_t seed) {
  Rng rng(seed);
  int k = eca_kernel_size(channels);
  return {detail::init_tensor<T>({k}, k, InitScheme::fan_in_uniform(), rng, true)};
}

// GAP -> conv1d -> sigmoid -> channel-wise rescale. A vector input acts as its
// own pooled descriptor; a matrix is a batch of such vectors.
template <class T>
Tensor<T> eca_attention(const EcaParams<T>& eca, const Tensor<T>& x) {
  int channels = x.rank() == 2 ? x.shape()[1] : x.shape()[0];
  int k = eca.kernel.shape()[0];
  if (k > channels && k > 3)
    throw ShapeError("eca_attention: kernel size " + std::to_string(k) +
                     " exceeds channel count " + std::to_string(channels));
  Tensor<T> pooled = x.rank() == 3 ? global_avg_pool(x) : x;
  Tensor<T> s = sigmoid(conv1d_channel(pooled, eca.kernel));
  return mul(x, s);
}

}  // namespace cmn
