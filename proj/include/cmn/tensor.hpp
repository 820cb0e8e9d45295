#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a handle to a graph node holding a value buffer, an optional
// gradient buffer and a backprop closure. Graphs are built eagerly by the op
// functions below and torn down when the last handle goes away. Only nodes
// reachable from a tracked leaf carry gradient machinery; running a forward
// pass over untracked parameters produces plain constants, so frozen networks
// never enter any backward traversal.
//
// Supported ranks: 1 (vector), 2 (matrix, rows = batch), 3 (C x H x W map).
// Broadcasting is deliberately narrow: a length-C vector over a C x H x W map
// (channel axis) and a length-n vector over the rows of an m x n matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace cmn {

using Shape = std::vector<int>;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ValueError : std::runtime_error {
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

// Eager NaN/Inf checks after every op. On by default in debug builds; the
// trainer additionally sweeps parameters once per epoch in release builds.
inline bool& eager_finite_checks() {
#ifdef NDEBUG
  static bool on = false;
#else
  static bool on = true;
#endif
  return on;
}

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // same length as value once touched
  bool track = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;  // pushes this->grad into parents' grads

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<T> data, bool track = false) {
    auto n = shape_numel(shape);
    if (static_cast<std::int64_t>(data.size()) != n)
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->track = track;
    t.check();
    return t;
  }

  static Tensor full(Shape shape, T v, bool track = false) {
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), v), track);
  }

  static Tensor zeros(Shape shape, bool track = false) {
    return full(std::move(shape), T(0), track);
  }

  static Tensor scalar(T v, bool track = false) { return from({1}, {v}, track); }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }

  bool tracked() const { return node_->track; }
  void set_track(bool t) { node_->track = t; }

  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (node_) node_->grad.assign(node_->value.size(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  // Value copy without graph history.
  Tensor detached() const { return from(shape(), data(), false); }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

  // Reverse-mode sweep from a scalar. Gradients of every node reachable from
  // this root are recomputed (not accumulated across calls); fan-out within
  // one graph sums as usual.
  void backward() const {
    if (numel() != 1) throw ShapeError("backward() requires a scalar loss, got " + shape_str(shape()));
    if (!node_->track)
      throw ValueError("backward() on a graph with no tracked parameters");
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> seen;
    topo(node_.get(), seen, order);
    for (auto* n : order) n->grad.assign(n->value.size(), T(0));
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backprop) (*it)->backprop();
    }
  }

  void check() const {
    if (!eager_finite_checks()) return;
    assert_finite("tensor op");
  }

  void assert_finite(const char* where) const {
    for (T v : node_->value)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError(std::string("non-finite value in ") + where);
  }

  static Tensor make(Shape shape, std::vector<T> value,
                     std::vector<std::shared_ptr<TensorNode<T>>> parents,
                     std::function<void(TensorNode<T>&)> backprop) {
    Tensor t = from(std::move(shape), std::move(value), false);
    bool track = false;
    for (auto& p : parents) track = track || p->track;
    if (track) {
      t.node_->track = true;
      t.node_->ensure_grad();
      for (auto& p : parents)
        if (p->track) p->ensure_grad();
      t.node_->parents = std::move(parents);
      TensorNode<T>* raw = t.node_.get();
      t.node_->backprop = [raw, fn = std::move(backprop)]() { fn(*raw); };
    }
    return t;
  }

 private:
  static void topo(TensorNode<T>* root, std::unordered_set<TensorNode<T>*>& seen,
                   std::vector<TensorNode<T>*>& order) {
    // Iterative post-order; graphs can be deep for long batched losses.
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        TensorNode<T>* p = n->parents[idx++].get();
        if (p->track && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

// Broadcast classification for binary elementwise ops.
enum class Bcast { Same, ChannelOverMap, RowOverMatrix };

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Returns (mode, small_is_lhs). Throws on incompatible shapes.
inline std::pair<Bcast, bool> classify_broadcast(const Shape& a, const Shape& b) {
  if (same_shape(a, b)) return {Bcast::Same, false};
  if (a.size() == 1 && b.size() == 3 && a[0] == b[0]) return {Bcast::ChannelOverMap, true};
  if (b.size() == 1 && a.size() == 3 && b[0] == a[0]) return {Bcast::ChannelOverMap, false};
  if (a.size() == 1 && b.size() == 2 && a[0] == b[1]) return {Bcast::RowOverMatrix, true};
  if (b.size() == 1 && a.size() == 2 && b[0] == a[1]) return {Bcast::RowOverMatrix, false};
  throw ShapeError("incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Index of the broadcast-vector element feeding flat position i of the big
// tensor, or i itself for Same.
inline std::int64_t bcast_index(Bcast mode, const Shape& big, std::int64_t i) {
  switch (mode) {
    case Bcast::Same:
      return i;
    case Bcast::ChannelOverMap:
      return i / (static_cast<std::int64_t>(big[1]) * big[2]);
    case Bcast::RowOverMatrix:
      return i % big[1];
  }
  return i;
}

}  // namespace detail

template <class T>
inline std::shared_ptr<TensorNode<T>> node_of(const Tensor<T>& t) {
  return t.node();
}

template <class T, class Fwd, class Dfa, class Dfb>
Tensor<T> binary_elementwise(const Tensor<T>& a, const Tensor<T>& b, Fwd f, Dfa dfa, Dfb dfb) {
  auto [mode, small_lhs] = detail::classify_broadcast(a.shape(), b.shape());
  const Tensor<T>& big = (mode == detail::Bcast::Same || !small_lhs) ? a : b;
  const Tensor<T>& small = (&big == &a) ? b : a;
  bool a_is_big = (&big == &a);

  const Shape out_shape = big.shape();
  std::int64_t n = big.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t j = detail::bcast_index(mode, out_shape, i);
    T av = a_is_big ? a.data()[i] : a.data()[j];
    T bv = a_is_big ? b.data()[j] : b.data()[i];
    out[static_cast<std::size_t>(i)] = f(av, bv);
  }

  auto an = node_of(a);
  auto bn = node_of(b);
  auto m = mode;
  return Tensor<T>::make(
      out_shape, std::move(out), {an, bn},
      [an, bn, m, a_is_big, out_shape, dfa, dfb](TensorNode<T>& o) {
        std::int64_t n = static_cast<std::int64_t>(o.value.size());
        for (std::int64_t i = 0; i < n; ++i) {
          std::int64_t j = detail::bcast_index(m, out_shape, i);
          std::int64_t ai = a_is_big ? i : j;
          std::int64_t bi = a_is_big ? j : i;
          T av = an->value[static_cast<std::size_t>(ai)];
          T bv = bn->value[static_cast<std::size_t>(bi)];
          T g = o.grad[static_cast<std::size_t>(i)];
          if (an->track) an->grad[static_cast<std::size_t>(ai)] += g * dfa(av, bv);
          if (bn->track) bn->grad[static_cast<std::size_t>(bi)] += g * dfb(av, bv);
        }
      });
}

// -- elementwise ops ---------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T, class Fwd, class Df>
Tensor<T> unary_elementwise(const Tensor<T>& x, Fwd f, Df df) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.data()[i]);
  auto xn = node_of(x);
  return Tensor<T>::make(x.shape(), std::move(out), {xn}, [xn, df](TensorNode<T>& o) {
    if (!xn->track) return;
    for (std::size_t i = 0; i < o.value.size(); ++i)
      xn->grad[i] += o.grad[i] * df(xn->value[i], o.value[i]);
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_elementwise(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_elementwise(
      x,
      [](T v) {
        // Split by sign to avoid overflow in exp.
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

// log(x + eps); the floor keeps cross-entropy finite at exact zeros.
template <class T>
Tensor<T> log_eps(const Tensor<T>& x, T eps) {
  return unary_elementwise(
      x, [eps](T v) { return std::log(v + eps); },
      [eps](T v, T) { return T(1) / (v + eps); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return unary_elementwise(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

// -- matmul ------------------------------------------------------------------

// [m x k] * [k x n] -> [m x n]; a vector lhs [k] is treated as [1 x k] and
// yields a vector [n].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.rank() != 2 || (a.rank() != 1 && a.rank() != 2))
    throw ShapeError("matmul expects [m x k]*[k x n] or [k]*[k x n], got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  int m = a.rank() == 2 ? a.shape()[0] : 1;
  int k = a.rank() == 2 ? a.shape()[1] : a.shape()[0];
  if (k != b.shape()[0])
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  int n = b.shape()[1];

  std::vector<T> out(static_cast<std::size_t>(m) * n, T(0));
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      T av = a.data()[static_cast<std::size_t>(i) * k + p];
      if (av == T(0)) continue;
      for (int j = 0; j < n; ++j)
        out[static_cast<std::size_t>(i) * n + j] += av * b.data()[static_cast<std::size_t>(p) * n + j];
    }

  Shape out_shape = a.rank() == 1 ? Shape{n} : Shape{m, n};
  auto an = node_of(a);
  auto bn = node_of(b);
  return Tensor<T>::make(out_shape, std::move(out), {an, bn},
                         [an, bn, m, k, n](TensorNode<T>& o) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        T g = o.grad[static_cast<std::size_t>(i) * n + j];
        if (g == T(0)) continue;
        for (int p = 0; p < k; ++p) {
          if (an->track)
            an->grad[static_cast<std::size_t>(i) * k + p] +=
                g * bn->value[static_cast<std::size_t>(p) * n + j];
          if (bn->track)
            bn->grad[static_cast<std::size_t>(p) * n + j] +=
                g * an->value[static_cast<std::size_t>(i) * k + p];
        }
      }
  });
}

// -- conv2d ------------------------------------------------------------------

// Cross-correlation, stride 1, symmetric zero padding.
// x: [C_in x H x W], k: [C_out x C_in x kh x kw] -> [C_out x H' x W'].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, int pad) {
  if (x.rank() != 3 || k.rank() != 4)
    throw ShapeError("conv2d expects [C x H x W] input and [O x C x h x w] kernel, got " +
                     shape_str(x.shape()) + " and " + shape_str(k.shape()));
  if (pad < 0) throw ValueError("conv2d: negative padding");
  int ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  int co = k.shape()[0], kh = k.shape()[2], kw = k.shape()[3];
  if (k.shape()[1] != ci)
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) +
                     ", kernel " + shape_str(k.shape()));
  int ho = h + 2 * pad - kh + 1;
  int wo = w + 2 * pad - kw + 1;
  if (ho < 1 || wo < 1)
    throw ShapeError("conv2d kernel " + shape_str(k.shape()) +
                     " larger than padded input " + shape_str(x.shape()));

  auto xi = [=](int c, int y, int z) { return (static_cast<std::size_t>(c) * h + y) * w + z; };
  auto ki = [=](int o, int c, int y, int z) {
    return ((static_cast<std::size_t>(o) * ci + c) * kh + y) * kw + z;
  };
  auto oi = [=](int o, int y, int z) { return (static_cast<std::size_t>(o) * ho + y) * wo + z; };

  std::vector<T> out(static_cast<std::size_t>(co) * ho * wo, T(0));
  for (int o = 0; o < co; ++o)
    for (int y = 0; y < ho; ++y)
      for (int z = 0; z < wo; ++z) {
        T acc = T(0);
        for (int c = 0; c < ci; ++c)
          for (int dy = 0; dy < kh; ++dy) {
            int sy = y + dy - pad;
            if (sy < 0 || sy >= h) continue;
            for (int dz = 0; dz < kw; ++dz) {
              int sz = z + dz - pad;
              if (sz < 0 || sz >= w) continue;
              acc += x.data()[xi(c, sy, sz)] * k.data()[ki(o, c, dy, dz)];
            }
          }
        out[oi(o, y, z)] = acc;
      }

  auto xn = node_of(x);
  auto kn = node_of(k);
  return Tensor<T>::make({co, ho, wo}, std::move(out), {xn, kn},
                         [=](TensorNode<T>& outn) {
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < ho; ++y)
        for (int z = 0; z < wo; ++z) {
          T g = outn.grad[oi(o, y, z)];
          if (g == T(0)) continue;
          for (int c = 0; c < ci; ++c)
            for (int dy = 0; dy < kh; ++dy) {
              int sy = y + dy - pad;
              if (sy < 0 || sy >= h) continue;
              for (int dz = 0; dz < kw; ++dz) {
                int sz = z + dz - pad;
                if (sz < 0 || sz >= w) continue;
                if (xn->track) xn->grad[xi(c, sy, sz)] += g * kn->value[ki(o, c, dy, dz)];
                if (kn->track) kn->grad[ki(o, c, dy, dz)] += g * xn->value[xi(c, sy, sz)];
              }
            }
        }
  });
}

// -- pooling -----------------------------------------------------------------

// [C x H x W] -> [C], per-channel spatial mean.
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 3)
    throw ShapeError("global_avg_pool expects [C x H x W], got " + shape_str(x.shape()));
  int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::int64_t hw = static_cast<std::int64_t>(h) * w;
  std::vector<T> out(static_cast<std::size_t>(c), T(0));
  for (int i = 0; i < c; ++i) {
    T acc = T(0);
    for (std::int64_t j = 0; j < hw; ++j) acc += x.data()[static_cast<std::size_t>(i) * hw + j];
    out[static_cast<std::size_t>(i)] = acc / static_cast<T>(hw);
  }
  auto xn = node_of(x);
  return Tensor<T>::make({c}, std::move(out), {xn}, [xn, c, hw](TensorNode<T>& o) {
    if (!xn->track) return;
    for (int i = 0; i < c; ++i) {
      T g = o.grad[static_cast<std::size_t>(i)] / static_cast<T>(hw);
      for (std::int64_t j = 0; j < hw; ++j) xn->grad[static_cast<std::size_t>(i) * hw + j] += g;
    }
  });
}

// -- softmax with temperature ------------------------------------------------

// Row-wise stable softmax of logits / T. Rank 1 is a single row.
template <class T>
Tensor<T> softmax_t(const Tensor<T>& logits, double temperature) {
  if (temperature <= 0.0) throw ValueError("softmax temperature must be positive");
  if (logits.rank() != 1 && logits.rank() != 2)
    throw ShapeError("softmax expects a vector or matrix, got " + shape_str(logits.shape()));
  int rows = logits.rank() == 2 ? logits.shape()[0] : 1;
  int cols = logits.rank() == 2 ? logits.shape()[1] : logits.shape()[0];
  T invt = static_cast<T>(1.0 / temperature);

  std::vector<T> out(logits.data().size());
  for (int r = 0; r < rows; ++r) {
    const T* in = logits.data().data() + static_cast<std::size_t>(r) * cols;
    T* o = out.data() + static_cast<std::size_t>(r) * cols;
    T mx = in[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    T denom = T(0);
    for (int j = 0; j < cols; ++j) {
      o[j] = std::exp((in[j] - mx) * invt);
      denom += o[j];
    }
    for (int j = 0; j < cols; ++j) o[j] /= denom;
  }

  auto ln = node_of(logits);
  return Tensor<T>::make(logits.shape(), std::move(out), {ln},
                         [ln, rows, cols, invt](TensorNode<T>& o) {
    if (!ln->track) return;
    for (int r = 0; r < rows; ++r) {
      const T* s = o.value.data() + static_cast<std::size_t>(r) * cols;
      const T* g = o.grad.data() + static_cast<std::size_t>(r) * cols;
      T dot = T(0);
      for (int j = 0; j < cols; ++j) dot += g[j] * s[j];
      for (int j = 0; j < cols; ++j)
        ln->grad[static_cast<std::size_t>(r) * cols + j] += invt * s[j] * (g[j] - dot);
    }
  });
}

// -- 1-D channel convolution (ECA) ------------------------------------------

// Odd-length kernel slid over the channel axis with zero padding. Rank 1 input
// is one channel vector; rank 2 applies row-wise.
template <class T>
Tensor<T> conv1d_channel(const Tensor<T>& x, const Tensor<T>& kernel) {
  if (kernel.rank() != 1 || kernel.shape()[0] % 2 == 0)
    throw ShapeError("conv1d_channel kernel must be an odd-length vector, got " +
                     shape_str(kernel.shape()));
  if (x.rank() != 1 && x.rank() != 2)
    throw ShapeError("conv1d_channel expects a vector or matrix, got " + shape_str(x.shape()));
  int rows = x.rank() == 2 ? x.shape()[0] : 1;
  int c = x.rank() == 2 ? x.shape()[1] : x.shape()[0];
  int k = kernel.shape()[0];
  int half = k / 2;

  std::vector<T> out(x.data().size(), T(0));
  for (int r = 0; r < rows; ++r)
    for (int i = 0; i < c; ++i) {
      T acc = T(0);
      for (int d = 0; d < k; ++d) {
        int j = i + d - half;
        if (j < 0 || j >= c) continue;
        acc += x.data()[static_cast<std::size_t>(r) * c + j] * kernel.data()[static_cast<std::size_t>(d)];
      }
      out[static_cast<std::size_t>(r) * c + i] = acc;
    }

  auto xn = node_of(x);
  auto kn = node_of(kernel);
  return Tensor<T>::make(x.shape(), std::move(out), {xn, kn},
                         [xn, kn, rows, c, k, half](TensorNode<T>& o) {
    for (int r = 0; r < rows; ++r)
      for (int i = 0; i < c; ++i) {
        T g = o.grad[static_cast<std::size_t>(r) * c + i];
        if (g == T(0)) continue;
        for (int d = 0; d < k; ++d) {
          int j = i + d - half;
          if (j < 0 || j >= c) continue;
          if (xn->track)
            xn->grad[static_cast<std::size_t>(r) * c + j] += g * kn->value[static_cast<std::size_t>(d)];
          if (kn->track)
            kn->grad[static_cast<std::size_t>(d)] += g * xn->value[static_cast<std::size_t>(r) * c + j];
        }
      }
  });
}

// -- channel projection (1x1 conv) -------------------------------------------

// P: [C_in x C_out], x: [C_in x H x W] -> [C_out x H x W].
template <class T>
Tensor<T> channel_project(const Tensor<T>& p, const Tensor<T>& x) {
  if (p.rank() != 2 || x.rank() != 3 || p.shape()[0] != x.shape()[0])
    throw ShapeError("channel_project expects [Cin x Cout] and [Cin x H x W], got " +
                     shape_str(p.shape()) + " and " + shape_str(x.shape()));
  int ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  int co = p.shape()[1];
  std::int64_t hw = static_cast<std::int64_t>(h) * w;

  std::vector<T> out(static_cast<std::size_t>(co) * hw, T(0));
  for (int o = 0; o < co; ++o)
    for (int c = 0; c < ci; ++c) {
      T pv = p.data()[static_cast<std::size_t>(c) * co + o];
      if (pv == T(0)) continue;
      for (std::int64_t j = 0; j < hw; ++j)
        out[static_cast<std::size_t>(o) * hw + j] += pv * x.data()[static_cast<std::size_t>(c) * hw + j];
    }

  auto pn = node_of(p);
  auto xn = node_of(x);
  return Tensor<T>::make({co, h, w}, std::move(out), {pn, xn},
                         [pn, xn, ci, co, hw](TensorNode<T>& o) {
    for (int oc = 0; oc < co; ++oc)
      for (int c = 0; c < ci; ++c) {
        T pv = pn->value[static_cast<std::size_t>(c) * co + oc];
        for (std::int64_t j = 0; j < hw; ++j) {
          T g = o.grad[static_cast<std::size_t>(oc) * hw + j];
          if (g == T(0)) continue;
          if (pn->track)
            pn->grad[static_cast<std::size_t>(c) * co + oc] +=
                g * xn->value[static_cast<std::size_t>(c) * hw + j];
          if (xn->track) xn->grad[static_cast<std::size_t>(c) * hw + j] += g * pv;
        }
      }
  });
}

// -- slicing and reductions --------------------------------------------------

// Columns [c0, c1) of a matrix (or a span of a vector).
template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, int c0, int c1) {
  if (x.rank() != 1 && x.rank() != 2)
    throw ShapeError("slice_cols expects a vector or matrix, got " + shape_str(x.shape()));
  int rows = x.rank() == 2 ? x.shape()[0] : 1;
  int cols = x.rank() == 2 ? x.shape()[1] : x.shape()[0];
  if (c0 < 0 || c1 > cols || c0 >= c1)
    throw ShapeError("slice_cols [" + std::to_string(c0) + ", " + std::to_string(c1) +
                     ") out of range for " + shape_str(x.shape()));
  int width = c1 - c0;
  std::vector<T> out(static_cast<std::size_t>(rows) * width);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < width; ++j)
      out[static_cast<std::size_t>(r) * width + j] = x.data()[static_cast<std::size_t>(r) * cols + c0 + j];

  Shape out_shape = x.rank() == 1 ? Shape{width} : Shape{rows, width};
  auto xn = node_of(x);
  return Tensor<T>::make(out_shape, std::move(out), {xn},
                         [xn, rows, cols, c0, width](TensorNode<T>& o) {
    if (!xn->track) return;
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < width; ++j)
        xn->grad[static_cast<std::size_t>(r) * cols + c0 + j] +=
            o.grad[static_cast<std::size_t>(r) * width + j];
  });
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  auto xn = node_of(x);
  return Tensor<T>::make({1}, {acc}, {xn}, [xn](TensorNode<T>& o) {
    if (!xn->track) return;
    for (auto& g : xn->grad) g += o.grad[0];
  });
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

}  // namespace cmn
