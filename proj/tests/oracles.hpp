#pragma once

// Independent reference implementations used to check the library. Everything
// here is plain loops over std::vector<double>, deliberately sharing no code
// with the tensor graph.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmn/rng.hpp"
#include "cmn/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

// Triple-loop matrix product, row-major.
inline Vec matmul(const Vec& a, const Vec& b, int m, int k, int n) {
  Vec out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p)
        out[i * n + j] += a[i * k + p] * b[p * n + j];
  return out;
}

// Six-loop cross-correlation with zero padding, stride 1.
inline Vec conv2d(const Vec& x, const Vec& k, int ci, int h, int w, int co, int kh, int kw,
                  int pad, int& ho, int& wo) {
  ho = h + 2 * pad - kh + 1;
  wo = w + 2 * pad - kw + 1;
  Vec out(static_cast<std::size_t>(co) * ho * wo, 0.0);
  for (int o = 0; o < co; ++o)
    for (int y = 0; y < ho; ++y)
      for (int z = 0; z < wo; ++z)
        for (int c = 0; c < ci; ++c)
          for (int dy = 0; dy < kh; ++dy)
            for (int dz = 0; dz < kw; ++dz) {
              int sy = y + dy - pad, sz = z + dz - pad;
              if (sy < 0 || sy >= h || sz < 0 || sz >= w) continue;
              out[(o * ho + y) * wo + z] +=
                  x[(c * h + sy) * w + sz] * k[((o * ci + c) * kh + dy) * kw + dz];
            }
  return out;
}

inline Vec gap(const Vec& x, int c, int h, int w) {
  Vec out(c, 0.0);
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < h * w; ++j) out[i] += x[i * h * w + j];
    out[i] /= h * w;
  }
  return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline Vec softmax_t(const Vec& l, double t) {
  Vec out(l.size());
  double mx = l[0];
  for (double v : l) mx = std::max(mx, v);
  double denom = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    out[i] = std::exp((l[i] - mx) / t);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  return out;
}

inline double cross_entropy(const Vec& target, const Vec& pred, double eps = 1e-12) {
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) acc -= target[i] * std::log(pred[i] + eps);
  return acc;
}

// Zero-padded 1-D convolution over the channel axis (odd kernel).
inline Vec conv1d(const Vec& x, const Vec& k) {
  int c = static_cast<int>(x.size());
  int half = static_cast<int>(k.size()) / 2;
  Vec out(c, 0.0);
  for (int i = 0; i < c; ++i)
    for (int d = 0; d < static_cast<int>(k.size()); ++d) {
      int j = i + d - half;
      if (j < 0 || j >= c) continue;
      out[i] += x[j] * k[d];
    }
  return out;
}

inline Vec random_vec(std::size_t n, cmn::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vec v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Central finite differences of a re-evaluated scalar loss against the
// analytic gradients produced by one backward() call.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

inline GradCheckResult grad_check(const std::function<cmn::Tensor<double>()>& loss_fn,
                                  std::vector<cmn::Tensor<double>> params,
                                  double eps = 1e-5, double abs_floor = 1e-8) {
  auto loss = loss_fn();
  loss.backward();
  std::vector<Vec> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = params[pi].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      double orig = data[i];
      data[i] = orig + eps;
      double up = loss_fn().item();
      data[i] = orig - eps;
      double down = loss_fn().item();
      data[i] = orig;
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic[pi][i];
      double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
      double rel = std::abs(a - numeric) / denom;
      if (std::abs(a - numeric) <= abs_floor) rel = 0.0;
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace oracle
