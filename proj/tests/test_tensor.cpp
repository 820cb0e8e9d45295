#include <catch2/catch_amalgamated.hpp>

#include "cmn/tensor.hpp"
#include "oracles.hpp"

using cmn::Tensor;
using Td = Tensor<double>;

namespace {
Td rand_tensor(cmn::Shape shape, cmn::Rng& rng, bool track = false) {
  auto n = cmn::shape_numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Td::from(std::move(shape), std::move(v), track);
}
}  // namespace

TEST_CASE("matmul basics") {
  auto eye = Td::from({2, 2}, {1, 0, 0, 1});
  auto m = Td::from({2, 2}, {1, 2, 3, 4});
  auto r = cmn::matmul(eye, m);
  CHECK(r.data() == std::vector<double>{1, 2, 3, 4});

  auto a = Td::from({1, 2}, {1, 2});
  auto b = Td::from({2, 1}, {3, 4});
  CHECK(cmn::matmul(a, b).item() == 11.0);

  auto v = Td::from({2}, {1, 2});
  auto rv = cmn::matmul(v, m);
  CHECK(rv.shape() == cmn::Shape{2});
  CHECK(rv.data() == std::vector<double>{7, 10});

  CHECK_THROWS_AS(cmn::matmul(Td::zeros({2, 3}), Td::zeros({4, 2})), cmn::ShapeError);
}

TEST_CASE("matmul matches triple-loop oracle") {
  cmn::Rng rng(11);
  auto a = rand_tensor({3, 4}, rng);
  auto b = rand_tensor({4, 2}, rng);
  auto got = cmn::matmul(a, b);
  auto want = oracle::matmul(a.data(), b.data(), 3, 4, 2);
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(got.data()[i] == Catch::Approx(want[i]).margin(1e-12));
}

TEST_CASE("conv2d identity and sum kernels") {
  cmn::Rng rng(7);
  auto x = rand_tensor({1, 3, 3}, rng);
  auto k1 = Td::from({1, 1, 1, 1}, {1.0});
  auto same = cmn::conv2d(x, k1, 0);
  CHECK(same.data() == x.data());

  auto x2 = Td::from({1, 2, 2}, {1, 2, 3, 4});
  auto ones = Td::full({1, 1, 2, 2}, 1.0);
  CHECK(cmn::conv2d(x2, ones, 0).item() == 10.0);

  CHECK_THROWS_AS(cmn::conv2d(x2, Td::zeros({1, 1, 5, 5}), 0), cmn::ShapeError);
}

TEST_CASE("conv2d matches naive loop oracle") {
  cmn::Rng rng(13);
  auto x = rand_tensor({2, 5, 5}, rng);
  auto k = rand_tensor({3, 2, 3, 3}, rng);
  auto got = cmn::conv2d(x, k, 1);
  int ho = 0, wo = 0;
  auto want = oracle::conv2d(x.data(), k.data(), 2, 5, 5, 3, 3, 3, 1, ho, wo);
  REQUIRE(got.shape() == cmn::Shape{3, ho, wo});
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(got.data()[i] == Catch::Approx(want[i]).margin(1e-12));
}

TEST_CASE("global average pooling") {
  auto c = Td::full({3, 4, 4}, 7.0);
  auto pooled = cmn::global_avg_pool(c);
  for (double v : pooled.data()) CHECK(v == 7.0);

  auto one = Td::from({1, 2, 2}, {1, 3, 5, 7});
  CHECK(cmn::global_avg_pool(one).item() == 4.0);

  cmn::Rng rng(3);
  auto x = rand_tensor({4, 3, 3}, rng);
  auto got = cmn::global_avg_pool(x);
  auto want = oracle::gap(x.data(), 4, 3, 3);
  for (int i = 0; i < 4; ++i) CHECK(got.data()[i] == Catch::Approx(want[i]).margin(1e-12));
}

TEST_CASE("elementwise ops") {
  CHECK(cmn::sigmoid(Td::scalar(0.0)).item() == 0.5);
  auto r = cmn::relu(Td::from({3}, {-1, 0, 2}));
  CHECK(r.data() == std::vector<double>{0, 0, 2});
  CHECK_THROWS_AS(cmn::add(Td::zeros({3}), Td::zeros({4})), cmn::ShapeError);
}

TEST_CASE("channel broadcast equals materialized loop") {
  cmn::Rng rng(5);
  auto gate = Td::from({2}, {0.25, -1.5});
  auto map = rand_tensor({2, 2, 2}, rng);
  auto got = cmn::mul(gate, map);

  // Fully materialized counterpart must agree bit-exactly.
  std::vector<double> expanded(8);
  for (int c = 0; c < 2; ++c)
    for (int j = 0; j < 4; ++j) expanded[c * 4 + j] = gate.data()[c];
  auto dense = cmn::mul(Td::from({2, 2, 2}, expanded), map);
  CHECK(got.data() == dense.data());

  // Row-over-matrix broadcast, same check.
  auto bias = Td::from({3}, {1, -2, 0.5});
  auto mat = rand_tensor({4, 3}, rng);
  auto bsum = cmn::add(mat, bias);
  for (int r = 0; r < 4; ++r)
    for (int j = 0; j < 3; ++j)
      CHECK(bsum.data()[r * 3 + j] == mat.data()[r * 3 + j] + bias.data()[j]);
}

TEST_CASE("softmax with temperature") {
  auto uni = cmn::softmax_t(Td::from({4}, {3, 3, 3, 3}), 5.0);
  for (double v : uni.data()) CHECK(v == Catch::Approx(0.25).margin(1e-15));

  auto p = cmn::softmax_t(Td::from({2}, {2, 0}), 2.0);
  double e = std::exp(1.0);
  CHECK(p.data()[0] == Catch::Approx(e / (e + 1)).margin(1e-12));
  CHECK(p.data()[1] == Catch::Approx(1 / (e + 1)).margin(1e-12));

  auto big = cmn::softmax_t(Td::from({2}, {1000, 0}), 1.0);
  CHECK(big.data()[0] == 1.0);
  CHECK(big.data()[1] == 0.0);

  CHECK_THROWS_AS(cmn::softmax_t(Td::from({2}, {1, 2}), 0.0), cmn::ValueError);
  CHECK_THROWS_AS(cmn::softmax_t(Td::from({2}, {1, 2}), -3.0), cmn::ValueError);
}

TEST_CASE("softmax output is a distribution") {
  cmn::Rng rng(17);
  for (int it = 0; it < 50; ++it) {
    auto l = rand_tensor({5}, rng);
    for (double& v : l.data()) v *= 10.0;
    double t = rng.uniform(0.1, 5.0);
    auto s = cmn::softmax_t(l, t);
    double sum = 0.0;
    for (double v : s.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("backward scalar rules") {
  auto x = Td::scalar(3.0, true);
  auto loss = cmn::mul(x, x);
  loss.backward();
  CHECK(x.grad()[0] == 6.0);

  auto w = Td::scalar(0.0, true);
  auto in = Td::scalar(1.0);
  auto l2 = cmn::sigmoid(cmn::mul(w, in));
  l2.backward();
  CHECK(w.grad()[0] == Catch::Approx(0.25).margin(1e-12));

  CHECK_THROWS_AS(Td::zeros({3}, true).backward(), cmn::ShapeError);
  CHECK_THROWS_AS(Td::scalar(1.0).backward(), cmn::ValueError);
}

TEST_CASE("fan-out gradients accumulate additively") {
  auto x = Td::scalar(2.0, true);
  auto two_paths = cmn::add(cmn::mul(x, x), cmn::scale(x, 3.0));  // x^2 + 3x
  two_paths.backward();
  double both = x.grad()[0];
  CHECK(both == Catch::Approx(2.0 * 2.0 + 3.0).margin(1e-12));

  // Single paths, summed by hand.
  auto x1 = Td::scalar(2.0, true);
  cmn::mul(x1, x1).backward();
  auto x2 = Td::scalar(2.0, true);
  cmn::scale(x2, 3.0).backward();
  CHECK(both == Catch::Approx(x1.grad()[0] + x2.grad()[0]).margin(1e-12));
}

TEST_CASE("two-layer net gradient matches finite differences") {
  cmn::Rng rng(23);
  auto w1 = rand_tensor({4, 6}, rng, true);
  auto w2 = rand_tensor({6, 3}, rng, true);
  auto x = rand_tensor({2, 4}, rng);
  auto fn = [&] {
    auto h = cmn::relu(cmn::matmul(x, w1));
    auto out = cmn::sigmoid(cmn::matmul(h, w2));
    return cmn::mean_all(cmn::mul(out, out));
  };
  auto res = oracle::grad_check(fn, {w1, w2});
  CHECK(res.checked == 4 * 6 + 6 * 3);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("per-op gradients match finite differences") {
  cmn::Rng rng(29);

  auto x3 = rand_tensor({2, 4, 4}, rng, true);
  auto k = rand_tensor({3, 2, 3, 3}, rng, true);
  auto conv_fn = [&] { return cmn::mean_all(cmn::mul(cmn::conv2d(x3, k, 1), cmn::conv2d(x3, k, 1))); };
  CHECK(oracle::grad_check(conv_fn, {x3, k}).max_rel_err < 1e-4);

  auto g = rand_tensor({3}, rng, true);
  auto gap_fn = [&] { return cmn::sum_all(cmn::sigmoid(cmn::global_avg_pool(cmn::mul(g, x3.detached())))); };
  auto x3b = rand_tensor({3, 4, 4}, rng, true);
  auto gap_fn2 = [&] { return cmn::sum_all(cmn::sigmoid(cmn::global_avg_pool(cmn::mul(g, x3b)))); };
  CHECK(oracle::grad_check(gap_fn2, {g, x3b}).max_rel_err < 1e-4);
  (void)gap_fn;

  auto logits = rand_tensor({2, 5}, rng, true);
  auto soft_fn = [&] {
    auto s = cmn::softmax_t(logits, 2.0);
    return cmn::mean_all(cmn::mul(s, s));
  };
  CHECK(oracle::grad_check(soft_fn, {logits}).max_rel_err < 1e-4);

  auto cvec = rand_tensor({7}, rng, true);
  auto k1 = rand_tensor({3}, rng, true);
  auto conv1_fn = [&] { return cmn::sum_all(cmn::sigmoid(cmn::conv1d_channel(cvec, k1))); };
  CHECK(oracle::grad_check(conv1_fn, {cvec, k1}).max_rel_err < 1e-4);

  auto p = rand_tensor({2, 4}, rng, true);
  auto proj_fn = [&] { return cmn::mean_all(cmn::relu(cmn::channel_project(p, x3))); };
  CHECK(oracle::grad_check(proj_fn, {p, x3}).max_rel_err < 1e-4);

  auto m = rand_tensor({3, 6}, rng, true);
  auto slice_fn = [&] { return cmn::mean_all(cmn::mul(cmn::slice_cols(m, 1, 4), cmn::slice_cols(m, 2, 5))); };
  CHECK(oracle::grad_check(slice_fn, {m}).max_rel_err < 1e-4);
}

TEST_CASE("non-finite values are surfaced, not propagated") {
  bool prev = cmn::eager_finite_checks();
  cmn::eager_finite_checks() = true;
  auto x = Td::scalar(-5.0);
  CHECK_THROWS_AS(cmn::log_eps(x, 1e-12), cmn::NumericError);
  CHECK_THROWS_AS(Td::from({1}, {std::nan("")}), cmn::NumericError);
  cmn::eager_finite_checks() = prev;
}

TEST_CASE("float32 mode works for the same ops") {
  using Tf = Tensor<float>;
  auto a = Tf::from({2, 2}, {1, 2, 3, 4});
  auto b = Tf::from({2, 2}, {1, 0, 0, 1});
  CHECK(cmn::matmul(a, b).data() == std::vector<float>{1, 2, 3, 4});
  CHECK(cmn::sigmoid(Tf::scalar(0.f)).item() == 0.5f);
}
