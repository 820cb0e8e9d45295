#include <catch2/catch_amalgamated.hpp>

#include "cmn/layers.hpp"
#include "oracles.hpp"

using cmn::InitScheme;
using cmn::NetworkSpec;
using cmn::Tensor;
using Td = Tensor<double>;

TEST_CASE("forward_plain zero net") {
  auto spec = NetworkSpec::tiny_mlp(3, 4, 2);
  auto p = cmn::init_params<double>(spec, InitScheme::constant(0.0), 1);
  auto x = Td::from({3}, {1, -2, 3});
  auto r = cmn::forward_plain(p, x);
  for (auto& h : r.hidden)
    for (double v : h.data()) CHECK(v == 0.0);
  for (double v : r.logits.data()) CHECK(v == 0.0);  // zero bias
}

TEST_CASE("forward_plain identity layer with relu") {
  NetworkSpec spec;
  spec.layers.push_back({cmn::LayerKind::Linear, 2, 2});
  spec.head_in = 2;
  spec.head_dim = 2;
  auto p = cmn::init_params<double>(spec, InitScheme::constant(0.0), 1);
  p.weights[0] = Td::from({2, 2}, {1, 0, 0, 1}, true);
  auto r = cmn::forward_plain(p, Td::from({2}, {1, -2}));
  CHECK(r.hidden[0].data() == std::vector<double>{1, 0});
}

TEST_CASE("forward_plain matches independent matrix script") {
  cmn::Rng rng(41);
  auto spec = NetworkSpec::tiny_mlp(4, 5, 3);
  auto p = cmn::init_params<double>(spec, InitScheme::fan_in_uniform(), 7);
  std::vector<double> xv = oracle::random_vec(4, rng);

  // Hand-rolled two-layer MLP on plain vectors.
  auto layer = [](const std::vector<double>& in, const std::vector<double>& w,
                  const std::vector<double>& b, int ni, int no, bool act) {
    std::vector<double> out(no, 0.0);
    for (int j = 0; j < no; ++j) {
      for (int i = 0; i < ni; ++i) out[j] += in[i] * w[i * no + j];
      out[j] += b[j];
      if (act && out[j] < 0) out[j] = 0;
    }
    return out;
  };
  auto h1 = layer(xv, p.weights[0].data(), p.biases[0].data(), 4, 5, true);
  auto h2 = layer(h1, p.weights[1].data(), p.biases[1].data(), 5, 5, true);
  auto want = layer(h2, p.head_w.data(), p.head_b.data(), 5, 3, false);

  auto r = cmn::forward_plain(p, Td::from({4}, xv));
  for (int j = 0; j < 3; ++j) CHECK(r.logits.data()[j] == Catch::Approx(want[j]).margin(1e-12));
}

TEST_CASE("forward_plain batched rows equal per-sample runs") {
  cmn::Rng rng(43);
  auto spec = NetworkSpec::tiny_mlp(4, 6, 3);
  auto p = cmn::init_params<double>(spec, InitScheme::fan_in_uniform(), 9);
  std::vector<double> batch;
  std::vector<std::vector<double>> rows;
  for (int r = 0; r < 3; ++r) {
    rows.push_back(oracle::random_vec(4, rng));
    batch.insert(batch.end(), rows.back().begin(), rows.back().end());
  }
  auto br = cmn::forward_plain(p, Td::from({3, 4}, batch));
  for (int r = 0; r < 3; ++r) {
    auto sr = cmn::forward_plain(p, Td::from({4}, rows[r]));
    for (int j = 0; j < 3; ++j) CHECK(br.logits.data()[r * 3 + j] == sr.logits.data()[j]);
  }
}

TEST_CASE("tiny_conv forward shape and gradcheck") {
  auto spec = NetworkSpec::tiny_conv(1, 3, 4);
  auto p = cmn::init_params<double>(spec, InitScheme::fan_in_uniform(), 5);
  cmn::Rng rng(47);
  auto x = Td::from({1, 6, 6}, oracle::random_vec(36, rng));
  auto r = cmn::forward_plain(p, x);
  CHECK(r.logits.shape() == cmn::Shape{4});
  CHECK(r.hidden.size() == 2);
  CHECK(r.hidden[1].shape() == cmn::Shape{3, 6, 6});

  auto fn = [&] {
    auto out = cmn::forward_plain(p, x);
    return cmn::mean_all(cmn::mul(out.logits, out.logits));
  };
  std::vector<Td> params;
  for (auto* t : p.all()) params.push_back(*t);
  CHECK(oracle::grad_check(fn, params).max_rel_err < 1e-4);
}

TEST_CASE("init_params schemes") {
  auto spec = NetworkSpec::tiny_mlp(6, 4, 2);
  auto ones = cmn::init_params<double>(spec, InitScheme::constant(1.0), 3);
  for (auto* t : ones.all())
    for (double v : t->data()) CHECK(v == 1.0);

  auto zeros = cmn::init_params<double>(spec, InitScheme::constant(0.0), 3);
  for (auto* t : zeros.all())
    for (double v : t->data()) CHECK(v == 0.0);

  auto fan = cmn::init_params<double>(spec, InitScheme::fan_in_uniform(), 3);
  for (double v : fan.weights[0].data()) CHECK(std::abs(v) <= 1.0);  // fan_in=6
  for (double v : fan.biases[0].data()) CHECK(v == 0.0);

  // Bit-reproducible per seed, different across seeds.
  auto fan2 = cmn::init_params<double>(spec, InitScheme::fan_in_uniform(), 3);
  auto fan3 = cmn::init_params<double>(spec, InitScheme::fan_in_uniform(), 4);
  CHECK(fan.weights[0].data() == fan2.weights[0].data());
  CHECK(fan.weights[0].data() != fan3.weights[0].data());
}

TEST_CASE("count_params") {
  NetworkSpec single;
  single.head_in = 3;
  single.head_dim = 2;
  auto p = cmn::init_params<double>(single, InitScheme::constant(0.0), 1);
  CHECK(cmn::count_params(p) == 8);  // 3*2 + 2

  auto mlp = cmn::init_params<double>(NetworkSpec::tiny_mlp(4, 5, 3, 1),
                                      InitScheme::constant(0.0), 1);
  CHECK(cmn::count_params(mlp) == 43);  // 4*5+5 + 5*3+3

  // Adding a layer changes the count by exactly the layer's size.
  auto two = cmn::init_params<double>(NetworkSpec::tiny_mlp(4, 5, 3, 2),
                                      InitScheme::constant(0.0), 1);
  CHECK(cmn::count_params(two) - cmn::count_params(mlp) == 5 * 5 + 5);
}

TEST_CASE("eca kernel size rule") {
  CHECK(cmn::eca_kernel_size(1) == 3);
  CHECK(cmn::eca_kernel_size(8) == 3);
  CHECK(cmn::eca_kernel_size(128) == 5);
  CHECK(cmn::eca_kernel_size(128) % 2 == 1);
  CHECK_THROWS_AS(cmn::eca_kernel_size(0), cmn::ValueError);
}

TEST_CASE("eca attention closed forms") {
  // Zero kernel: every channel scaled by sigmoid(0) = 0.5.
  cmn::EcaParams<double> eca{Td::zeros({3}, true)};
  cmn::Rng rng(51);
  auto x = Td::from({3, 2, 2}, oracle::random_vec(12, rng));
  auto out = cmn::eca_attention(eca, x);
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(out.data()[i] == Catch::Approx(x.data()[i] * 0.5).margin(1e-15));

  // C=1, centered unit kernel, constant-2 map: out = 2*sigmoid(2).
  cmn::EcaParams<double> center{Td::from({3}, {0, 1, 0})};
  auto c1 = Td::full({1, 2, 2}, 2.0);
  auto out1 = cmn::eca_attention(center, c1);
  for (double v : out1.data())
    CHECK(v == Catch::Approx(2.0 * oracle::sigmoid(2.0)).margin(1e-12));
}

TEST_CASE("eca attention matches loop oracle and keeps gains in (0,1)") {
  cmn::Rng rng(53);
  auto eca = cmn::init_eca<double>(8, 77);
  auto x = Td::from({8, 4, 4}, oracle::random_vec(8 * 16, rng));
  auto out = cmn::eca_attention(eca, x);
  CHECK(out.shape() == x.shape());

  auto pooled = oracle::gap(x.data(), 8, 4, 4);
  auto conv = oracle::conv1d(pooled, eca.kernel.data());
  for (int c = 0; c < 8; ++c) {
    double s = oracle::sigmoid(conv[c]);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
    for (int j = 0; j < 16; ++j)
      CHECK(out.data()[c * 16 + j] == Catch::Approx(x.data()[c * 16 + j] * s).margin(1e-12));
  }

  // Gradients through the attention path.
  auto fn = [&] { return cmn::mean_all(cmn::mul(cmn::eca_attention(eca, x), x)); };
  CHECK(oracle::grad_check(fn, {eca.kernel}).max_rel_err < 1e-4);
}

TEST_CASE("spec validation") {
  NetworkSpec bad;
  bad.layers.push_back({cmn::LayerKind::Linear, 3, 4});
  bad.layers.push_back({cmn::LayerKind::Linear, 5, 4});
  bad.head_in = 4;
  bad.head_dim = 2;
  CHECK_THROWS_AS(bad.validate(), cmn::ValueError);
}
