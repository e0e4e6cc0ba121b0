#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "pestdet/kernels.hpp"

using namespace pestdet;
using T = Tensor<float>;

namespace {

T empty_bias() { return T{}; }

Tensor<double> to_double(const T& t) { return t.cast<double>(); }

}  // namespace

TEST_CASE("conv2d trivial cases") {
  T x({1, 2, 2}, {1, 2, 3, 4});
  T w({1, 1, 1, 1}, {2});
  T b({1}, {0});
  const T y = conv2d(x, w, b, ConvSpec{1, 1, 1, Padding::valid, 1});
  CHECK(y == T({1, 2, 2}, {2, 4, 6, 8}));

  const T ones_in = T::constant({1, 3, 3}, 1.0f);
  const T ones_k = T::constant({1, 1, 3, 3}, 1.0f);
  const T s = conv2d(ones_in, ones_k, empty_bias(), ConvSpec{3, 3, 1, Padding::valid, 1});
  CHECK(s.shape() == Shape{1, 1, 1});
  CHECK(s[0] == 9.0f);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937 rng(7);
  struct Case {
    Shape in;
    int cout, k, stride;
    Padding pad;
    int groups;
  };
  const std::vector<Case> cases = {
      {{1, 8, 8}, 1, 3, 1, Padding::valid, 1}, {{1, 8, 8}, 4, 3, 1, Padding::same, 1},
      {{3, 9, 7}, 6, 3, 2, Padding::same, 1},  {{4, 8, 8}, 4, 3, 2, Padding::same, 4},
      {{6, 10, 10}, 4, 5, 1, Padding::valid, 2}, {{2, 7, 7}, 3, 4, 3, Padding::same, 1},
  };
  for (const auto& c : cases) {
    const T x = oracle::random_tensor<float>(c.in, rng);
    const T w = oracle::random_tensor<float>({c.cout, c.in[0] / c.groups, c.k, c.k}, rng);
    const T b = oracle::random_tensor<float>({c.cout}, rng);
    const ConvSpec spec{c.k, c.k, c.stride, c.pad, c.groups};
    const T y = conv2d(x, w, b, spec);
    const auto ref =
        oracle::conv2d(to_double(x), to_double(w), to_double(b), c.stride, c.pad == Padding::same, c.groups);
    REQUIRE(y.shape() == ref.shape());
    CHECK(oracle::max_abs_diff(y, ref) < 1e-5);
  }

  // the spec'd single-channel 8x8 case at 1e-6
  const T x = oracle::random_tensor<float>({1, 8, 8}, rng);
  const T w = oracle::random_tensor<float>({1, 1, 3, 3}, rng);
  const T y = conv2d(x, w, empty_bias(), ConvSpec{3, 3, 1, Padding::valid, 1});
  const auto ref = oracle::conv2d(to_double(x), to_double(w), Tensor<double>{}, 1, false, 1);
  CHECK(oracle::max_abs_diff(y, ref) < 1e-6);
}

TEST_CASE("conv2d output shapes follow the padding rule") {
  for (int in : {5, 7, 8, 52}) {
    for (int stride : {1, 2, 3}) {
      CHECK(conv_output_size(in, 3, stride, Padding::same) == (in + stride - 1) / stride);
      CHECK(conv_output_size(in, 3, stride, Padding::valid) == (in - 3) / stride + 1);
    }
  }
  CHECK(conv_pad_before(8, 3, 2, Padding::same) == 0);  // total pad 1: 0 before, 1 after
  CHECK(conv_pad_before(8, 3, 1, Padding::same) == 1);
}

TEST_CASE("conv2d rejects inconsistent shapes") {
  const T x({3, 8, 8});
  CHECK_THROWS_AS(conv2d(x, T({4, 2, 3, 3}), T{}, ConvSpec{}), DimensionError);
  CHECK_THROWS_AS(conv2d(x, T({4, 3, 3, 3}), T({3}), ConvSpec{}), DimensionError);
  CHECK_THROWS_AS(conv2d(T({3, 2, 2}), T({4, 3, 3, 3}), T{}, ConvSpec{}), DimensionError);
  CHECK_THROWS_AS(conv2d(x, T({4, 1, 3, 3}), T{}, ConvSpec{3, 3, 1, Padding::valid, 2}),
                  DimensionError);
}

TEST_CASE("depthwise conv equals independent single-channel convolutions") {
  std::mt19937 rng(11);
  const T x = oracle::random_tensor<float>({5, 9, 9}, rng);
  const T w = oracle::random_tensor<float>({5, 1, 3, 3}, rng);
  const T b = oracle::random_tensor<float>({5}, rng);
  const ConvSpec dw{3, 3, 2, Padding::same, 5};
  const T y = conv2d(x, w, b, dw);
  for (int c = 0; c < 5; ++c) {
    const T xc({1, 9, 9}, x.values().segment(c * 81, 81));
    const T wc({1, 1, 3, 3}, w.values().segment(c * 9, 9));
    const T bc({1}, {b[c]});
    const T yc = conv2d(xc, wc, bc, ConvSpec{3, 3, 2, Padding::same, 1});
    const Eigen::Index plane = yc.size();
    CHECK((y.values().segment(c * plane, plane) - yc.values()).cwiseAbs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("conv2d and dense are linear") {
  std::mt19937 rng(3);
  const T a = oracle::random_tensor<float>({2, 6, 6}, rng);
  const T b = oracle::random_tensor<float>({2, 6, 6}, rng);
  const T w = oracle::random_tensor<float>({3, 2, 3, 3}, rng);
  const ConvSpec spec{3, 3, 1, Padding::same, 1};
  const float s = 1.7f, t = -0.4f;
  T mix(a.shape(), s * a.values() + t * b.values());
  const T lhs = conv2d(mix, w, T{}, spec);
  const T ya = conv2d(a, w, T{}, spec), yb = conv2d(b, w, T{}, spec);
  CHECK((lhs.values() - (s * ya.values() + t * yb.values())).cwiseAbs().maxCoeff() < 1e-5f);

  const T u = oracle::random_tensor<float>({7}, rng);
  const T v = oracle::random_tensor<float>({7}, rng);
  const T dw = oracle::random_tensor<float>({4, 7}, rng);
  const T zero({4});
  T uv(u.shape(), s * u.values() + t * v.values());
  const T dl = pestdet::dense(uv, dw, zero);
  const T du = pestdet::dense(u, dw, zero), dv = pestdet::dense(v, dw, zero);
  CHECK((dl.values() - (s * du.values() + t * dv.values())).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("pool2d") {
  const T x({1, 2, 2}, {1, 2, 3, 4});
  CHECK(pool2d(x, 2, 2, PoolMode::avg)[0] == doctest::Approx(2.5));
  CHECK(pool2d(x, 2, 2, PoolMode::max)[0] == 4.0f);
  CHECK(pool2d(T({3, 52, 52}), 2, 2, PoolMode::avg).shape() == Shape{3, 26, 26});
  CHECK(pool2d(T({1, 7, 7}), 2, 2, PoolMode::max).shape() == Shape{1, 3, 3});
  CHECK_THROWS_AS(pool2d(x, 3, 1, PoolMode::max), DimensionError);
}

TEST_CASE("activations") {
  const T x({4}, {-1, 3, 7, 0.5});
  CHECK(activation(x, ActivationKind::relu) == T({4}, {0, 3, 7, 0.5}));
  CHECK(activation(x, ActivationKind::relu6) == T({4}, {0, 3, 6, 0.5}));
  const T sm = activation(T({2}, {0, 0}), ActivationKind::softmax);
  CHECK(sm[0] == doctest::Approx(0.5));
  CHECK(sm[1] == doctest::Approx(0.5));

  std::mt19937 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const T logits = oracle::random_tensor<float>({3, 10}, rng, -30, 30);
    const T p = activation(logits, ActivationKind::softmax);
    for (int r = 0; r < 3; ++r) {
      const auto row = p.values().segment(r * 10, 10);
      CHECK(row.minCoeff() >= 0.0f);
      CHECK(std::abs(row.cast<double>().sum() - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("dense") {
  const T x({3}, {1, -2, 5});
  T eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(pestdet::dense(x, eye, T({3})) == x);
  const T b({2}, {0.25, -4});
  CHECK(pestdet::dense(x, T({2, 3}), b) == b);
  CHECK_THROWS_AS(pestdet::dense(x, T({2, 4}), b), DimensionError);

  std::mt19937 rng(9);
  const T in = oracle::random_tensor<float>({4}, rng);
  const T w = oracle::random_tensor<float>({3, 4}, rng);
  const T bias = oracle::random_tensor<float>({3}, rng);
  CHECK(oracle::max_abs_diff(pestdet::dense(in, w, bias),
                             oracle::dense(to_double(in), to_double(w), to_double(bias))) < 1e-6);
}

TEST_CASE("batchnorm") {
  const T x({2, 1, 2}, {0.5, -1, 3, 4});
  BatchNormParams<float> id{T({2}), T::constant({2}, 1), T::constant({2}, 1), T({2})};
  CHECK(batchnorm(x, id, 0.0f) == x);

  BatchNormParams<float> p{T({1}, {1}), T({1}, {4}), T({1}, {2}), T({1}, {1})};
  CHECK(batchnorm(T({1}, {2}), p, 0.0f)[0] == doctest::Approx(2.0));

  const T constant = T::constant({2, 3, 3}, 0.75f);
  BatchNormParams<float> centered{T::constant({2}, 0.75f), T({2}, {0.3f, 2.0f}),
                                  T({2}, {1.5f, -2.0f}), T({2}, {0.1f, -0.7f})};
  const T y = batchnorm(constant, centered, 1e-3f);
  for (int i = 0; i < 9; ++i) {
    CHECK(y[i] == doctest::Approx(0.1));
    CHECK(y[9 + i] == doctest::Approx(-0.7));
  }

  BatchNormParams<float> bad = id;
  bad.var[1] = -0.5f;
  CHECK_THROWS_AS(batchnorm(x, bad, 1e-3f), DimensionError);
}

TEST_CASE("simple backward cases") {
  const T x({2}, {3, -3});
  const T g = activation_backward(x, activation(x, ActivationKind::relu), ActivationKind::relu,
                                  T::constant({2}, 1));
  CHECK(g[0] == 1.0f);
  CHECK(g[1] == 0.0f);

  const T up = T::constant({1, 1, 1}, 1.0f);
  const T pg = pool2d_backward(T({1, 2, 2}, {1, 2, 3, 4}), 2, 2, PoolMode::avg, up);
  CHECK(pg == T::constant({1, 2, 2}, 0.25f));
  const T mg = pool2d_backward(T({1, 2, 2}, {1, 2, 3, 4}), 2, 2, PoolMode::max, up);
  CHECK(mg == T({1, 2, 2}, {0, 0, 0, 1}));
}

// Analytic gradients vs central differences with h = 1e-3 on float inputs.
// Losses are weighted sums evaluated in double.
TEST_CASE("kernel gradients match finite differences") {
  std::mt19937 rng(21);
  const double h = 1e-3;

  SUBCASE("dense") {
    const T x = oracle::random_tensor<float>({6}, rng);
    const T w = oracle::random_tensor<float>({4, 6}, rng);
    const T b = oracle::random_tensor<float>({4}, rng);
    const auto c = oracle::random_tensor<double>({4}, rng);
    const auto grads = dense_backward(x, w, c.cast<float>());
    auto by_w = [&](const T& ww) { return oracle::weighted_sum(pestdet::dense(x, ww, b), c); };
    auto by_x = [&](const T& xx) { return oracle::weighted_sum(pestdet::dense(xx, w, b), c); };
    auto by_b = [&](const T& bb) { return oracle::weighted_sum(pestdet::dense(x, w, bb), c); };
    CHECK(oracle::relative_error(grads.weights, oracle::finite_difference<float>(by_w, w, h)) < 1e-3);
    CHECK(oracle::relative_error(grads.input, oracle::finite_difference<float>(by_x, x, h)) < 1e-3);
    CHECK(oracle::relative_error(grads.bias, oracle::finite_difference<float>(by_b, b, h)) < 1e-3);
  }

  SUBCASE("conv2d, including strided and grouped") {
    for (const ConvSpec spec : {ConvSpec{3, 3, 1, Padding::same, 1}, ConvSpec{3, 3, 2, Padding::same, 2},
                                ConvSpec{2, 2, 1, Padding::valid, 1}}) {
      const T x = oracle::random_tensor<float>({2, 4, 4}, rng);
      const T w = oracle::random_tensor<float>({2, 2 / spec.groups, spec.kernel_h, spec.kernel_w}, rng);
      const T b = oracle::random_tensor<float>({2}, rng);
      const T y = conv2d(x, w, b, spec);
      const auto c = oracle::random_tensor<double>(y.shape(), rng);
      const auto grads = conv2d_backward(x, w, spec, c.cast<float>());
      auto by_w = [&](const T& ww) { return oracle::weighted_sum(conv2d(x, ww, b, spec), c); };
      auto by_x = [&](const T& xx) { return oracle::weighted_sum(conv2d(xx, w, b, spec), c); };
      auto by_b = [&](const T& bb) { return oracle::weighted_sum(conv2d(x, w, bb, spec), c); };
      CHECK(oracle::relative_error(grads.weights, oracle::finite_difference<float>(by_w, w, h)) < 1e-3);
      CHECK(oracle::relative_error(grads.input, oracle::finite_difference<float>(by_x, x, h)) < 1e-3);
      CHECK(oracle::relative_error(grads.bias, oracle::finite_difference<float>(by_b, b, h)) < 1e-3);
    }
  }

  SUBCASE("pooling") {
    for (const PoolMode mode : {PoolMode::avg, PoolMode::max}) {
      const T x = oracle::random_tensor<float>({2, 6, 6}, rng);
      const T y = pool2d(x, 2, 2, mode);
      const auto c = oracle::random_tensor<double>(y.shape(), rng);
      const T g = pool2d_backward(x, 2, 2, mode, c.cast<float>());
      auto f = [&](const T& xx) { return oracle::weighted_sum(pool2d(xx, 2, 2, mode), c); };
      CHECK(oracle::relative_error(g, oracle::finite_difference<float>(f, x, h)) < 1e-3);
    }
  }

  SUBCASE("activations") {
    for (const ActivationKind kind :
         {ActivationKind::relu, ActivationKind::relu6, ActivationKind::softmax}) {
      // softmax saturates in float for wide logits; keep its inputs moderate
      const double span = kind == ActivationKind::softmax ? 2.0 : 8.0;
      T x = oracle::random_tensor<float>({2, 8}, rng, -span, span);
      // keep samples away from the relu/relu6 kinks
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (std::abs(x[i]) < 0.1f) x[i] += 0.2f;
        if (std::abs(x[i] - 6.0f) < 0.1f) x[i] += 0.2f;
      }
      const T y = activation(x, kind);
      const auto c = oracle::random_tensor<double>(y.shape(), rng);
      const T g = activation_backward(x, y, kind, c.cast<float>());
      auto f = [&](const T& xx) { return oracle::weighted_sum(activation(xx, kind), c); };
      CAPTURE(static_cast<int>(kind));
      CHECK(oracle::relative_error(g, oracle::finite_difference<float>(f, x, h)) < 1e-3);
    }
  }

  SUBCASE("batchnorm") {
    const T x = oracle::random_tensor<float>({3, 4, 4}, rng);
    BatchNormParams<float> p{oracle::random_tensor<float>({3}, rng),
                             oracle::random_tensor<float>({3}, rng, 0.5, 2.0),
                             oracle::random_tensor<float>({3}, rng),
                             oracle::random_tensor<float>({3}, rng)};
    const auto c = oracle::random_tensor<double>(x.shape(), rng);
    const auto grads = batchnorm_backward(x, p, 1e-3f, c.cast<float>());
    auto by_x = [&](const T& xx) { return oracle::weighted_sum(batchnorm(xx, p, 1e-3f), c); };
    auto by_gamma = [&](const T& gg) {
      auto q = p;
      q.gamma = gg;
      return oracle::weighted_sum(batchnorm(x, q, 1e-3f), c);
    };
    auto by_beta = [&](const T& bb) {
      auto q = p;
      q.beta = bb;
      return oracle::weighted_sum(batchnorm(x, q, 1e-3f), c);
    };
    CHECK(oracle::relative_error(grads.input, oracle::finite_difference<float>(by_x, x, h)) < 1e-3);
    CHECK(oracle::relative_error(grads.gamma, oracle::finite_difference<float>(by_gamma, p.gamma, h)) < 1e-3);
    CHECK(oracle::relative_error(grads.beta, oracle::finite_difference<float>(by_beta, p.beta, h)) < 1e-3);
  }
}

TEST_CASE("non-finite results are an error") {
  const T x({1}, {1});
  BatchNormParams<float> zero_var{T({1}), T({1}), T({1}, {1}), T({1})};
  CHECK_THROWS_AS(batchnorm(x, zero_var, 0.0f), NonFiniteError);
  const T big = T::constant({2}, 3e38f);
  CHECK_THROWS_AS(pestdet::dense(big, T::constant({1, 2}, 10.0f), T({1})), NonFiniteError);
}
