#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "pestdet/builders.hpp"
#include "pestdet/weights_io.hpp"

using namespace pestdet;
using T = Tensor<float>;

namespace {

ModelGraph zeroed(ModelGraph m) {
  for (auto& [name, tensors] : m.weights)
    for (auto& t : tensors) t.values().setZero();
  return m;
}

int count_kind(const ModelGraph& m, LayerKind kind) {
  int n = 0;
  for (const auto& l : m.layers) n += l.kind == kind;
  return n;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pestdet_test_" + name);
}

}  // namespace

TEST_CASE("LeNet-5 structure and shape chain") {
  const ModelGraph m = build_lenet5();
  CHECK(count_kind(m, LayerKind::conv) == 3);
  CHECK(count_kind(m, LayerKind::pool) == 2);
  CHECK(count_kind(m, LayerKind::dense) == 1);
  CHECK(m.layers.back().act == ActivationKind::softmax);

  const auto shapes = infer_shapes(m.layers, m.input_shape);
  std::vector<int> spatial;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (m.layers[i].kind == LayerKind::conv || m.layers[i].kind == LayerKind::pool) {
      spatial.push_back(shapes[i][1]);
    }
  }
  CHECK(spatial == std::vector<int>{48, 24, 20, 10, 6});

  // C3 reads 60 of the 96 possible S2->C3 map pairs
  const auto& c3 = m.layers[m.index_of("conv2")];
  int connected = 0;
  for (auto c : c3.connections) connected += c;
  CHECK(connected == 60);

  CHECK_THROWS_AS(build_lenet5(28), ModelError);
}

TEST_CASE("VGG16 structure") {
  const ModelGraph m = build_vgg16();
  CHECK(count_kind(m, LayerKind::conv) == 13);
  const auto shapes = infer_shapes(m.layers, m.input_shape);
  std::vector<int> after_pool;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    if (l.kind == LayerKind::pool) after_pool.push_back(shapes[i][1]);
    if (l.kind == LayerKind::conv) {
      CHECK(l.conv == ConvSpec{3, 3, 1, Padding::same, 1});
    }
    if (l.kind == LayerKind::pool) {
      CHECK(l.pool.window == 2);
      CHECK(l.pool.stride == 2);
      CHECK(l.pool.mode == PoolMode::max);
    }
  }
  CHECK(after_pool == std::vector<int>{26, 13, 6, 3, 1});
  CHECK(count_kind(m, LayerKind::dropout) == 2);
}

TEST_CASE("MobileNetV2 inverted residual blocks") {
  const ModelGraph m = build_mobilenetv2();
  const auto shapes = infer_shapes(m.layers, m.input_shape);
  int residuals = 0, stride2_blocks = 0, blocks = 0;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    if (l.kind == LayerKind::depthwise_conv) {
      ++blocks;
      stride2_blocks += l.conv.stride == 2;
      // expand conv -> bn -> relu6 precedes, relu6 follows the depthwise bn
      CHECK(m.layers[i - 1].act == ActivationKind::relu6);
      CHECK(m.layers[i - 3].kind == LayerKind::conv);
      CHECK(m.layers[i + 2].act == ActivationKind::relu6);
      // projection: 1x1 conv and batchnorm, never followed by an activation
      const auto& project = m.layers[i + 3];
      CHECK(project.kind == LayerKind::conv);
      CHECK(project.conv.kernel_h == 1);
      CHECK(m.layers[i + 4].kind == LayerKind::batchnorm);
      if (i + 5 < m.layers.size()) CHECK(m.layers[i + 5].kind != LayerKind::activation);

      const Shape& block_in = shapes[i - 4];
      const Shape& block_out = shapes[i + 4];
      const bool shortcut = l.conv.stride == 1 && block_in == block_out;
      const bool has_add = m.layers[i + 5].kind == LayerKind::residual_add;
      CHECK(has_add == shortcut);
      residuals += has_add;
    }
  }
  CHECK(blocks == 17);
  CHECK(stride2_blocks == 4);
  CHECK(residuals == count_kind(m, LayerKind::residual_add));
  CHECK(residuals > 0);
  CHECK(shapes.back() == Shape{2});

  const ModelGraph full = build_mobilenetv2(52, 2, 1.0);
  CHECK(parameter_count(full) > parameter_count(m));
}

TEST_CASE("all-zero weights give a uniform prediction") {
  const T tile = T::constant({1, 52, 52}, 0.3f);
  for (const auto& m : {build_lenet5(), build_vgg16(), build_mobilenetv2()}) {
    const T p = forward(zeroed(m), tile);
    CHECK(p.shape() == Shape{2});
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
  }
}

TEST_CASE("forward is a deterministic probability vector") {
  std::mt19937 rng(4);
  for (const auto& m : {build_lenet5(52, 2, 3), build_mobilenetv2(52, 2, 0.35, 3)}) {
    for (int i = 0; i < 3; ++i) {
      const T x = oracle::random_tensor<float>({1, 52, 52}, rng, 0.0, 1.0);
      const T a = forward(m, x);
      const T b = forward(m, x);
      CHECK(a == b);
      CHECK(std::abs(a.values().cast<double>().sum() - 1.0) < 1e-6);
      CHECK(a.values().minCoeff() >= 0.0f);
    }
  }
  CHECK_THROWS_AS(forward(build_lenet5(), T({1, 48, 48})), DimensionError);
}

TEST_CASE("builders are pure functions of their arguments") {
  CHECK(summary(build_lenet5(52, 2, 9)) == summary(build_lenet5(52, 2, 9)));
  CHECK(encode_weights(build_lenet5(52, 2, 9)) == encode_weights(build_lenet5(52, 2, 9)));
  CHECK(encode_weights(build_lenet5(52, 2, 9)) != encode_weights(build_lenet5(52, 2, 10)));
  CHECK(parameter_count(build_lenet5(52, 2, 1)) == parameter_count(build_lenet5(52, 2, 2)));
  // conv1 156 + conv2 2416 + conv3 48120 + fc 8642
  CHECK(parameter_count(build_lenet5()) == 156 + 16 * 6 * 25 + 16 + 120 * 16 * 25 + 120 + 2 * 4320 + 2);
}

TEST_CASE("LeNet-5 forward matches a layer-by-layer replay") {
  const ModelGraph m = build_lenet5(52, 2, 17);
  std::mt19937 rng(8);
  const T x = oracle::random_tensor<float>({1, 52, 52}, rng, 0.0, 1.0);

  auto w = [&](const std::string& name, int i) { return m.weights.at(name).at(i).cast<double>(); };
  auto relu = [](Tensor<double> t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = std::max(0.0, t[i]);
    return t;
  };
  auto avgpool = [](const Tensor<double>& t) {
    Tensor<double> out({t.dim(0), t.dim(1) / 2, t.dim(2) / 2});
    for (int c = 0; c < out.dim(0); ++c)
      for (int y = 0; y < out.dim(1); ++y)
        for (int xx = 0; xx < out.dim(2); ++xx)
          out.at(c, y, xx) = 0.25 * (t.at(c, 2 * y, 2 * xx) + t.at(c, 2 * y + 1, 2 * xx) +
                                     t.at(c, 2 * y, 2 * xx + 1) + t.at(c, 2 * y + 1, 2 * xx + 1));
    return out;
  };
  // C3: apply the connection table explicitly
  Tensor<double> c3w = w("conv2", 0);
  const auto table = lenet_c3_connections();
  for (int o = 0; o < 16; ++o)
    for (int i = 0; i < 6; ++i)
      if (!table[o * 6 + i]) c3w.values().segment((o * 6 + i) * 25, 25).setZero();

  auto h = relu(oracle::conv2d(x.cast<double>(), w("conv1", 0), w("conv1", 1), 1, false, 1));
  h = avgpool(h);
  h = relu(oracle::conv2d(h, c3w, w("conv2", 1), 1, false, 1));
  h = avgpool(h);
  h = relu(oracle::conv2d(h, w("conv3", 0), w("conv3", 1), 1, false, 1));
  const auto logits = oracle::dense(h.reshaped({static_cast<int>(h.size())}), w("fc", 0), w("fc", 1));
  const double mx = logits.values().maxCoeff();
  const double z = std::exp(logits[0] - mx) + std::exp(logits[1] - mx);
  Tensor<double> expected({2}, {std::exp(logits[0] - mx) / z, std::exp(logits[1] - mx) / z});

  CHECK(oracle::max_abs_diff(forward(m, x), expected) < 1e-5);
}

TEST_CASE("dropout is identity in inference and active in training") {
  const ModelGraph m = build_vgg16(32, 2, 5);
  std::mt19937 rng(2);
  const T x = oracle::random_tensor<float>({1, 32, 32}, rng, 0.0, 1.0);
  const auto inference = forward_trace(m, x, Mode::inference);
  std::mt19937 drop_rng(1);
  const auto training = forward_trace(m, x, Mode::training, &drop_rng);
  const int d = m.index_of("drop2");
  CHECK(inference.outputs[d] == inference.outputs[d - 1]);
  CHECK(!(training.outputs[d] == training.outputs[d - 1]));
  CHECK_THROWS_AS(forward_trace(m, x, Mode::training, nullptr), ModelError);
}

TEST_CASE("backward needs a recorded forward pass") {
  const ModelGraph m = build_lenet5();
  Trace<float> empty;
  CHECK_THROWS_AS(backward(m, empty, T({2})), ModelError);
}

TEST_CASE("weight file round trip is bitwise lossless") {
  const ModelGraph m = build_mobilenetv2(52, 2, 0.35, 77);
  const auto path = temp_path("mnv2.pdnw");
  save_weights(m, path);
  const ModelGraph loaded = load_weights(path, build_mobilenetv2(52, 2, 0.35, 1));
  CHECK(loaded.weights.size() == m.weights.size());
  for (const auto& [name, tensors] : m.weights) {
    const auto& other = loaded.weights.at(name);
    REQUIRE(other.size() == tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      CHECK(tensors[i].shape() == other[i].shape());
      CHECK(std::memcmp(tensors[i].data(), other[i].data(), tensors[i].size() * sizeof(float)) == 0);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("weight file header layout") {
  const auto bytes = encode_weights(build_lenet5());
  REQUIRE(bytes.size() > 10);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PDNW");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 4);  // conv1, conv2, conv3, fc
  CHECK(bytes[7] == 0);
  CHECK(bytes[10] == 5);  // name length of "conv1"
  CHECK(bytes[11] == 0);
  CHECK(std::string(bytes.begin() + 12, bytes.begin() + 17) == "conv1");
  CHECK(bytes[17] == 2);  // tensors
  CHECK(bytes[18] == 4);  // rank of conv1 weights
  // total: header 10 + per layer (2 + name + 1) + per tensor (1 + 4*rank + 4*n)
  std::size_t expected = 10;
  const ModelGraph m = build_lenet5();
  for (const auto& name : {"conv1", "conv2", "conv3", "fc"}) {
    expected += 3 + std::string(name).size();
    for (const auto& t : m.weights.at(name)) expected += 1 + 4 * t.rank() + 4 * t.size();
  }
  CHECK(bytes.size() == expected);
}

TEST_CASE("weight file errors are distinct") {
  auto bytes = encode_weights(build_lenet5());

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_weights(bad_magic), BadMagicError);

  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK_THROWS_AS(decode_weights(bad_version), VersionError);

  for (std::size_t cut : {std::size_t{5}, std::size_t{11}, std::size_t{20}, bytes.size() - 1}) {
    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    CHECK_THROWS_AS(decode_weights(truncated), TruncatedError);
  }

  const auto vgg = decode_weights(encode_weights(build_vgg16()));
  try {
    apply_weights(build_lenet5(), vgg);
    FAIL("expected a shape mismatch");
  } catch (const ShapeMismatchError& e) {
    CHECK(std::string(e.what()).find("'conv1'") != std::string::npos);
  }

  CHECK_THROWS_AS(load_weights(temp_path("does_not_exist.pdnw"), build_lenet5()), IoError);
}
