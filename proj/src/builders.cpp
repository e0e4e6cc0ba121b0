#include "pestdet/builders.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace pestdet {

GraphBuilder::GraphBuilder(std::string arch, Shape input_shape)
    : arch_(std::move(arch)), input_shape_(std::move(input_shape)) {}

std::string GraphBuilder::append(LayerSpec layer) {
  std::vector<LayerSpec> trial = layers_;
  trial.push_back(layer);
  // infer_shapes re-validates the whole prefix; graphs here are at most a
  // few hundred layers so the quadratic cost is irrelevant.
  shapes_ = infer_shapes(trial, input_shape_);
  layers_ = std::move(trial);
  return layers_.back().name;
}

const Shape& GraphBuilder::shape_of(const std::string& name) const {
  if (name == kGraphInput) return input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return shapes_[i];
  }
  throw ModelError("unknown layer '" + name + "'");
}

std::string GraphBuilder::conv(const std::string& name, const std::string& from, int out_channels,
                               ConvSpec spec, std::vector<std::uint8_t> connections) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::conv;
  l.inputs = {from};
  l.conv = spec;
  l.out_channels = out_channels;
  l.connections = std::move(connections);
  return append(std::move(l));
}

std::string GraphBuilder::depthwise_conv(const std::string& name, const std::string& from,
                                         ConvSpec spec) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::depthwise_conv;
  l.inputs = {from};
  l.conv = spec;
  l.conv.groups = shape_of(from).at(0);
  l.out_channels = l.conv.groups;
  return append(std::move(l));
}

std::string GraphBuilder::dense(const std::string& name, const std::string& from, int units) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::dense;
  l.inputs = {from};
  l.out_channels = units;
  return append(std::move(l));
}

std::string GraphBuilder::batchnorm(const std::string& name, const std::string& from, double eps) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::batchnorm;
  l.inputs = {from};
  l.eps = eps;
  return append(std::move(l));
}

std::string GraphBuilder::pool(const std::string& name, const std::string& from, PoolParams params) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::pool;
  l.inputs = {from};
  l.pool = params;
  return append(std::move(l));
}

std::string GraphBuilder::activation(const std::string& name, const std::string& from,
                                     ActivationKind kind) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::activation;
  l.inputs = {from};
  l.act = kind;
  return append(std::move(l));
}

std::string GraphBuilder::dropout(const std::string& name, const std::string& from, double rate) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::dropout;
  l.inputs = {from};
  l.dropout_rate = rate;
  return append(std::move(l));
}

std::string GraphBuilder::flatten(const std::string& name, const std::string& from) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::flatten;
  l.inputs = {from};
  return append(std::move(l));
}

std::string GraphBuilder::residual_add(const std::string& name, const std::string& a,
                                       const std::string& b) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::residual_add;
  l.inputs = {a, b};
  return append(std::move(l));
}

ModelGraph GraphBuilder::finish(int num_classes, std::uint64_t seed) const {
  ModelGraph model{arch_, input_shape_, num_classes, layers_, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    if (!has_weights(layer.kind)) continue;
    const Shape& in = shape_of(layer.inputs.at(0));
    const auto shapes = expected_weight_shapes(layer, in);
    auto& tensors = model.weights[layer.name];
    if (layer.kind == LayerKind::batchnorm) {
      tensors = {Tensor<float>::constant(shapes[0], 1.0f), Tensor<float>(shapes[1]),
                 Tensor<float>(shapes[2]), Tensor<float>::constant(shapes[3], 1.0f)};
      continue;
    }
    const Shape& ws = shapes[0];
    const auto fan_in = static_cast<double>(shape_product(ws) / ws[0]);
    std::uniform_real_distribution<float> dist(-static_cast<float>(std::sqrt(6.0 / fan_in)),
                                               static_cast<float>(std::sqrt(6.0 / fan_in)));
    Tensor<float> w(ws);
    for (Eigen::Index k = 0; k < w.size(); ++k) w[k] = dist(rng);
    if (!layer.connections.empty()) w = detail::masked_conv_weights(layer, w);
    tensors = {std::move(w), Tensor<float>(shapes[1])};
  }
  validate(model);
  return model;
}

std::vector<std::uint8_t> lenet_c3_connections() {
  // Rows are C3 output maps, columns S2 input maps.
  static const std::vector<std::vector<int>> table = {
      {0, 1, 2},       {1, 2, 3},       {2, 3, 4},       {3, 4, 5},       {0, 4, 5},
      {0, 1, 5},       {0, 1, 2, 3},    {1, 2, 3, 4},    {2, 3, 4, 5},    {0, 3, 4, 5},
      {0, 1, 4, 5},    {0, 1, 2, 5},    {0, 1, 3, 4},    {1, 2, 4, 5},    {0, 2, 3, 5},
      {0, 1, 2, 3, 4, 5}};
  std::vector<std::uint8_t> mask(16 * 6, 0);
  for (std::size_t o = 0; o < table.size(); ++o) {
    for (int i : table[o]) mask[o * 6 + i] = 1;
  }
  return mask;
}

ModelGraph build_lenet5(int input_size, int num_classes, std::uint64_t seed) {
  if (input_size < 32) {
    throw ModelError("LeNet-5 needs input_size >= 32 for its 5x5/2x2 chain, got " +
                     std::to_string(input_size));
  }
  const ConvSpec k5{5, 5, 1, Padding::valid, 1};
  const PoolParams sub{2, 2, PoolMode::avg};
  GraphBuilder b("lenet5", {1, input_size, input_size});
  auto x = b.conv("conv1", kGraphInput, 6, k5);
  x = b.activation("relu1", x, ActivationKind::relu);
  x = b.pool("pool1", x, sub);
  x = b.conv("conv2", x, 16, k5, lenet_c3_connections());
  x = b.activation("relu2", x, ActivationKind::relu);
  x = b.pool("pool2", x, sub);
  x = b.conv("conv3", x, 120, k5);
  x = b.activation("relu3", x, ActivationKind::relu);
  x = b.flatten("flatten", x);
  x = b.dense("fc", x, num_classes);
  b.activation("softmax", x, ActivationKind::softmax);
  return b.finish(num_classes, seed);
}

ModelGraph build_vgg16(int input_size, int num_classes, std::uint64_t seed) {
  if (input_size < 32) {
    throw ModelError("VGG16 needs input_size >= 32 for five 2x2 pools, got " +
                     std::to_string(input_size));
  }
  const ConvSpec k3{3, 3, 1, Padding::same, 1};
  const PoolParams pool{2, 2, PoolMode::max};
  const std::vector<std::vector<int>> blocks = {
      {64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  GraphBuilder b("vgg16", {1, input_size, input_size});
  std::string x = kGraphInput;
  int conv_index = 0;
  for (std::size_t blk = 0; blk < blocks.size(); ++blk) {
    for (int width : blocks[blk]) {
      ++conv_index;
      x = b.conv("conv" + std::to_string(conv_index), x, width, k3);
      x = b.activation("relu" + std::to_string(conv_index), x, ActivationKind::relu);
    }
    x = b.pool("pool" + std::to_string(blk + 1), x, pool);
  }
  x = b.flatten("flatten", x);
  x = b.dropout("drop1", x, 0.5);
  x = b.dense("fc1", x, 256);
  x = b.activation("fc1_relu", x, ActivationKind::relu);
  x = b.dropout("drop2", x, 0.5);
  x = b.dense("fc", x, num_classes);
  b.activation("softmax", x, ActivationKind::softmax);
  return b.finish(num_classes, seed);
}

namespace {

int make_divisible(double value, int divisor = 8) {
  int v = std::max(divisor, static_cast<int>(value + divisor / 2.0) / divisor * divisor);
  if (v < 0.9 * value) v += divisor;
  return v;
}

}  // namespace

ModelGraph build_mobilenetv2(int input_size, int num_classes, double width_mult,
                             std::uint64_t seed) {
  if (!(width_mult > 0.0)) throw ModelError("MobileNetV2 width multiplier must be positive");
  struct Stage {
    int expansion, channels, repeats, stride;
  };
  const std::vector<Stage> stages = {{1, 16, 1, 1},  {6, 24, 2, 2},  {6, 32, 3, 2}, {6, 64, 4, 2},
                                     {6, 96, 3, 1},  {6, 160, 3, 2}, {6, 320, 1, 1}};
  const ConvSpec pointwise{1, 1, 1, Padding::same, 1};
  GraphBuilder b("mobilenetv2", {1, input_size, input_size});

  int channels = make_divisible(32 * width_mult);
  auto x = b.conv("stem", kGraphInput, channels, ConvSpec{3, 3, 2, Padding::same, 1});
  x = b.batchnorm("stem_bn", x);
  x = b.activation("stem_relu", x, ActivationKind::relu6);

  int block = 0;
  for (const auto& stage : stages) {
    const int out = make_divisible(stage.channels * width_mult);
    for (int r = 0; r < stage.repeats; ++r) {
      const int stride = r == 0 ? stage.stride : 1;
      const std::string p = "block" + std::to_string(block++);
      const std::string block_in = x;
      x = b.conv(p + "_expand", x, channels * stage.expansion, pointwise);
      x = b.batchnorm(p + "_expand_bn", x);
      x = b.activation(p + "_expand_relu", x, ActivationKind::relu6);
      x = b.depthwise_conv(p + "_dw", x, ConvSpec{3, 3, stride, Padding::same, 1});
      x = b.batchnorm(p + "_dw_bn", x);
      x = b.activation(p + "_dw_relu", x, ActivationKind::relu6);
      x = b.conv(p + "_project", x, out, pointwise);
      x = b.batchnorm(p + "_project_bn", x);
      if (stride == 1 && channels == out) x = b.residual_add(p + "_add", block_in, x);
      channels = out;
    }
  }
  const int last = make_divisible(1280 * std::max(1.0, width_mult));
  x = b.conv("head", x, last, pointwise);
  x = b.batchnorm("head_bn", x);
  x = b.activation("head_relu", x, ActivationKind::relu6);
  const int spatial = b.shape_of(x).at(1);
  x = b.pool("global_pool", x, PoolParams{spatial, spatial, PoolMode::avg});
  x = b.flatten("flatten", x);
  x = b.dropout("drop", x, 0.2);
  x = b.dense("fc", x, num_classes);
  b.activation("softmax", x, ActivationKind::softmax);
  return b.finish(num_classes, seed);
}

ModelGraph build_architecture(const std::string& arch, int input_size, int num_classes,
                              double width_mult, std::uint64_t seed) {
  if (arch == "lenet5") return build_lenet5(input_size, num_classes, seed);
  if (arch == "vgg16") return build_vgg16(input_size, num_classes, seed);
  if (arch == "mobilenetv2") return build_mobilenetv2(input_size, num_classes, width_mult, seed);
  throw ModelError("unknown architecture '" + arch + "' (expected lenet5, vgg16 or mobilenetv2)");
}

}  // namespace pestdet
