#include "pestdet/model.hpp"

#include <iomanip>
#include <sstream>

namespace pestdet {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::depthwise_conv: return "depthwise_conv";
    case LayerKind::pool: return "pool";
    case LayerKind::dense: return "dense";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::activation: return "activation";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::residual_add: return "residual_add";
    case LayerKind::channel_slice: return "channel_slice";
  }
  return "unknown";
}

std::vector<Shape> expected_weight_shapes(const LayerSpec& layer, const Shape& in) {
  switch (layer.kind) {
    case LayerKind::conv:
    case LayerKind::depthwise_conv: {
      const int groups = layer.conv.groups;
      return {{layer.out_channels, in.at(0) / groups, layer.conv.kernel_h, layer.conv.kernel_w},
              {layer.out_channels}};
    }
    case LayerKind::dense:
      return {{layer.out_channels, static_cast<int>(shape_product(in))}, {layer.out_channels}};
    case LayerKind::batchnorm:
      return {{in.at(0)}, {in.at(0)}, {in.at(0)}, {in.at(0)}};
    default:
      return {};
  }
}

namespace {

[[noreturn]] void fail(const LayerSpec& layer, const std::string& what) {
  throw ModelError("layer '" + layer.name + "' (" + to_string(layer.kind) + "): " + what);
}

Shape layer_output_shape(const LayerSpec& layer, const std::vector<Shape>& ins) {
  const Shape& in = ins.at(0);
  switch (layer.kind) {
    case LayerKind::conv:
    case LayerKind::depthwise_conv: {
      const auto& c = layer.conv;
      if (in.size() != 3) fail(layer, "needs a [C,H,W] input, got " + shape_string(in));
      if (c.kernel_h <= 0 || c.kernel_w <= 0 || c.stride <= 0 || c.groups <= 0 ||
          layer.out_channels <= 0) {
        fail(layer, "kernel, stride, groups and output channels must be positive");
      }
      if (in[0] % c.groups || layer.out_channels % c.groups) {
        fail(layer, "channels not divisible by groups");
      }
      if (layer.kind == LayerKind::depthwise_conv && c.groups != in[0]) {
        fail(layer, "depthwise conv needs groups == input channels");
      }
      if (!layer.connections.empty() &&
          layer.connections.size() != static_cast<std::size_t>(layer.out_channels) * in[0]) {
        fail(layer, "connection table size does not match channels");
      }
      if (c.padding == Padding::valid && (in[1] < c.kernel_h || in[2] < c.kernel_w)) {
        fail(layer, "input " + shape_string(in) + " smaller than kernel");
      }
      return {layer.out_channels, conv_output_size(in[1], c.kernel_h, c.stride, c.padding),
              conv_output_size(in[2], c.kernel_w, c.stride, c.padding)};
    }
    case LayerKind::pool: {
      if (in.size() != 3) fail(layer, "needs a [C,H,W] input");
      const auto& p = layer.pool;
      if (p.window <= 0 || p.stride <= 0 || p.window > in[1] || p.window > in[2]) {
        fail(layer, "window " + std::to_string(p.window) + " does not fit input " + shape_string(in));
      }
      return {in[0], (in[1] - p.window) / p.stride + 1, (in[2] - p.window) / p.stride + 1};
    }
    case LayerKind::dense:
      if (in.size() != 1) fail(layer, "needs a flat input, got " + shape_string(in));
      if (layer.out_channels <= 0) fail(layer, "unit count must be positive");
      return {layer.out_channels};
    case LayerKind::batchnorm:
    case LayerKind::activation:
      return in;
    case LayerKind::dropout:
      if (layer.dropout_rate < 0.0 || layer.dropout_rate >= 1.0) fail(layer, "rate must be in [0,1)");
      return in;
    case LayerKind::flatten:
      return {static_cast<int>(shape_product(in))};
    case LayerKind::residual_add:
      if (ins.size() != 2) fail(layer, "needs exactly two inputs");
      if (ins[0] != ins[1]) {
        fail(layer, "input shapes " + shape_string(ins[0]) + " and " + shape_string(ins[1]) + " differ");
      }
      return in;
    case LayerKind::channel_slice: {
      if (layer.slice_begin < 0 || layer.slice_end > in.at(0) || layer.slice_begin >= layer.slice_end) {
        fail(layer, "channel range out of bounds");
      }
      Shape out = in;
      out[0] = layer.slice_end - layer.slice_begin;
      return out;
    }
  }
  fail(layer, "unknown kind");
}

}  // namespace

std::vector<Shape> infer_shapes(const std::vector<LayerSpec>& layers, const Shape& input_shape) {
  const auto sources = detail::resolve_inputs(layers);
  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    const std::size_t arity = layer.kind == LayerKind::residual_add ? 2 : 1;
    if (layer.inputs.size() != arity) {
      fail(layer, "expects " + std::to_string(arity) + " input(s), has " +
                      std::to_string(layer.inputs.size()));
    }
    std::vector<Shape> ins;
    for (int src : sources[i]) ins.push_back(src < 0 ? input_shape : shapes[src]);
    shapes.push_back(layer_output_shape(layer, ins));
  }
  return shapes;
}

std::string summary(const ModelGraph& model) {
  const auto shapes = infer_shapes(model.layers, model.input_shape);
  std::ostringstream out;
  out << "model " << model.arch << " input " << shape_string(model.input_shape) << "\n";
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& layer = model.layers[i];
    std::int64_t params = 0;
    if (auto it = model.weights.find(layer.name); it != model.weights.end()) {
      for (const auto& t : it->second) params += t.size();
    }
    out << std::left << std::setw(24) << layer.name << std::setw(16) << to_string(layer.kind)
        << std::setw(16) << shape_string(shapes[i]) << params << "\n";
  }
  out << "total parameters " << parameter_count(model) << "\n";
  return out.str();
}

}  // namespace pestdet
