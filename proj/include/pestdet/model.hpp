#ifndef PESTDET_MODEL_HPP
#define PESTDET_MODEL_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "pestdet/kernels.hpp"

namespace pestdet {

enum class LayerKind {
  conv,
  depthwise_conv,
  pool,
  dense,
  batchnorm,
  activation,
  dropout,
  flatten,
  residual_add,
  // Produced only by horizontal fusion: selects output channels
  // [slice_begin, slice_end) of its input.
  channel_slice,
};

const char* to_string(LayerKind kind);

struct PoolParams {
  int window = 2;
  int stride = 2;
  PoolMode mode = PoolMode::max;
};

/// One node of a model graph. Only the fields relevant to `kind` are read.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  std::vector<std::string> inputs;

  ConvSpec conv;
  int out_channels = 0;  // conv output channels, dense units
  // Optional [out_channels x in_channels] table; 0 disables a connection.
  std::vector<std::uint8_t> connections;
  PoolParams pool;
  ActivationKind act = ActivationKind::relu;
  double dropout_rate = 0.0;
  double eps = 1e-3;
  int slice_begin = 0;
  int slice_end = 0;
  bool trainable = true;
};

inline bool has_weights(LayerKind kind) {
  return kind == LayerKind::conv || kind == LayerKind::depthwise_conv ||
         kind == LayerKind::dense || kind == LayerKind::batchnorm;
}

/// Conv, depthwise conv and dense: the layers whose first tensor is a weight
/// matrix (as opposed to batchnorm's per-channel parameters).
inline bool is_linear_weighted(LayerKind kind) {
  return kind == LayerKind::conv || kind == LayerKind::depthwise_conv || kind == LayerKind::dense;
}

inline constexpr const char* kGraphInput = "input";

template <typename Scalar>
using WeightMap = std::map<std::string, std::vector<Tensor<Scalar>>>;

/// Layers in topological order plus their parameters. Weighted layers hold
/// {weights, bias} (conv, dense) or {gamma, beta, mean, var} (batchnorm).
template <typename Scalar>
struct Model {
  std::string arch;
  Shape input_shape;
  int num_classes = 2;
  std::vector<LayerSpec> layers;
  WeightMap<Scalar> weights;

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> out{arch, input_shape, num_classes, layers, {}};
    for (const auto& [name, tensors] : weights) {
      auto& dst = out.weights[name];
      for (const auto& t : tensors) dst.push_back(t.template cast<Other>());
    }
    return out;
  }
};

using ModelGraph = Model<float>;

/// Output shape of every layer; throws ModelError for ill-formed graphs
/// (forward references, unknown inputs, mismatched residual shapes).
std::vector<Shape> infer_shapes(const std::vector<LayerSpec>& layers, const Shape& input_shape);

/// Expected parameter shapes of one layer given its input shape.
std::vector<Shape> expected_weight_shapes(const LayerSpec& layer, const Shape& input_shape);

/// Structural and weight-shape validation of a complete model.
template <typename Scalar>
void validate(const Model<Scalar>& model) {
  const auto shapes = infer_shapes(model.layers, model.input_shape);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& layer = model.layers[i];
    if (!has_weights(layer.kind)) continue;
    const int src = model.index_of(layer.inputs.at(0));
    const Shape& in_shape = src < 0 ? model.input_shape : shapes[src];
    const auto expected = expected_weight_shapes(layer, in_shape);
    auto it = model.weights.find(layer.name);
    if (it == model.weights.end()) throw ModelError("layer '" + layer.name + "' has no weights");
    if (it->second.size() != expected.size()) {
      throw ModelError("layer '" + layer.name + "' expects " + std::to_string(expected.size()) +
                       " tensors, has " + std::to_string(it->second.size()));
    }
    for (std::size_t t = 0; t < expected.size(); ++t) {
      if (it->second[t].shape() != expected[t]) {
        throw ModelError("layer '" + layer.name + "' tensor " + std::to_string(t) + " has shape " +
                         shape_string(it->second[t].shape()) + ", expected " +
                         shape_string(expected[t]));
      }
    }
  }
  if (shapes.empty() || shapes.back() != Shape{model.num_classes}) {
    throw ModelError("model output shape " + (shapes.empty() ? "[]" : shape_string(shapes.back())) +
                     " does not match " + std::to_string(model.num_classes) + " classes");
  }
}

enum class Mode { inference, training };

/// Activations recorded by a forward pass; required by backward().
template <typename Scalar>
struct Trace {
  Tensor<Scalar> input;
  std::vector<Tensor<Scalar>> outputs;
  std::vector<Tensor<Scalar>> dropout_masks;  // indexed by layer, empty unless dropout in training
  bool recorded = false;
};

template <typename Scalar>
using Gradients = WeightMap<Scalar>;

namespace detail {

template <typename Scalar>
Tensor<Scalar> masked_conv_weights(const LayerSpec& layer, const Tensor<Scalar>& w) {
  if (layer.connections.empty()) return w;
  Tensor<Scalar> out = w;
  const int c_out = w.dim(0), c_in = w.dim(1);
  const Eigen::Index k = static_cast<Eigen::Index>(w.dim(2)) * w.dim(3);
  for (int o = 0; o < c_out; ++o) {
    for (int i = 0; i < c_in; ++i) {
      if (!layer.connections[static_cast<std::size_t>(o) * c_in + i]) {
        out.values().segment((static_cast<Eigen::Index>(o) * c_in + i) * k, k).setZero();
      }
    }
  }
  return out;
}

template <typename Scalar>
BatchNormParams<Scalar> bn_params(const std::vector<Tensor<Scalar>>& w) {
  return {w.at(2), w.at(3), w.at(0), w.at(1)};
}

template <typename Scalar>
const Tensor<Scalar>& layer_input(const Model<Scalar>& /*model*/, const Trace<Scalar>& trace,
                                  const std::vector<int>& sources, std::size_t which) {
  const int src = sources.at(which);
  return src < 0 ? trace.input : trace.outputs[src];
}

inline std::vector<std::vector<int>> resolve_inputs(const std::vector<LayerSpec>& layers) {
  std::unordered_map<std::string, int> index;
  std::vector<std::vector<int>> sources(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const auto& in : layers[i].inputs) {
      if (in == kGraphInput) {
        sources[i].push_back(-1);
        continue;
      }
      auto it = index.find(in);
      if (it == index.end()) {
        throw ModelError("layer '" + layers[i].name + "' reads '" + in +
                         "' which is not an earlier layer");
      }
      sources[i].push_back(it->second);
    }
    index[layers[i].name] = static_cast<int>(i);
  }
  return sources;
}

/// Computes trace.outputs[i] from earlier entries of `trace`.
template <typename Scalar>
void forward_layer(const Model<Scalar>& model, std::size_t i, const std::vector<int>& sources,
                   Trace<Scalar>& trace, Mode mode, std::mt19937* rng) {
  const LayerSpec& layer = model.layers[i];
  const auto& x = detail::layer_input(model, trace, sources, 0);
  auto weights = [&]() -> const std::vector<Tensor<Scalar>>& {
    auto it = model.weights.find(layer.name);
    if (it == model.weights.end()) throw ModelError("layer '" + layer.name + "' has no weights");
    return it->second;
  };
  Tensor<Scalar>& y = trace.outputs[i];
  switch (layer.kind) {
    case LayerKind::conv:
    case LayerKind::depthwise_conv: {
      const auto& w = weights();
      y = conv2d(x, detail::masked_conv_weights(layer, w.at(0)), w.at(1), layer.conv);
      break;
    }
    case LayerKind::dense: {
      const auto& w = weights();
      y = dense(x, w.at(0), w.at(1));
      break;
    }
    case LayerKind::batchnorm:
      y = batchnorm(x, detail::bn_params(weights()), static_cast<Scalar>(layer.eps));
      break;
    case LayerKind::pool:
      y = pool2d(x, layer.pool.window, layer.pool.stride, layer.pool.mode);
      break;
    case LayerKind::activation:
      y = activation(x, layer.act);
      break;
    case LayerKind::dropout:
      if (mode == Mode::training && layer.dropout_rate > 0.0) {
        if (!rng) throw ModelError("training-mode dropout needs a random generator");
        Tensor<Scalar> mask(x.shape());
        std::bernoulli_distribution keep(1.0 - layer.dropout_rate);
        const Scalar scale = Scalar(1) / static_cast<Scalar>(1.0 - layer.dropout_rate);
        for (Eigen::Index k = 0; k < mask.size(); ++k) mask[k] = keep(*rng) ? scale : Scalar(0);
        y = Tensor<Scalar>(x.shape(), x.values().cwiseProduct(mask.values()));
        trace.dropout_masks[i] = std::move(mask);
      } else {
        y = x;
      }
      break;
    case LayerKind::flatten:
      y = x.reshaped({static_cast<int>(x.size())});
      break;
    case LayerKind::residual_add:
      y = add(x, detail::layer_input(model, trace, sources, 1));
      break;
    case LayerKind::channel_slice: {
      const Eigen::Index plane = x.size() / x.dim(0);
      Shape s = x.shape();
      s[0] = layer.slice_end - layer.slice_begin;
      y = Tensor<Scalar>(s, x.values().segment(layer.slice_begin * plane, s[0] * plane));
      break;
    }
  }
}

}  // namespace detail

/// Evaluates every layer in order. In training mode dropout draws a fresh
/// inverted-dropout mask from `rng`; in inference mode dropout is identity.
template <typename Scalar>
Trace<Scalar> forward_trace(const Model<Scalar>& model, const Tensor<Scalar>& input,
                            Mode mode = Mode::inference, std::mt19937* rng = nullptr) {
  if (input.shape() != model.input_shape) {
    throw DimensionError("model '" + model.arch + "' expects input " +
                         shape_string(model.input_shape) + ", got " + shape_string(input.shape()));
  }
  const auto sources = detail::resolve_inputs(model.layers);
  Trace<Scalar> trace;
  trace.input = input;
  trace.outputs.resize(model.layers.size());
  trace.dropout_masks.resize(model.layers.size());

  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    detail::forward_layer(model, i, sources[i], trace, mode, rng);
  }
  trace.recorded = true;
  return trace;
}

/// Class probabilities for one input (inference mode).
template <typename Scalar>
Tensor<Scalar> forward(const Model<Scalar>& model, const Tensor<Scalar>& input) {
  auto trace = forward_trace(model, input, Mode::inference);
  return std::move(trace.outputs.back());
}

namespace detail {

template <typename Scalar>
void add_to(Tensor<Scalar>& dst, const Tensor<Scalar>& g) {
  if (dst.empty()) {
    dst = g;
  } else {
    dst.values() += g.values();
  }
}

/// Propagates `dy` (gradient of layer i's output) to the layer's inputs,
/// adding into `grads` (by layer index, or `input_grad` for the graph input),
/// and adds parameter gradients of trainable layers into `params`.
template <typename Scalar>
void backward_layer(const Model<Scalar>& model, std::size_t i, const std::vector<int>& sources,
                    const Trace<Scalar>& trace, const Tensor<Scalar>& dy, Gradients<Scalar>& params,
                    std::vector<Tensor<Scalar>>& grads, Tensor<Scalar>& input_grad) {
  const LayerSpec& layer = model.layers[i];
  const auto& x = layer_input(model, trace, sources, 0);
  auto accumulate = [&](int src, const Tensor<Scalar>& g) { add_to(src < 0 ? input_grad : grads[src], g); };
  switch (layer.kind) {
    case LayerKind::conv:
    case LayerKind::depthwise_conv: {
      const auto& w = model.weights.at(layer.name);
      auto g = conv2d_backward(x, masked_conv_weights(layer, w[0]), layer.conv, dy,
                               layer.trainable);
      if (layer.trainable) {
        add_to(params[layer.name][0], masked_conv_weights(layer, g.weights));
        add_to(params[layer.name][1], g.bias);
      }
      accumulate(sources[0], g.input);
      break;
    }
    case LayerKind::dense: {
      const auto& w = model.weights.at(layer.name);
      auto g = dense_backward(x, w[0], dy);
      if (layer.trainable) {
        add_to(params[layer.name][0], g.weights);
        add_to(params[layer.name][1], g.bias);
      }
      accumulate(sources[0], g.input);
      break;
    }
    case LayerKind::batchnorm: {
      auto g = batchnorm_backward(x, bn_params(model.weights.at(layer.name)),
                                  static_cast<Scalar>(layer.eps), dy);
      if (layer.trainable) {
        add_to(params[layer.name][0], g.gamma);
        add_to(params[layer.name][1], g.beta);
      }
      accumulate(sources[0], g.input);
      break;
    }
    case LayerKind::pool:
      accumulate(sources[0],
                 pool2d_backward(x, layer.pool.window, layer.pool.stride, layer.pool.mode, dy));
      break;
    case LayerKind::activation:
      accumulate(sources[0], activation_backward(x, trace.outputs[i], layer.act, dy));
      break;
    case LayerKind::dropout: {
      const auto& mask = trace.dropout_masks[i];
      accumulate(sources[0],
                 mask.empty() ? dy : Tensor<Scalar>(dy.shape(), dy.values().cwiseProduct(mask.values())));
      break;
    }
    case LayerKind::flatten:
      accumulate(sources[0], dy.reshaped(x.shape()));
      break;
    case LayerKind::residual_add:
      accumulate(sources[0], dy);
      accumulate(sources[1], dy);
      break;
    case LayerKind::channel_slice: {
      Tensor<Scalar> g(x.shape());
      const Eigen::Index plane = x.size() / x.dim(0);
      g.values().segment(layer.slice_begin * plane, dy.size()) = dy.values();
      accumulate(sources[0], g);
      break;
    }
  }
}

}  // namespace detail

template <typename Scalar>
struct BackwardResult {
  Gradients<Scalar> params;
  Tensor<Scalar> input;
};

/// Reverse-mode pass over a recorded trace. `seed_layer` is the layer whose
/// output receives `seed_grad` (defaults to the last layer); layers after it
/// are ignored. Non-trainable layers get exactly-zero parameter gradients.
template <typename Scalar>
BackwardResult<Scalar> backward(const Model<Scalar>& model, const Trace<Scalar>& trace,
                                const Tensor<Scalar>& seed_grad, int seed_layer = -1) {
  if (!trace.recorded || trace.outputs.size() != model.layers.size()) {
    throw ModelError("backward called without a recorded forward pass for this model");
  }
  if (seed_layer < 0) seed_layer = static_cast<int>(model.layers.size()) - 1;
  if (seed_grad.shape() != trace.outputs.at(seed_layer).shape()) {
    throw DimensionError("backward: seed gradient " + shape_string(seed_grad.shape()) +
                         " does not match layer output " +
                         shape_string(trace.outputs[seed_layer].shape()));
  }
  const auto sources = detail::resolve_inputs(model.layers);

  BackwardResult<Scalar> result;
  for (const auto& layer : model.layers) {
    if (!has_weights(layer.kind)) continue;
    auto& g = result.params[layer.name];
    for (const auto& t : model.weights.at(layer.name)) g.emplace_back(t.shape());
  }
  result.input = Tensor<Scalar>(trace.input.shape());

  std::vector<Tensor<Scalar>> grads(model.layers.size());
  grads[seed_layer] = seed_grad;
  for (int i = seed_layer; i >= 0; --i) {
    if (grads[i].empty()) continue;
    detail::backward_layer(model, static_cast<std::size_t>(i), sources[i], trace, grads[i], result.params,
                           grads, result.input);
  }
  return result;
}

/// Total number of scalar parameters (weights, biases, batchnorm tensors).
template <typename Scalar>
std::int64_t parameter_count(const Model<Scalar>& model) {
  std::int64_t n = 0;
  for (const auto& [name, tensors] : model.weights)
    for (const auto& t : tensors) n += t.size();
  return n;
}

/// One line per layer (name, kind, output shape, parameter count) and a total.
std::string summary(const ModelGraph& model);

}  // namespace pestdet

#endif  // PESTDET_MODEL_HPP
