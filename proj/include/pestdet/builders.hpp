#ifndef PESTDET_BUILDERS_HPP
#define PESTDET_BUILDERS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pestdet/model.hpp"

namespace pestdet {

/// Incremental construction of a ModelGraph. Each call appends one layer
/// reading from `from` (a layer name or kGraphInput) and returns its name.
class GraphBuilder {
 public:
  GraphBuilder(std::string arch, Shape input_shape);

  std::string conv(const std::string& name, const std::string& from, int out_channels,
                   ConvSpec spec, std::vector<std::uint8_t> connections = {});
  std::string depthwise_conv(const std::string& name, const std::string& from, ConvSpec spec);
  std::string dense(const std::string& name, const std::string& from, int units);
  std::string batchnorm(const std::string& name, const std::string& from, double eps = 1e-3);
  std::string pool(const std::string& name, const std::string& from, PoolParams params);
  std::string activation(const std::string& name, const std::string& from, ActivationKind kind);
  std::string dropout(const std::string& name, const std::string& from, double rate);
  std::string flatten(const std::string& name, const std::string& from);
  std::string residual_add(const std::string& name, const std::string& a, const std::string& b);

  const Shape& shape_of(const std::string& name) const;

  /// Validates the graph and initializes parameters: He-uniform weights,
  /// zero biases, batchnorm gamma=1 beta=0 mean=0 var=1.
  ModelGraph finish(int num_classes, std::uint64_t seed) const;

 private:
  std::string append(LayerSpec layer);

  std::string arch_;
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
};

/// Classic LeNet-5 widths (6/16/120) with ReLU, average pooling and the
/// original sparse C3 connection table.
ModelGraph build_lenet5(int input_size = 52, int num_classes = 2, std::uint64_t seed = 1);

/// 13-conv VGG16 body with a dense(256) -> dense(num_classes) head.
ModelGraph build_vgg16(int input_size = 52, int num_classes = 2, std::uint64_t seed = 1);

/// MobileNetV2 with inverted residual blocks (expand 1x1 + ReLU6, depthwise
/// 3x3 + ReLU6, linear 1x1 projection) and a global-average-pool head.
ModelGraph build_mobilenetv2(int input_size = 52, int num_classes = 2, double width_mult = 0.35,
                             std::uint64_t seed = 1);

/// Dispatch by name: "lenet5", "vgg16" or "mobilenetv2".
ModelGraph build_architecture(const std::string& arch, int input_size = 52, int num_classes = 2,
                              double width_mult = 0.35, std::uint64_t seed = 1);

/// The 16x6 connection table between S2 and C3 of the original LeNet-5.
std::vector<std::uint8_t> lenet_c3_connections();

}  // namespace pestdet

#endif  // PESTDET_BUILDERS_HPP
