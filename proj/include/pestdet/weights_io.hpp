#ifndef PESTDET_WEIGHTS_IO_HPP
#define PESTDET_WEIGHTS_IO_HPP

// Weight file layout (little-endian, no padding):
//   "PDNW"            4 bytes magic
//   version   u16     = 1
//   layers    u32
//   per layer:  name_len u16, UTF-8 name, tensor_count u8
//     per tensor: rank u8, dims u32 x rank, float32 x product(dims)
// Only layers that carry parameters are written, in graph order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pestdet/model.hpp"

namespace pestdet {

inline constexpr std::uint16_t kWeightFormatVersion = 1;

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Weights do not fit the architecture they are loaded into.
class ShapeMismatchError : public ModelError {
 public:
  using ModelError::ModelError;
};

struct LayerWeights {
  std::string name;
  std::vector<Tensor<float>> tensors;
};

std::vector<std::uint8_t> encode_weights(const ModelGraph& model);
std::vector<LayerWeights> decode_weights(std::span<const std::uint8_t> bytes);

void save_weights(const ModelGraph& model, const std::filesystem::path& path);
std::vector<LayerWeights> read_weight_file(const std::filesystem::path& path);

/// Installs decoded weights into `architecture`. Every weighted layer of the
/// architecture must be present with identical shapes; the first mismatch
/// (in graph order) is reported by name.
ModelGraph apply_weights(ModelGraph architecture, const std::vector<LayerWeights>& weights);

ModelGraph load_weights(const std::filesystem::path& path, ModelGraph architecture);

}  // namespace pestdet

#endif  // PESTDET_WEIGHTS_IO_HPP
