#include "pestdet/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

namespace pestdet {

namespace {

constexpr char kMagic[4] = {'P', 'D', 'N', 'W'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return need(1)[0]; }
  std::uint16_t u16() {
    const auto* p = need(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const auto* p = need(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  const std::uint8_t* need(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedError("weight file truncated at byte " + std::to_string(pos_) + " (needed " +
                           std::to_string(n) + " more)");
    }
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const ModelGraph& model) {
  std::vector<const LayerSpec*> weighted;
  for (const auto& layer : model.layers) {
    if (model.weights.count(layer.name)) weighted.push_back(&layer);
  }
  Writer w;
  w.raw(kMagic, 4);
  w.u16(kWeightFormatVersion);
  w.u32(static_cast<std::uint32_t>(weighted.size()));
  for (const LayerSpec* layer : weighted) {
    const auto& tensors = model.weights.at(layer->name);
    if (layer->name.size() > 0xFFFF || tensors.size() > 0xFF) {
      throw FormatError("layer '" + layer->name + "' cannot be represented in the weight format");
    }
    w.u16(static_cast<std::uint16_t>(layer->name.size()));
    w.raw(layer->name.data(), layer->name.size());
    w.u8(static_cast<std::uint8_t>(tensors.size()));
    for (const auto& t : tensors) {
      w.u8(static_cast<std::uint8_t>(t.rank()));
      for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
      for (Eigen::Index i = 0; i < t.size(); ++i) w.f32(t[i]);
    }
  }
  return w.take();
}

std::vector<LayerWeights> decode_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw BadMagicError("not a weight file: magic bytes are not \"PDNW\"");
  }
  r.need(4);
  const std::uint16_t version = r.u16();
  if (version != kWeightFormatVersion) {
    throw VersionError("unsupported weight format version " + std::to_string(version) +
                       " (expected " + std::to_string(kWeightFormatVersion) + ")");
  }
  const std::uint32_t count = r.u32();
  std::vector<LayerWeights> layers;
  for (std::uint32_t l = 0; l < count; ++l) {
    LayerWeights entry;
    const std::uint16_t name_len = r.u16();
    const auto* name = r.need(name_len);
    entry.name.assign(reinterpret_cast<const char*>(name), name_len);
    const std::uint8_t tensors = r.u8();
    for (std::uint8_t t = 0; t < tensors; ++t) {
      const std::uint8_t rank = r.u8();
      Shape shape;
      for (std::uint8_t d = 0; d < rank; ++d) {
        const std::uint32_t dim = r.u32();
        if (dim == 0 || dim > 0x7FFFFFFF) {
          throw FormatError("layer '" + entry.name + "' has an invalid dimension");
        }
        shape.push_back(static_cast<int>(dim));
      }
      const Eigen::Index n = shape_product(shape);
      if (static_cast<double>(n) * 4 > static_cast<double>(bytes.size() - r.position())) {
        throw TruncatedError("weight file truncated inside tensor of layer '" + entry.name + "'");
      }
      Vec<float> values(n);
      for (Eigen::Index i = 0; i < n; ++i) values[i] = r.f32();
      entry.tensors.emplace_back(std::move(shape), std::move(values));
    }
    layers.push_back(std::move(entry));
  }
  if (!r.done()) {
    throw FormatError("weight file has " + std::to_string(bytes.size() - r.position()) +
                      " trailing bytes");
  }
  return layers;
}

void save_weights(const ModelGraph& model, const std::filesystem::path& path) {
  const auto bytes = encode_weights(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<LayerWeights> read_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight file '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

ModelGraph apply_weights(ModelGraph architecture, const std::vector<LayerWeights>& weights) {
  std::unordered_map<std::string, const LayerWeights*> by_name;
  for (const auto& entry : weights) by_name[entry.name] = &entry;

  for (const auto& layer : architecture.layers) {
    auto current = architecture.weights.find(layer.name);
    if (current == architecture.weights.end()) continue;
    auto it = by_name.find(layer.name);
    if (it == by_name.end()) {
      throw ShapeMismatchError("layer '" + layer.name + "' is missing from the weight file");
    }
    const auto& incoming = it->second->tensors;
    if (incoming.size() != current->second.size()) {
      throw ShapeMismatchError("layer '" + layer.name + "' has " + std::to_string(incoming.size()) +
                               " tensors in the file, architecture expects " +
                               std::to_string(current->second.size()));
    }
    for (std::size_t t = 0; t < incoming.size(); ++t) {
      if (incoming[t].shape() != current->second[t].shape()) {
        throw ShapeMismatchError("layer '" + layer.name + "' tensor " + std::to_string(t) +
                                 " has shape " + shape_string(incoming[t].shape()) +
                                 " in the file, architecture expects " +
                                 shape_string(current->second[t].shape()));
      }
    }
    current->second = incoming;
    by_name.erase(it);
  }
  for (const auto& entry : weights) {
    if (by_name.count(entry.name)) {
      throw ShapeMismatchError("weight file has layer '" + entry.name +
                               "' that the architecture does not contain");
    }
  }
  return architecture;
}

ModelGraph load_weights(const std::filesystem::path& path, ModelGraph architecture) {
  return apply_weights(std::move(architecture), read_weight_file(path));
}

}  // namespace pestdet
