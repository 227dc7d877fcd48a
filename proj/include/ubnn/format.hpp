#pragma once

// "UBN1" binary model format. All multi-byte fields are little-endian.
//
//   magic "UBN1" | version u16 | input T u16 | input C u16 | domain u8 |
//   n_layers u16 | layers...
//
// Each layer: type u8 (0 int8conv, 1 binconv, 2 pool, 3 fc) | C_out u16 |
// K u16 | [pool_s u16, pool only] | fused-pool flag u8 | parameters | weights.
//
//   conv: C_out x (threshold i32, direction u8), then C_out filters of
//         ceil(K * C_in / 32) u32 words each (MSB-first, word-aligned)
//   pool: C_out is the channel count, K the window; no parameters
//   fc:   C_out = n_classes, K = 0; n_classes x (scale i32, bias i32) in
//         Q16.16, then n_classes rows of ceil(in_bits / 32) u32 words
//
// The fused-pool flag is 1 on a conv immediately followed by a pool entry
// (which execution fuses into the conv) and 0 everywhere else. C_in and the
// FC input width are implied by the shape chain.

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "ubnn/error.hpp"
#include "ubnn/layers.hpp"
#include "ubnn/model.hpp"

namespace ubnn {

inline constexpr std::array<char, 4> kModelMagic{'U', 'B', 'N', '1'};
inline constexpr std::uint16_t kModelVersion = 1;

enum class LayerType : std::uint8_t { kInt8Conv = 0, kBinaryConv = 1, kPool = 2, kFc = 3 };

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void i16(std::int16_t v) { put(static_cast<std::uint16_t>(v), 2); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u32(bits);
  }
  void raw(std::span<const char> data) {
    for (char ch : data) bytes_.push_back(static_cast<std::uint8_t>(ch));
  }

  /// Writes `v` as u16, rejecting values the format cannot hold.
  void dim16(std::size_t v, const char* what) {
    if (v > 0xFFFF) {
      throw Error(ErrorCode::kValidation,
                  std::string(what) + " " + std::to_string(v) + " does not fit 16 bits");
    }
    u16(static_cast<std::uint16_t>(v));
  }

  std::vector<std::uint8_t> take() && { return std::move(bytes_); }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  void expect_magic(const std::array<char, 4>& magic) {
    need(4);
    if (std::memcmp(data_.data() + pos_, magic.data(), 4) != 0) {
      throw Error(ErrorCode::kBadMagic, "expected \"" + std::string(magic.data(), 4) + "\"");
    }
    pos_ += 4;
  }
  void expect_end() const {
    if (pos_ != data_.size()) {
      throw Error(ErrorCode::kTrailingData,
                  std::to_string(data_.size() - pos_) + " bytes after the end of the model");
    }
  }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw Error(ErrorCode::kTruncated,
                  "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                      ", " + std::to_string(data_.size() - pos_) + " left");
    }
  }
  std::uint64_t get(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= std::uint64_t{data_[pos_ + i]} << (8 * i);
    pos_ += n;
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

namespace detail {

template <class Conv>
void write_conv(ByteWriter& w, const Conv& conv, LayerType type, bool fused) {
  w.u8(static_cast<std::uint8_t>(type));
  w.dim16(conv.c_out, "C_out");
  w.dim16(conv.k, "K");
  w.u8(fused ? 1 : 0);
  for (const auto& th : conv.thresholds) {
    w.i32(th.threshold);
    w.u8(static_cast<std::uint8_t>(th.direction));
  }
  for (Word word : conv.weights) w.u32(word);
}

inline void read_words(ByteReader& r, std::vector<Word>& out, std::size_t rows,
                       std::size_t bits_per_row, std::size_t layer) {
  const std::size_t per_row = words_for(bits_per_row);
  if (r.remaining() / 4 < rows * per_row) {
    throw Error(ErrorCode::kTruncated, "weight block extends past end of file", layer);
  }
  out.resize(rows * per_row);
  const Word tail = tail_mask(bits_per_row);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = r.u32();
    if ((i + 1) % per_row == 0 && (out[i] & ~tail) != 0) {
      throw Error(ErrorCode::kValidation, "non-zero padding bits after the last weight", layer);
    }
  }
}

template <class Conv>
Conv read_conv(ByteReader& r, std::size_t c_out, std::size_t k, const Shape& in,
               std::size_t layer) {
  Conv conv;
  conv.c_in = in.channels;
  conv.c_out = c_out;
  conv.k = k;
  if (k == 0 || k > in.timesteps) {
    throw Error(ErrorCode::kValidation, "kernel size " + std::to_string(k) + " does not fit " +
                                            std::to_string(in.timesteps) + " timesteps",
                layer);
  }
  conv.thresholds.resize(c_out);
  for (auto& th : conv.thresholds) {
    th.threshold = r.i32();
    const std::uint8_t dir = r.u8();
    if (dir > 1) throw Error(ErrorCode::kValidation, "unknown threshold direction", layer);
    th.direction = static_cast<Direction>(dir);
  }
  read_words(r, conv.weights, c_out, k * in.channels, layer);
  return conv;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const Network& net) {
  const auto chain = validate(net);
  ByteWriter w;
  w.raw(kModelMagic);
  w.u16(kModelVersion);
  w.dim16(net.input.timesteps, "input timesteps");
  w.dim16(net.input.channels, "input channels");
  w.u8(static_cast<std::uint8_t>(net.input.domain));
  w.dim16(net.layers.size(), "layer count");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& layer = net.layers[i];
    const bool pool_follows =
        i + 1 < net.layers.size() && std::holds_alternative<PoolLayer>(net.layers[i + 1]);
    if (const auto* c8 = std::get_if<Int8ConvLayer>(&layer)) {
      detail::write_conv(w, *c8, LayerType::kInt8Conv, pool_follows);
    } else if (const auto* cb = std::get_if<BinaryConvLayer>(&layer)) {
      detail::write_conv(w, *cb, LayerType::kBinaryConv, pool_follows);
    } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      w.u8(static_cast<std::uint8_t>(LayerType::kPool));
      w.dim16(chain[i].channels, "pool channels");
      w.dim16(p->k, "pool K");
      w.dim16(p->stride, "pool stride");
      w.u8(0);
    } else {
      const auto& fc = std::get<BinaryFcLayer>(layer);
      w.u8(static_cast<std::uint8_t>(LayerType::kFc));
      w.dim16(fc.n_classes, "n_classes");
      w.u16(0);
      w.u8(0);
      for (std::size_t m = 0; m < fc.n_classes; ++m) {
        w.i32(fc.score_scale[m]);
        w.i32(fc.score_bias[m]);
      }
      for (Word word : fc.weights) w.u32(word);
    }
  }
  return std::move(w).take();
}

/// Parses and validates a model. Never returns a partially read network.
inline Network deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(kModelMagic);
  const std::uint16_t version = r.u16();
  if (version != kModelVersion) {
    throw Error(ErrorCode::kVersionMismatch, "model version " + std::to_string(version) +
                                                 ", reader supports " +
                                                 std::to_string(kModelVersion));
  }
  Network net;
  net.input.timesteps = r.u16();
  net.input.channels = r.u16();
  const std::uint8_t domain = r.u8();
  if (domain > 1) throw Error(ErrorCode::kValidation, "unknown input domain " + std::to_string(domain));
  net.input.domain = static_cast<InputDomain>(domain);
  const std::size_t n_layers = r.u16();

  Shape shape{net.input.timesteps, net.input.channels};
  std::vector<bool> fused_flags;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::uint8_t type = r.u8();
    const std::size_t c_out = r.u16();
    const std::size_t k = r.u16();
    switch (static_cast<LayerType>(type)) {
      case LayerType::kInt8Conv:
      case LayerType::kBinaryConv: {
        fused_flags.push_back(r.u8() != 0);
        if (type == 0) {
          net.layers.emplace_back(detail::read_conv<Int8ConvLayer>(r, c_out, k, shape, i));
        } else {
          net.layers.emplace_back(detail::read_conv<BinaryConvLayer>(r, c_out, k, shape, i));
        }
        shape = {shape.timesteps - k + 1, c_out};
        break;
      }
      case LayerType::kPool: {
        const std::size_t stride = r.u16();
        fused_flags.push_back(r.u8() != 0);
        if (c_out != shape.channels) {
          throw Error(ErrorCode::kValidation, "pool channel count differs from the chain", i);
        }
        if (k == 0 || k > shape.timesteps) {
          throw Error(ErrorCode::kValidation, "pool window does not fit the chain", i);
        }
        net.layers.emplace_back(PoolLayer{k, stride});
        shape = {shape.timesteps / k, shape.channels};
        break;
      }
      case LayerType::kFc: {
        fused_flags.push_back(r.u8() != 0);
        if (k != 0) throw Error(ErrorCode::kValidation, "FC kernel field must be 0", i);
        BinaryFcLayer fc;
        fc.in_bits = shape.timesteps * shape.channels;
        fc.n_classes = c_out;
        for (std::size_t m = 0; m < c_out; ++m) {
          fc.score_scale.push_back(r.i32());
          fc.score_bias.push_back(r.i32());
        }
        detail::read_words(r, fc.weights, c_out, fc.in_bits, i);
        net.n_classes = c_out;
        net.layers.emplace_back(std::move(fc));
        shape = {1, c_out};
        break;
      }
      default:
        throw Error(ErrorCode::kValidation, "unknown layer type " + std::to_string(type), i);
    }
  }
  r.expect_end();
  validate(net);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const bool is_conv = net.layers[i].index() <= 1;
    const bool expect = is_conv && i + 1 < net.layers.size() &&
                        std::holds_alternative<PoolLayer>(net.layers[i + 1]);
    if (fused_flags[i] != expect) {
      throw Error(ErrorCode::kValidation, "fused-pool flag inconsistent with the layer list", i);
    }
  }
  return net;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIo, "read failed: " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

inline void save(const Network& net, const std::filesystem::path& path) {
  write_file(path, serialize(net));
}

inline Network load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace ubnn
