#pragma once

// Network description and the closed-form analyzers built on it.
//
// A Network is the descriptor list as written in architecture strings such
// as "Conv(2,7), Conv(2,15), Pool(4,4), FC": pools are standalone entries
// here and get fused into the preceding convolution by the Engine.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ubnn/bitpack.hpp"
#include "ubnn/error.hpp"
#include "ubnn/layers.hpp"

namespace ubnn {

enum class InputDomain : std::uint8_t { kInt8 = 0, kBinary = 1 };

struct InputSpec {
  std::size_t timesteps = 0;
  std::size_t channels = 0;
  InputDomain domain = InputDomain::kInt8;

  friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

struct PoolLayer {
  std::size_t k = 1;
  std::size_t stride = 1;

  friend bool operator==(const PoolLayer&, const PoolLayer&) = default;
};

using Layer = std::variant<Int8ConvLayer, BinaryConvLayer, PoolLayer, BinaryFcLayer>;

struct Network {
  InputSpec input;
  std::vector<Layer> layers;
  std::size_t n_classes = 0;

  friend bool operator==(const Network&, const Network&) = default;
};

struct Shape {
  std::size_t timesteps = 0;
  std::size_t channels = 0;

  friend bool operator==(const Shape&, const Shape&) = default;
};

inline const char* layer_name(const Layer& layer) {
  switch (layer.index()) {
    case 0: return "Int8Conv";
    case 1: return "BinaryConv";
    case 2: return "Pool";
    default: return "FC";
  }
}

namespace detail {

inline bool padding_clear(std::span<const Word> words, std::size_t rows, std::size_t bits_per_row) {
  const std::size_t per_row = words_for(bits_per_row);
  if (per_row == 0) return true;
  const Word tail = tail_mask(bits_per_row);
  for (std::size_t r = 0; r < rows; ++r) {
    if ((words[r * per_row + per_row - 1] & ~tail) != 0) return false;
  }
  return true;
}

template <class Conv>
void validate_conv(const Conv& conv, const Shape& in, std::size_t i, Shape& out) {
  if (conv.c_out == 0 || !is_power_of_two(conv.c_out)) {
    throw Error(ErrorCode::kValidation,
                "output channels " + std::to_string(conv.c_out) + " is not a power of two", i);
  }
  if (conv.k == 0) throw Error(ErrorCode::kValidation, "kernel size 0", i);
  if (conv.c_in != in.channels) {
    throw Error(ErrorCode::kValidation,
                "layer declares " + std::to_string(conv.c_in) + " input channels, chain provides " +
                    std::to_string(in.channels),
                i);
  }
  if (in.timesteps < conv.k) {
    throw Error(ErrorCode::kValidation,
                "kernel size " + std::to_string(conv.k) + " exceeds " +
                    std::to_string(in.timesteps) + " timesteps",
                i);
  }
  if (conv.weights.size() != conv.c_out * conv.words_per_filter()) {
    throw Error(ErrorCode::kValidation, "weight storage has wrong size", i);
  }
  if (!padding_clear(conv.weights, conv.c_out, conv.window_bits())) {
    throw Error(ErrorCode::kValidation, "non-zero padding bits after the last weight", i);
  }
  if (conv.thresholds.size() != conv.c_out) {
    throw Error(ErrorCode::kValidation, "threshold count differs from output channels", i);
  }
  if (conv.fused_pool) {
    throw Error(ErrorCode::kValidation, "descriptor layers carry pools as separate entries", i);
  }
  out = {in.timesteps - conv.k + 1, conv.c_out};
}

}  // namespace detail

/// Checks every network invariant and returns the shape chain: the input
/// shape followed by each layer's output shape (the FC yields (1, n_classes)).
inline std::vector<Shape> validate(const Network& net) {
  const auto& in = net.input;
  if (in.timesteps == 0 || in.channels == 0) {
    throw Error(ErrorCode::kValidation, "input shape must be non-empty");
  }
  if (in.domain == InputDomain::kBinary && !is_power_of_two(in.channels)) {
    throw Error(ErrorCode::kValidation, "binary input channels " + std::to_string(in.channels) +
                                            " is not a power of two");
  }
  if (in.domain != InputDomain::kInt8 && in.domain != InputDomain::kBinary) {
    throw Error(ErrorCode::kValidation, "unknown input domain");
  }
  if (net.layers.empty()) throw Error(ErrorCode::kValidation, "network has no layers");
  if (net.n_classes == 0) throw Error(ErrorCode::kValidation, "n_classes must be > 0");

  std::vector<Shape> chain{{in.timesteps, in.channels}};
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Shape cur = chain.back();
    Shape next;
    const Layer& layer = net.layers[i];
    const bool last = i + 1 == net.layers.size();
    if (in.domain == InputDomain::kInt8 && i == 0 && !std::holds_alternative<Int8ConvLayer>(layer)) {
      throw Error(ErrorCode::kValidation, "int8 input must feed an Int8Conv first layer", i);
    }
    if (!last && std::holds_alternative<BinaryFcLayer>(layer)) {
      throw Error(ErrorCode::kValidation, "FC must be the last and only FC layer", i);
    }
    if (last && !std::holds_alternative<BinaryFcLayer>(layer)) {
      throw Error(ErrorCode::kValidation, "network must end with an FC layer", i);
    }
    if (const auto* c8 = std::get_if<Int8ConvLayer>(&layer)) {
      if (i != 0 || in.domain != InputDomain::kInt8) {
        throw Error(ErrorCode::kValidation, "Int8Conv is only valid as the first layer on int8 input", i);
      }
      if (c8->window_bits() > Int8ConvLayer::kMaxWindow) {
        throw Error(ErrorCode::kValidation, "K * C_in exceeds 2^24", i);
      }
      detail::validate_conv(*c8, cur, i, next);
    } else if (const auto* cb = std::get_if<BinaryConvLayer>(&layer)) {
      detail::validate_conv(*cb, cur, i, next);
    } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      if (p->k == 0 || p->k != p->stride) {
        throw Error(ErrorCode::kValidation, "pool requires kernel == stride > 0", i);
      }
      if (p->k > cur.timesteps) {
        throw Error(ErrorCode::kValidation,
                    "pool size " + std::to_string(p->k) + " exceeds " +
                        std::to_string(cur.timesteps) + " timesteps",
                    i);
      }
      next = {cur.timesteps / p->k, cur.channels};
    } else {
      const auto& fc = std::get<BinaryFcLayer>(layer);
      if (fc.in_bits != cur.timesteps * cur.channels) {
        throw Error(ErrorCode::kValidation,
                    "FC expects " + std::to_string(fc.in_bits) + " input bits, chain provides " +
                        std::to_string(cur.timesteps * cur.channels),
                    i);
      }
      if (fc.n_classes != net.n_classes) {
        throw Error(ErrorCode::kValidation, "FC class count differs from network n_classes", i);
      }
      if (fc.weights.size() != fc.n_classes * fc.words_per_class() ||
          fc.score_scale.size() != fc.n_classes || fc.score_bias.size() != fc.n_classes) {
        throw Error(ErrorCode::kValidation, "FC parameter storage has wrong size", i);
      }
      if (!detail::padding_clear(fc.weights, fc.n_classes, fc.in_bits)) {
        throw Error(ErrorCode::kValidation, "non-zero padding bits after the last weight", i);
      }
      next = {1, fc.n_classes};
    }
    chain.push_back(next);
  }
  return chain;
}

// ---------------------------------------------------------------------------
// Footprint

struct LayerFootprint {
  std::uint64_t raw_weight_bits = 0;
  std::uint64_t aligned_weight_bits = 0;
  std::uint64_t threshold_bits = 0;
  std::uint64_t activation_buffer_bits = 0;
  std::uint64_t padded32_weight_bits = 0;

  LayerFootprint& operator+=(const LayerFootprint& o) noexcept {
    raw_weight_bits += o.raw_weight_bits;
    aligned_weight_bits += o.aligned_weight_bits;
    threshold_bits += o.threshold_bits;
    activation_buffer_bits += o.activation_buffer_bits;
    padded32_weight_bits += o.padded32_weight_bits;
    return *this;
  }
  friend bool operator==(const LayerFootprint&, const LayerFootprint&) = default;
};

struct FootprintReport {
  std::vector<LayerFootprint> layers;
  LayerFootprint total;

  /// padded32 / raw; 1.0 when nothing needs padding.
  double padded_ratio() const noexcept {
    return total.raw_weight_bits == 0
               ? 1.0
               : static_cast<double>(total.padded32_weight_bits) /
                     static_cast<double>(total.raw_weight_bits);
  }
  /// Extra storage of the padded layout relative to raw, e.g. 31 for "31x".
  double overhead() const noexcept { return padded_ratio() - 1.0; }
};

constexpr std::uint64_t round_up32(std::uint64_t c) noexcept { return words_for(c) * kWordBits; }

// Threshold storage per channel as serialized: i32 value + u8 direction.
inline constexpr std::uint64_t kThresholdBits = 40;
// Q16.16 scale + bias per class.
inline constexpr std::uint64_t kScoreParamBits = 64;
// Scores are kept as 64-bit Q16.16 accumulators.
inline constexpr std::uint64_t kScoreBits = 64;

/// Weight storage of one conv layer. `padded32_weight_bits` is what the same
/// layer costs when C_in and C_out are rounded up to multiples of 32.
inline LayerFootprint conv_footprint(std::size_t k, std::size_t c_in, std::size_t c_out) {
  LayerFootprint f;
  f.raw_weight_bits = std::uint64_t{k} * c_in * c_out;
  f.aligned_weight_bits = std::uint64_t{c_out} * words_for(k * c_in) * kWordBits;
  f.threshold_bits = c_out * kThresholdBits;
  f.padded32_weight_bits = std::uint64_t{k} * round_up32(c_in) * round_up32(c_out);
  return f;
}

/// Activation bits count what execution materializes: a conv followed by a
/// pool writes the pooled tensor directly, so the pool row reports zero.
inline FootprintReport footprint(const Network& net) {
  const auto chain = validate(net);
  FootprintReport report;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Shape& in = chain[i];
    const Shape& out = chain[i + 1];
    const Layer& layer = net.layers[i];
    const bool pool_follows =
        i + 1 < net.layers.size() && std::holds_alternative<PoolLayer>(net.layers[i + 1]);
    LayerFootprint f;
    if (const auto* c8 = std::get_if<Int8ConvLayer>(&layer)) {
      f = conv_footprint(c8->k, c8->c_in, c8->c_out);
    } else if (const auto* cb = std::get_if<BinaryConvLayer>(&layer)) {
      f = conv_footprint(cb->k, cb->c_in, cb->c_out);
    } else if (std::holds_alternative<PoolLayer>(layer)) {
      const bool fused = i > 0 && !std::holds_alternative<PoolLayer>(net.layers[i - 1]);
      if (!fused) f.activation_buffer_bits = std::uint64_t{out.timesteps} * out.channels;
    } else {
      const auto& fc = std::get<BinaryFcLayer>(layer);
      f.raw_weight_bits = std::uint64_t{fc.in_bits} * fc.n_classes;
      f.aligned_weight_bits = std::uint64_t{fc.n_classes} * fc.words_per_class() * kWordBits;
      f.threshold_bits = fc.n_classes * kScoreParamBits;
      f.padded32_weight_bits =
          std::uint64_t{in.timesteps} * round_up32(in.channels) * fc.n_classes;
      f.activation_buffer_bits = fc.n_classes * kScoreBits;
    }
    if (std::holds_alternative<Int8ConvLayer>(layer) || std::holds_alternative<BinaryConvLayer>(layer)) {
      const Shape& materialized = pool_follows ? chain[i + 2] : out;
      f.activation_buffer_bits = std::uint64_t{materialized.timesteps} * materialized.channels;
    }
    report.layers.push_back(f);
    report.total += f;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Op counts

struct OpCountReport {
  std::vector<OpCounters> layers;
  OpCounters total;
};

/// Closed-form per-inference counts, matching what the kernels record in
/// OpCounters. A conv fused with a following pool only computes the timesteps
/// covered by whole pooling windows; the ORs of the fusion are attributed to
/// the pool entry.
inline OpCountReport count_ops(const Network& net) {
  const auto chain = validate(net);
  OpCountReport report;
  report.layers.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Shape& out = chain[i + 1];
    const Layer& layer = net.layers[i];
    OpCounters& c = report.layers[i];
    std::size_t steps = out.timesteps;
    if (i + 1 < net.layers.size()) {
      if (const auto* p = std::get_if<PoolLayer>(&net.layers[i + 1])) steps = (steps / p->k) * p->k;
    }
    if (const auto* c8 = std::get_if<Int8ConvLayer>(&layer)) {
      c.int8_macs = std::uint64_t{steps} * c8->c_out * c8->window_bits();
      c.threshold_compares = std::uint64_t{steps} * c8->c_out;
    } else if (const auto* cb = std::get_if<BinaryConvLayer>(&layer)) {
      c.xnor_word_ops = std::uint64_t{steps} * cb->c_out * cb->words_per_filter();
      c.popcount_ops = c.xnor_word_ops;
      c.threshold_compares = std::uint64_t{steps} * cb->c_out;
    } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      c.or_ops = std::uint64_t{out.timesteps} * p->k * out.channels;
    } else {
      const auto& fc = std::get<BinaryFcLayer>(layer);
      c.xnor_word_ops = std::uint64_t{fc.n_classes} * fc.words_per_class();
      c.popcount_ops = c.xnor_word_ops;
    }
    report.total += c;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Architecture strings

struct ArchLayer {
  enum class Kind { kConv, kPool, kFc };
  Kind kind = Kind::kFc;
  std::size_t a = 0;  // Conv: output channels; Pool: kernel
  std::size_t b = 0;  // Conv: kernel size;     Pool: stride

  friend bool operator==(const ArchLayer&, const ArchLayer&) = default;
};

/// Parses the "Conv(C_out,K), Pool(K,S), FC" grammar.
inline std::vector<ArchLayer> parse_architecture(std::string_view text) {
  std::vector<ArchLayer> out;
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  auto fail = [&](const std::string& what) -> Error {
    return Error(ErrorCode::kInvalidArgument,
                 "architecture: " + what + " at offset " + std::to_string(pos));
  };
  auto expect = [&](char ch) {
    skip_ws();
    if (pos >= text.size() || text[pos] != ch) throw fail(std::string("expected '") + ch + "'");
    ++pos;
  };
  auto number = [&] {
    skip_ws();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      v = v * 10 + static_cast<std::size_t>(text[pos] - '0');
      if (v > 65535) throw fail("number out of range");
      ++pos;
    }
    if (pos == start) throw fail("expected a number");
    return v;
  };
  while (true) {
    skip_ws();
    const std::size_t start = pos;
    while (pos < text.size() && std::isalpha(static_cast<unsigned char>(text[pos]))) ++pos;
    const std::string_view word = text.substr(start, pos - start);
    ArchLayer layer;
    if (word == "Conv" || word == "Pool") {
      layer.kind = word == "Conv" ? ArchLayer::Kind::kConv : ArchLayer::Kind::kPool;
      expect('(');
      layer.a = number();
      expect(',');
      layer.b = number();
      expect(')');
    } else if (word == "FC") {
      layer.kind = ArchLayer::Kind::kFc;
    } else {
      pos = start;
      throw fail("unknown layer '" + std::string(word) + "'");
    }
    out.push_back(layer);
    skip_ws();
    if (pos == text.size()) break;
    expect(',');
  }
  return out;
}

inline std::string describe(const Network& net) {
  std::string s;
  for (const auto& layer : net.layers) {
    if (!s.empty()) s += ", ";
    if (const auto* c8 = std::get_if<Int8ConvLayer>(&layer)) {
      s += "Conv(" + std::to_string(c8->c_out) + "," + std::to_string(c8->k) + ")";
    } else if (const auto* cb = std::get_if<BinaryConvLayer>(&layer)) {
      s += "Conv(" + std::to_string(cb->c_out) + "," + std::to_string(cb->k) + ")";
    } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      s += "Pool(" + std::to_string(p->k) + "," + std::to_string(p->stride) + ")";
    } else {
      s += "FC";
    }
  }
  return s;
}

}  // namespace ubnn
