#pragma once

// JSON interchange format mirroring UBN1 / URF1, used at the exporter
// boundary. Packed weights travel as base64 of the little-endian u32 words.
//
// Model:
//   {"format": "ubnn-model", "version": 1,
//    "input": {"timesteps": T, "channels": C, "domain": "int8" | "binary"},
//    "n_classes": N,
//    "layers": [
//      {"type": "int8conv" | "binconv", "c_out": .., "k": ..,
//       "thresholds": [{"threshold": i32, "direction": "GEQ" | "LEQ"}, ..],
//       "weights": "<base64>"},
//      {"type": "pool", "k": .., "stride": ..},
//      {"type": "fc", "n_classes": N, "score_scale": [q16, ..],
//       "score_bias": [q16, ..], "weights": "<base64>"}],
//    "manifest": {..}}                                    (optional)
//
// Forest:
//   {"format": "ubnn-forest", "version": 1, "n_classes": .., "n_features": ..,
//    "roots": [..], "nodes": [[feature, threshold, right_child], ..],
//    "leaves": [[p0, p1, ..], ..],
//    "quantizer": {"scale": [..], "zero": [..]}, "manifest": {..}}
//
// Eval manifest:
//   {"count": N, "kind": "raw" | "features", "inputs": "<base64 int8>",
//    "predictions": [..]}
//   Inputs are N rows of int8 back to back; for models a row is the model
//   input (time-major), for forests either 32 x 3 raw samples ("raw") or
//   quantized features ("features").

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ubnn/error.hpp"
#include "ubnn/format.hpp"
#include "ubnn/model.hpp"
#include "ubnn/rf.hpp"

namespace ubnn::interchange {

using nlohmann::json;

// ---------------------------------------------------------------------------
// base64 (RFC 4648, with padding)

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= data.size(); i += 3) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (const std::size_t rem = data.size() - i; rem != 0) {
    std::uint32_t v = data[i] << 16;
    if (rem == 2) v |= data[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rem == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text, const std::string& path) {
  auto value = [&](char ch) -> std::uint32_t {
    if (ch >= 'A' && ch <= 'Z') return static_cast<std::uint32_t>(ch - 'A');
    if (ch >= 'a' && ch <= 'z') return static_cast<std::uint32_t>(ch - 'a' + 26);
    if (ch >= '0' && ch <= '9') return static_cast<std::uint32_t>(ch - '0' + 52);
    if (ch == '+') return 62;
    if (ch == '/') return 63;
    throw Error(ErrorCode::kSchema, path + ": invalid base64 character");
  };
  if (text.size() % 4 != 0) throw Error(ErrorCode::kSchema, path + ": base64 length not a multiple of 4");
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    const int pad = last ? (text[i + 3] == '=') + (text[i + 2] == '=') : 0;
    if (pad == 1 && text[i + 2] == '=') throw Error(ErrorCode::kSchema, path + ": bad base64 padding");
    std::uint32_t v = (value(text[i]) << 18) | (value(text[i + 1]) << 12);
    if (pad < 2) v |= value(text[i + 2]) << 6;
    if (pad < 1) v |= value(text[i + 3]);
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

inline std::string encode_words(std::span<const Word> words) {
  std::vector<std::uint8_t> bytes;
  for (Word w : words) {
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(w >> (8 * b)));
  }
  return base64_encode(bytes);
}

inline std::vector<Word> decode_words(std::string_view text, const std::string& path) {
  const auto bytes = base64_decode(text, path);
  if (bytes.size() % 4 != 0) throw Error(ErrorCode::kSchema, path + ": payload is not whole u32 words");
  std::vector<Word> words(bytes.size() / 4);
  for (std::size_t i = 0; i < words.size(); ++i) {
    for (int b = 0; b < 4; ++b) words[i] |= Word{bytes[i * 4 + b]} << (8 * b);
  }
  return words;
}

// ---------------------------------------------------------------------------
// Field access with JSON-path style error messages

namespace detail {

inline Error schema(const std::string& path, const std::string& what) {
  return Error(ErrorCode::kSchema, path + ": " + what);
}

inline const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw schema(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw schema(path + "." + key, "missing field");
  return *it;
}

inline std::int64_t integer(const json& v, const std::string& path, std::int64_t lo, std::int64_t hi) {
  if (!v.is_number_integer()) throw schema(path, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < lo || x > hi) {
    throw schema(path, "value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                           std::to_string(hi) + "]");
  }
  return x;
}

inline std::int64_t int_field(const json& obj, const std::string& key, const std::string& path,
                              std::int64_t lo, std::int64_t hi) {
  return integer(field(obj, key, path), path + "." + key, lo, hi);
}

inline std::string string_field(const json& obj, const std::string& key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_string()) throw schema(path + "." + key, "expected a string");
  return v.get<std::string>();
}

inline const json& array_field(const json& obj, const std::string& key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_array()) throw schema(path + "." + key, "expected an array");
  return v;
}

inline void check_header(const json& doc, std::string_view format) {
  const std::string fmt = string_field(doc, "format", "$");
  if (fmt != format) throw schema("$.format", "expected \"" + std::string(format) + "\", got \"" + fmt + "\"");
  const auto version = int_field(doc, "version", "$", 0, 0xFFFF);
  if (version != 1) throw Error(ErrorCode::kVersionMismatch, "$.version: unsupported version " + std::to_string(version));
}

template <class Conv>
Conv conv_from_json(const json& j, const std::string& path, const Shape& in) {
  Conv conv;
  conv.c_in = in.channels;
  conv.c_out = static_cast<std::size_t>(int_field(j, "c_out", path, 1, 0xFFFF));
  if (!is_power_of_two(conv.c_out)) {
    throw schema(path + ".c_out", "value " + std::to_string(conv.c_out) + " is not a power of two");
  }
  conv.k = static_cast<std::size_t>(int_field(j, "k", path, 1, 0xFFFF));
  if (conv.k > in.timesteps) {
    throw schema(path + ".k", "kernel " + std::to_string(conv.k) + " exceeds " +
                                  std::to_string(in.timesteps) + " input timesteps");
  }
  if (const auto it = j.find("c_in"); it != j.end()) {
    if (integer(*it, path + ".c_in", 1, 0xFFFF) != static_cast<std::int64_t>(in.channels)) {
      throw schema(path + ".c_in", "does not match the preceding layer's " + std::to_string(in.channels) + " channels");
    }
  }
  const json& ths = array_field(j, "thresholds", path);
  if (ths.size() != conv.c_out) {
    throw schema(path + ".thresholds", "expected " + std::to_string(conv.c_out) + " entries");
  }
  for (std::size_t m = 0; m < ths.size(); ++m) {
    const std::string p = path + ".thresholds[" + std::to_string(m) + "]";
    ThresholdSpec th;
    th.threshold = static_cast<std::int32_t>(int_field(ths[m], "threshold", p, INT32_MIN, INT32_MAX));
    const std::string dir = string_field(ths[m], "direction", p);
    if (dir == "GEQ") {
      th.direction = Direction::kGeq;
    } else if (dir == "LEQ") {
      th.direction = Direction::kLeq;
    } else {
      throw schema(p + ".direction", "expected \"GEQ\" or \"LEQ\"");
    }
    conv.thresholds.push_back(th);
  }
  conv.weights = decode_words(string_field(j, "weights", path), path + ".weights");
  if (conv.weights.size() != conv.c_out * conv.words_per_filter()) {
    throw schema(path + ".weights", "expected " + std::to_string(conv.c_out * conv.words_per_filter()) +
                                        " words, got " + std::to_string(conv.weights.size()));
  }
  return conv;
}

template <class Conv>
json conv_to_json(const Conv& conv, const char* type) {
  json th = json::array();
  for (const auto& t : conv.thresholds) {
    th.push_back({{"threshold", t.threshold}, {"direction", t.direction == Direction::kGeq ? "GEQ" : "LEQ"}});
  }
  return {{"type", type}, {"c_in", conv.c_in}, {"c_out", conv.c_out}, {"k", conv.k},
          {"thresholds", th}, {"weights", encode_words(conv.weights)}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model

inline Network network_from_json(const json& doc) {
  using namespace detail;
  check_header(doc, "ubnn-model");
  Network net;
  const json& input = field(doc, "input", "$");
  net.input.timesteps = static_cast<std::size_t>(int_field(input, "timesteps", "$.input", 1, 0xFFFF));
  net.input.channels = static_cast<std::size_t>(int_field(input, "channels", "$.input", 1, 0xFFFF));
  const std::string domain = string_field(input, "domain", "$.input");
  if (domain == "int8") {
    net.input.domain = InputDomain::kInt8;
  } else if (domain == "binary") {
    net.input.domain = InputDomain::kBinary;
  } else {
    throw schema("$.input.domain", "expected \"int8\" or \"binary\"");
  }
  net.n_classes = static_cast<std::size_t>(int_field(doc, "n_classes", "$", 1, 0xFFFF));

  const json& layers = array_field(doc, "layers", "$");
  Shape shape{net.input.timesteps, net.input.channels};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string path = "$.layers[" + std::to_string(i) + "]";
    const json& j = layers[i];
    const std::string type = string_field(j, "type", path);
    if (type == "int8conv") {
      auto conv = conv_from_json<Int8ConvLayer>(j, path, shape);
      shape = {shape.timesteps - conv.k + 1, conv.c_out};
      net.layers.emplace_back(std::move(conv));
    } else if (type == "binconv") {
      auto conv = conv_from_json<BinaryConvLayer>(j, path, shape);
      shape = {shape.timesteps - conv.k + 1, conv.c_out};
      net.layers.emplace_back(std::move(conv));
    } else if (type == "pool") {
      PoolLayer p;
      p.k = static_cast<std::size_t>(int_field(j, "k", path, 1, 0xFFFF));
      p.stride = static_cast<std::size_t>(int_field(j, "stride", path, 1, 0xFFFF));
      if (p.k != p.stride) throw schema(path + ".stride", "must equal k");
      if (p.k > shape.timesteps) throw schema(path + ".k", "pool window exceeds " + std::to_string(shape.timesteps) + " timesteps");
      shape = {shape.timesteps / p.k, shape.channels};
      net.layers.emplace_back(p);
    } else if (type == "fc") {
      BinaryFcLayer fc;
      fc.in_bits = shape.timesteps * shape.channels;
      fc.n_classes = static_cast<std::size_t>(int_field(j, "n_classes", path, 1, 0xFFFF));
      if (fc.n_classes != net.n_classes) throw schema(path + ".n_classes", "differs from $.n_classes");
      const json& scale = array_field(j, "score_scale", path);
      const json& bias = array_field(j, "score_bias", path);
      if (scale.size() != fc.n_classes) throw schema(path + ".score_scale", "expected one entry per class");
      if (bias.size() != fc.n_classes) throw schema(path + ".score_bias", "expected one entry per class");
      for (std::size_t m = 0; m < fc.n_classes; ++m) {
        const std::string idx = "[" + std::to_string(m) + "]";
        fc.score_scale.push_back(static_cast<std::int32_t>(integer(scale[m], path + ".score_scale" + idx, INT32_MIN, INT32_MAX)));
        fc.score_bias.push_back(static_cast<std::int32_t>(integer(bias[m], path + ".score_bias" + idx, INT32_MIN, INT32_MAX)));
      }
      fc.weights = decode_words(string_field(j, "weights", path), path + ".weights");
      if (fc.weights.size() != fc.n_classes * fc.words_per_class()) {
        throw schema(path + ".weights", "expected " + std::to_string(fc.n_classes * fc.words_per_class()) + " words");
      }
      shape = {1, fc.n_classes};
      net.layers.emplace_back(std::move(fc));
    } else {
      throw schema(path + ".type", "unknown layer type \"" + type + "\"");
    }
  }
  try {
    validate(net);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kValidation) throw;
    const std::string path = e.layer() ? "$.layers[" + std::to_string(*e.layer()) + "]" : "$";
    throw schema(path, e.what());
  }
  return net;
}

inline json network_to_json(const Network& net) {
  const auto chain = validate(net);
  json layers = json::array();
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& layer = net.layers[i];
    if (const auto* c8 = std::get_if<Int8ConvLayer>(&layer)) {
      layers.push_back(detail::conv_to_json(*c8, "int8conv"));
    } else if (const auto* cb = std::get_if<BinaryConvLayer>(&layer)) {
      layers.push_back(detail::conv_to_json(*cb, "binconv"));
    } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      layers.push_back({{"type", "pool"}, {"k", p->k}, {"stride", p->stride}});
    } else {
      const auto& fc = std::get<BinaryFcLayer>(layer);
      layers.push_back({{"type", "fc"}, {"n_classes", fc.n_classes}, {"score_scale", fc.score_scale},
                        {"score_bias", fc.score_bias}, {"weights", encode_words(fc.weights)}});
    }
  }
  return {{"format", "ubnn-model"},
          {"version", 1},
          {"input",
           {{"timesteps", net.input.timesteps},
            {"channels", net.input.channels},
            {"domain", net.input.domain == InputDomain::kInt8 ? "int8" : "binary"}}},
          {"n_classes", net.n_classes},
          {"layers", layers}};
}

// ---------------------------------------------------------------------------
// Forest

inline rf::Forest forest_from_json(const json& doc) {
  using namespace detail;
  check_header(doc, "ubnn-forest");
  rf::Forest f;
  f.n_classes = static_cast<std::size_t>(int_field(doc, "n_classes", "$", 1, 0xFFFF));
  f.n_features = static_cast<std::size_t>(int_field(doc, "n_features", "$", 1, 0xFFFF));
  const json& roots = array_field(doc, "roots", "$");
  for (std::size_t i = 0; i < roots.size(); ++i) {
    f.roots.push_back(static_cast<std::uint16_t>(integer(roots[i], "$.roots[" + std::to_string(i) + "]", 0, 0xFFFF)));
  }
  const json& nodes = array_field(doc, "nodes", "$");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string p = "$.nodes[" + std::to_string(i) + "]";
    if (!nodes[i].is_array() || nodes[i].size() != 3) throw schema(p, "expected [feature, threshold, right_child]");
    rf::RfNode n;
    n.feature_index = static_cast<std::int16_t>(integer(nodes[i][0], p + "[0]", -1, INT16_MAX));
    n.threshold = static_cast<std::int8_t>(integer(nodes[i][1], p + "[1]", -128, 127));
    n.right_child = static_cast<std::uint16_t>(integer(nodes[i][2], p + "[2]", 0, 0xFFFF));
    f.nodes.push_back(n);
  }
  const json& leaves = array_field(doc, "leaves", "$");
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const std::string p = "$.leaves[" + std::to_string(i) + "]";
    if (!leaves[i].is_array() || leaves[i].size() != f.n_classes) throw schema(p, "expected n_classes probabilities");
    for (std::size_t c = 0; c < f.n_classes; ++c) {
      f.leaves.push_back(static_cast<std::uint8_t>(integer(leaves[i][c], p + "[" + std::to_string(c) + "]", 0, 255)));
    }
  }
  const json& q = field(doc, "quantizer", "$");
  const json& scale = array_field(q, "scale", "$.quantizer");
  const json& zero = array_field(q, "zero", "$.quantizer");
  if (scale.size() != f.n_features) throw schema("$.quantizer.scale", "expected n_features entries");
  if (zero.size() != f.n_features) throw schema("$.quantizer.zero", "expected n_features entries");
  for (std::size_t i = 0; i < f.n_features; ++i) {
    if (!scale[i].is_number() || !zero[i].is_number()) throw schema("$.quantizer[" + std::to_string(i) + "]", "expected numbers");
    f.quantizer.scale.push_back(scale[i].get<float>());
    f.quantizer.zero.push_back(zero[i].get<float>());
  }
  try {
    rf::validate(f);
  } catch (const Error& e) {
    throw schema("$", e.what());
  }
  return f;
}

inline json forest_to_json(const rf::Forest& f) {
  rf::validate(f);
  json nodes = json::array();
  for (const auto& n : f.nodes) nodes.push_back({n.feature_index, n.threshold, n.right_child});
  json leaves = json::array();
  for (std::size_t l = 0; l < f.n_leaves(); ++l) {
    const auto p = f.leaf(l);
    leaves.push_back(std::vector<int>(p.begin(), p.end()));
  }
  return {{"format", "ubnn-forest"}, {"version", 1}, {"n_classes", f.n_classes},
          {"n_features", f.n_features}, {"roots", f.roots}, {"nodes", nodes}, {"leaves", leaves},
          {"quantizer", {{"scale", f.quantizer.scale}, {"zero", f.quantizer.zero}}}};
}

// ---------------------------------------------------------------------------
// Eval manifest

struct Manifest {
  enum class Kind { kRaw, kFeatures };
  Kind kind = Kind::kRaw;
  std::size_t row_size = 0;
  std::vector<std::vector<std::int8_t>> inputs;
  std::vector<std::size_t> predictions;
};

/// Reads a manifest object; `row_size` is the number of int8 values per row.
inline Manifest manifest_from_json(const json& m, std::size_t row_size, std::size_t n_classes,
                                   const std::string& path = "$.manifest") {
  using namespace detail;
  Manifest out;
  out.row_size = row_size;
  if (const auto it = m.find("kind"); it != m.end()) {
    const std::string kind = string_field(m, "kind", path);
    if (kind == "raw") {
      out.kind = Manifest::Kind::kRaw;
    } else if (kind == "features") {
      out.kind = Manifest::Kind::kFeatures;
    } else {
      throw schema(path + ".kind", "expected \"raw\" or \"features\"");
    }
  }
  const auto count = static_cast<std::size_t>(int_field(m, "count", path, 0, INT32_MAX));
  const auto bytes = base64_decode(string_field(m, "inputs", path), path + ".inputs");
  if (bytes.size() != count * row_size) {
    throw schema(path + ".inputs", "expected " + std::to_string(count * row_size) + " bytes, got " +
                                       std::to_string(bytes.size()));
  }
  for (std::size_t r = 0; r < count; ++r) {
    std::vector<std::int8_t> row(row_size);
    for (std::size_t i = 0; i < row_size; ++i) row[i] = static_cast<std::int8_t>(bytes[r * row_size + i]);
    out.inputs.push_back(std::move(row));
  }
  const json& preds = array_field(m, "predictions", path);
  if (preds.size() != count) throw schema(path + ".predictions", "expected one prediction per input");
  for (std::size_t r = 0; r < count; ++r) {
    out.predictions.push_back(static_cast<std::size_t>(
        integer(preds[r], path + ".predictions[" + std::to_string(r) + "]", 0,
                static_cast<std::int64_t>(n_classes) - 1)));
  }
  return out;
}

inline json manifest_to_json(const Manifest& m) {
  std::vector<std::uint8_t> bytes;
  for (const auto& row : m.inputs) {
    for (auto v : row) bytes.push_back(static_cast<std::uint8_t>(v));
  }
  return {{"count", m.inputs.size()},
          {"kind", m.kind == Manifest::Kind::kRaw ? "raw" : "features"},
          {"inputs", base64_encode(bytes)},
          {"predictions", m.predictions}};
}

// ---------------------------------------------------------------------------
// Conversion

using Converted = std::variant<Network, rf::Forest>;

/// Interprets an interchange document of either kind.
inline Converted from_json(const json& doc) {
  const std::string fmt = detail::string_field(doc, "format", "$");
  if (fmt == "ubnn-model") return network_from_json(doc);
  if (fmt == "ubnn-forest") return forest_from_json(doc);
  throw detail::schema("$.format", "unknown format \"" + fmt + "\"");
}

inline json parse(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kSchema, std::string("$: invalid JSON: ") + e.what());
  }
}

/// Binary encoding ("UBN1" or "URF1") of a converted document.
inline std::vector<std::uint8_t> to_binary(const Converted& c) {
  if (const auto* net = std::get_if<Network>(&c)) return serialize(*net);
  return rf::serialize(std::get<rf::Forest>(c));
}

}  // namespace ubnn::interchange
