#pragma once

// Reference semantics of every layer in plain integer / double arithmetic.
// These functions define correct behaviour for the test suites and the
// `verify` command; they are deliberately slow and use no bit-level tricks.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ubnn/error.hpp"
#include "ubnn/layers.hpp"
#include "ubnn/model.hpp"

namespace ubnn::oracle {

enum class Domain { kPmOne, kInt8, kInteger };

struct DenseTensor {
  std::size_t timesteps = 0;
  std::size_t channels = 0;
  Domain domain = Domain::kInteger;
  std::vector<std::int64_t> data;

  DenseTensor() = default;
  DenseTensor(std::size_t t, std::size_t c, Domain d)
      : timesteps(t), channels(c), domain(d), data(t * c, 0) {}

  std::int64_t& at(std::size_t t, std::size_t c) { return data[t * channels + c]; }
  std::int64_t at(std::size_t t, std::size_t c) const { return data[t * channels + c]; }

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;
};

/// w(m, k, c), each entry +1 or -1.
struct DenseFilters {
  std::size_t c_out = 0;
  std::size_t k = 0;
  std::size_t c_in = 0;
  std::vector<std::int8_t> w;

  std::int8_t at(std::size_t m, std::size_t kk, std::size_t c) const {
    return w[(m * k + kk) * c_in + c];
  }
};

struct BatchNorm {
  double mu = 0.0;
  double sigma = 1.0;
  double gamma = 1.0;
  double beta = 0.0;
};

/// A channel is binarized either by a float batchnorm followed by sign, or by
/// an already folded integer threshold.
using ChannelActivation = std::variant<BatchNorm, ThresholdSpec>;

struct RefConv {
  DenseFilters filters;
  std::vector<ChannelActivation> activation;
  bool int8_input = false;
};

struct RefPool {
  std::size_t k = 1;
  std::size_t stride = 1;
};

struct RefFc {
  std::size_t n_classes = 0;
  std::size_t in_len = 0;
  std::vector<std::int8_t> weights;  // n_classes x in_len, +-1
  std::vector<double> scale;
  std::vector<double> bias;
};

using RefLayer = std::variant<RefConv, RefPool, RefFc>;

struct ReferenceNetwork {
  std::size_t timesteps = 0;
  std::size_t channels = 0;
  bool int8_input = true;
  std::vector<RefLayer> layers;
};

struct ReferenceTrace {
  // Output of every layer except the final FC, in layer order.
  std::vector<DenseTensor> activations;
  std::vector<double> scores;
  std::size_t prediction = 0;
};

/// y(t, m) = sum_k sum_c w(m, k, c) * x(t + k, c), valid padding, stride 1.
inline DenseTensor conv1d_reference(const DenseTensor& x, const DenseFilters& w) {
  if (x.channels != w.c_in) {
    throw Error(ErrorCode::kShapeMismatch, "conv1d_reference: channel mismatch");
  }
  if (w.k == 0 || x.timesteps < w.k) {
    throw Error(ErrorCode::kShapeMismatch, "conv1d_reference: input shorter than kernel");
  }
  DenseTensor y(x.timesteps - w.k + 1, w.c_out, Domain::kInteger);
  for (std::size_t t = 0; t < y.timesteps; ++t) {
    for (std::size_t m = 0; m < w.c_out; ++m) {
      std::int64_t sum = 0;
      for (std::size_t kk = 0; kk < w.k; ++kk) {
        for (std::size_t c = 0; c < w.c_in; ++c) sum += w.at(m, kk, c) * x.at(t + kk, c);
      }
      y.at(t, m) = sum;
    }
  }
  return y;
}

inline std::int64_t sign(double v) { return v >= 0.0 ? 1 : -1; }

/// +1 if gamma * (y - mu) / sigma + beta >= 0, else -1.
inline DenseTensor batchnorm_sign_reference(const DenseTensor& y, std::span<const BatchNorm> bn) {
  if (bn.size() != y.channels) {
    throw Error(ErrorCode::kShapeMismatch, "batchnorm_sign_reference: parameter count mismatch");
  }
  for (const auto& p : bn) {
    if (!(p.sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "batchnorm sigma must be > 0");
  }
  DenseTensor out(y.timesteps, y.channels, Domain::kPmOne);
  for (std::size_t t = 0; t < y.timesteps; ++t) {
    for (std::size_t c = 0; c < y.channels; ++c) {
      const auto& p = bn[c];
      out.at(t, c) = sign(p.gamma * (static_cast<double>(y.at(t, c)) - p.mu) / p.sigma + p.beta);
    }
  }
  return out;
}

/// Applies per-channel activations to conv sums `y`. For a binary layer a
/// threshold th on the popcount P is the condition y >= 2 th - N (or <= for
/// LEQ), since y = 2P - N with N = `window`. For the int8 layer the threshold
/// applies to y directly.
inline DenseTensor activation_reference(const DenseTensor& y,
                                        std::span<const ChannelActivation> act, bool binary_layer,
                                        std::size_t window) {
  if (act.size() != y.channels) {
    throw Error(ErrorCode::kShapeMismatch, "activation_reference: parameter count mismatch");
  }
  DenseTensor out(y.timesteps, y.channels, Domain::kPmOne);
  for (std::size_t c = 0; c < y.channels; ++c) {
    if (const auto* bn = std::get_if<BatchNorm>(&act[c])) {
      if (!(bn->sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "batchnorm sigma must be > 0");
      for (std::size_t t = 0; t < y.timesteps; ++t) {
        out.at(t, c) =
            sign(bn->gamma * (static_cast<double>(y.at(t, c)) - bn->mu) / bn->sigma + bn->beta);
      }
    } else {
      const auto& th = std::get<ThresholdSpec>(act[c]);
      const std::int64_t bound = binary_layer
                                     ? 2 * std::int64_t{th.threshold} - static_cast<std::int64_t>(window)
                                     : std::int64_t{th.threshold};
      for (std::size_t t = 0; t < y.timesteps; ++t) {
        const bool on = th.direction == Direction::kGeq ? y.at(t, c) >= bound : y.at(t, c) <= bound;
        out.at(t, c) = on ? 1 : -1;
      }
    }
  }
  return out;
}

/// Elementwise max over windows of `k` timesteps, stride `stride`.
inline DenseTensor maxpool_reference(const DenseTensor& x, std::size_t k, std::size_t stride) {
  if (k == 0 || stride == 0 || k > x.timesteps) {
    throw Error(ErrorCode::kShapeMismatch, "maxpool_reference: bad pool window");
  }
  DenseTensor out((x.timesteps - k) / stride + 1, x.channels, x.domain);
  for (std::size_t t = 0; t < out.timesteps; ++t) {
    for (std::size_t c = 0; c < x.channels; ++c) {
      std::int64_t best = x.at(t * stride, c);
      for (std::size_t j = 1; j < k; ++j) best = std::max(best, x.at(t * stride + j, c));
      out.at(t, c) = best;
    }
  }
  return out;
}

/// score_m = scale_m * sum_i w(m, i) x_i + bias_m over the flattened input.
inline std::vector<double> fc_reference(const DenseTensor& x, const RefFc& fc) {
  if (x.data.size() != fc.in_len) {
    throw Error(ErrorCode::kShapeMismatch, "fc_reference: input length mismatch");
  }
  std::vector<double> scores(fc.n_classes);
  for (std::size_t m = 0; m < fc.n_classes; ++m) {
    std::int64_t dot = 0;
    for (std::size_t i = 0; i < fc.in_len; ++i) dot += fc.weights[m * fc.in_len + i] * x.data[i];
    scores[m] = fc.scale[m] * static_cast<double>(dot) + fc.bias[m];
  }
  return scores;
}

inline std::size_t argmax_reference(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorCode::kInvalidArgument, "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

inline ReferenceTrace forward_reference(const ReferenceNetwork& net, const DenseTensor& input) {
  if (input.timesteps != net.timesteps || input.channels != net.channels) {
    throw Error(ErrorCode::kShapeMismatch, "forward_reference: input shape mismatch");
  }
  ReferenceTrace trace;
  DenseTensor current = input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    if (const auto* conv = std::get_if<RefConv>(&layer)) {
      const DenseTensor y = conv1d_reference(current, conv->filters);
      current = activation_reference(y, conv->activation, !conv->int8_input,
                                     conv->filters.k * conv->filters.c_in);
    } else if (const auto* pool = std::get_if<RefPool>(&layer)) {
      current = maxpool_reference(current, pool->k, pool->stride);
    } else {
      trace.scores = fc_reference(current, std::get<RefFc>(layer));
      trace.prediction = argmax_reference(trace.scores);
      return trace;
    }
    trace.activations.push_back(current);
  }
  throw Error(ErrorCode::kValidation, "forward_reference: network does not end with FC");
}

inline DenseTensor from_int8(std::span<const std::int8_t> row, std::size_t timesteps,
                             std::size_t channels, bool pm_one) {
  if (row.size() != timesteps * channels) {
    throw Error(ErrorCode::kShapeMismatch, "from_int8: size mismatch");
  }
  DenseTensor out(timesteps, channels, pm_one ? Domain::kPmOne : Domain::kInt8);
  for (std::size_t i = 0; i < row.size(); ++i) out.data[i] = row[i];
  return out;
}

namespace detail {

// Reads stored weight bit i of a word sequence (bit i at word i / 32,
// position 31 - i % 32) as +1 or -1.
inline std::int8_t stored_weight(std::span<const Word> words, std::size_t i) {
  const Word word = words[i / 32];
  const std::size_t position = 31 - i % 32;
  std::uint64_t value = word;
  for (std::size_t s = 0; s < position; ++s) value /= 2;
  return value % 2 == 1 ? 1 : -1;
}

template <class Conv>
RefConv reference_conv(const Conv& conv, bool int8_input) {
  RefConv ref;
  ref.int8_input = int8_input;
  ref.filters = {conv.c_out, conv.k, conv.c_in, {}};
  for (std::size_t m = 0; m < conv.c_out; ++m) {
    const auto words = conv.filter(m);
    for (std::size_t i = 0; i < conv.window_bits(); ++i) {
      ref.filters.w.push_back(stored_weight(words, i));
    }
    ref.activation.emplace_back(conv.thresholds[m]);
  }
  return ref;
}

}  // namespace detail

/// Dense reference form of a packed network, binarized by its stored
/// thresholds.
inline ReferenceNetwork to_reference(const Network& net) {
  validate(net);
  ReferenceNetwork ref;
  ref.timesteps = net.input.timesteps;
  ref.channels = net.input.channels;
  ref.int8_input = net.input.domain == InputDomain::kInt8;
  for (const auto& layer : net.layers) {
    if (const auto* c8 = std::get_if<Int8ConvLayer>(&layer)) {
      ref.layers.emplace_back(detail::reference_conv(*c8, true));
    } else if (const auto* cb = std::get_if<BinaryConvLayer>(&layer)) {
      ref.layers.emplace_back(detail::reference_conv(*cb, false));
    } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      ref.layers.emplace_back(RefPool{p->k, p->stride});
    } else {
      const auto& fc = std::get<BinaryFcLayer>(layer);
      RefFc r;
      r.n_classes = fc.n_classes;
      r.in_len = fc.in_bits;
      for (std::size_t m = 0; m < fc.n_classes; ++m) {
        const auto words = fc.class_weights(m);
        for (std::size_t i = 0; i < fc.in_bits; ++i) r.weights.push_back(detail::stored_weight(words, i));
        r.scale.push_back(from_q16(fc.score_scale[m]));
        r.bias.push_back(from_q16(fc.score_bias[m]));
      }
      ref.layers.emplace_back(std::move(r));
    }
  }
  return ref;
}

}  // namespace ubnn::oracle
