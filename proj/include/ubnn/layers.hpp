#pragma once

// Layer kernels: binarized and mixed int8/binary 1D convolution with fused
// batchnorm thresholding and fused OR max-pooling, standalone OR pooling, and
// the non-rebinarized fully-connected classifier head.
//
// All convolutions are stride 1 with valid padding: T_out = T - K + 1.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ubnn/bitpack.hpp"
#include "ubnn/error.hpp"

namespace ubnn {

constexpr bool is_power_of_two(std::size_t n) noexcept { return std::has_single_bit(n); }

enum class Direction : std::uint8_t { kGeq = 0, kLeq = 1 };

/// Per-channel fused batchnorm + sign. GEQ: bit = acc >= threshold.
/// LEQ (negative gamma): bit = acc <= threshold.
struct ThresholdSpec {
  std::int32_t threshold = 0;
  Direction direction = Direction::kGeq;

  constexpr bool passes(std::int64_t acc) const noexcept {
    return direction == Direction::kGeq ? acc >= threshold : acc <= threshold;
  }

  friend bool operator==(const ThresholdSpec&, const ThresholdSpec&) = default;
};

struct PoolWindow {
  std::size_t k = 1;
  std::size_t stride = 1;

  friend bool operator==(const PoolWindow&, const PoolWindow&) = default;
};

/// Filters are stored back to back, each starting on a word boundary.
/// Weight bit (k, c) of filter m is logical bit k * c_in + c of that filter.
struct BinaryConvLayer {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t k = 0;
  std::vector<Word> weights;
  std::vector<ThresholdSpec> thresholds;
  std::optional<PoolWindow> fused_pool;

  std::size_t window_bits() const noexcept { return k * c_in; }
  std::size_t words_per_filter() const noexcept { return words_for(window_bits()); }
  std::span<const Word> filter(std::size_t m) const noexcept {
    return std::span<const Word>(weights).subspan(m * words_per_filter(), words_per_filter());
  }

  friend bool operator==(const BinaryConvLayer&, const BinaryConvLayer&) = default;
};

/// Same storage as BinaryConvLayer; thresholds compare the raw int32
/// accumulator of +-1 weights times int8 inputs.
struct Int8ConvLayer {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t k = 0;
  std::vector<Word> weights;
  std::vector<ThresholdSpec> thresholds;
  std::optional<PoolWindow> fused_pool;

  static constexpr std::size_t kMaxWindow = std::size_t{1} << 24;

  std::size_t window_bits() const noexcept { return k * c_in; }
  std::size_t words_per_filter() const noexcept { return words_for(window_bits()); }
  std::span<const Word> filter(std::size_t m) const noexcept {
    return std::span<const Word>(weights).subspan(m * words_per_filter(), words_per_filter());
  }

  friend bool operator==(const Int8ConvLayer&, const Int8ConvLayer&) = default;
};

/// Output head. score_m = scale_m * dot(x, w_m) + bias_m, scale and bias in
/// Q16.16, score in Q16.16 held in 64 bits.
struct BinaryFcLayer {
  std::size_t in_bits = 0;
  std::size_t n_classes = 0;
  std::vector<Word> weights;
  std::vector<std::int32_t> score_scale;
  std::vector<std::int32_t> score_bias;

  std::size_t words_per_class() const noexcept { return words_for(in_bits); }
  std::span<const Word> class_weights(std::size_t m) const noexcept {
    return std::span<const Word>(weights).subspan(m * words_per_class(), words_per_class());
  }

  friend bool operator==(const BinaryFcLayer&, const BinaryFcLayer&) = default;
};

/// Time-major int8 activations (the sensor input of the first layer).
struct Int8Tensor {
  std::size_t timesteps = 0;
  std::size_t channels = 0;
  std::vector<std::int8_t> data;

  std::int8_t at(std::size_t t, std::size_t c) const noexcept { return data[t * channels + c]; }

  friend bool operator==(const Int8Tensor&, const Int8Tensor&) = default;
};

/// Execution counters filled in by the kernels when a non-null pointer is
/// passed. Counts are word operations, not cycles.
struct OpCounters {
  std::uint64_t xnor_word_ops = 0;
  std::uint64_t popcount_ops = 0;
  std::uint64_t threshold_compares = 0;
  std::uint64_t or_ops = 0;
  std::uint64_t int8_macs = 0;

  OpCounters& operator+=(const OpCounters& o) noexcept {
    xnor_word_ops += o.xnor_word_ops;
    popcount_ops += o.popcount_ops;
    threshold_compares += o.threshold_compares;
    or_ops += o.or_ops;
    int8_macs += o.int8_macs;
    return *this;
  }
  friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

enum class LoopOrder {
  kTimeOuter,     // all output channels of a timestep before the next timestep
  kChannelOuter,  // reference schedule: one channel over all timesteps
};

/// Register blocking of the binary conv inner loop: `timesteps` x `channels`
/// outputs per iteration, scalar epilogues for remainders.
struct ConvSchedule {
  static constexpr std::size_t kMaxBlock = 4;

  std::size_t timesteps = 2;
  std::size_t channels = 2;
  LoopOrder order = LoopOrder::kTimeOuter;
};

inline std::int32_t to_q16(double v) {
  const double scaled = std::round(v * 65536.0);
  if (!(scaled >= static_cast<double>(std::numeric_limits<std::int32_t>::min()) &&
        scaled <= static_cast<double>(std::numeric_limits<std::int32_t>::max()))) {
    throw Error(ErrorCode::kInvalidArgument, "value " + std::to_string(v) + " overflows Q16.16");
  }
  return static_cast<std::int32_t>(scaled);
}

constexpr double from_q16(std::int64_t q) noexcept { return static_cast<double>(q) / 65536.0; }

namespace detail {

// Batchnorm followed by sign, with sign(0) = +1. Kept as a single expression
// so that folding and the reference oracle evaluate the same float ops.
inline bool batchnorm_positive(double y, double mu, double sigma, double gamma,
                               double beta) noexcept {
  return gamma * (y - mu) / sigma + beta >= 0.0;
}

inline void check_batchnorm(double sigma, double gamma) {
  if (!(sigma > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "batchnorm sigma must be > 0");
  }
  if (gamma == 0.0 || std::isnan(gamma)) {
    throw Error(ErrorCode::kInvalidArgument, "batchnorm gamma must be non-zero");
  }
}

// Folds batchnorm-then-sign over accumulator values acc in [lo, hi], where the
// pre-batchnorm value is y = y_scale * acc - y_offset. `boundary` is the real
// accumulator value where the batchnorm output crosses zero. The closed-form
// ceiling/floor is corrected against the float predicate so the integer
// comparison agrees with it at every reachable acc, even where the division
// rounds across an integer.
inline ThresholdSpec fold_range(double mu, double sigma, double gamma, double beta,
                                double boundary, std::int64_t lo, std::int64_t hi,
                                std::int64_t y_scale, std::int64_t y_offset) {
  auto passes = [&](std::int64_t acc) {
    return batchnorm_positive(static_cast<double>(y_scale * acc - y_offset), mu, sigma, gamma,
                              beta);
  };
  const double lo_d = static_cast<double>(lo);
  const double hi_d = static_cast<double>(hi);
  if (gamma > 0.0) {
    // Smallest passing acc; hi + 1 means none pass.
    const double clamped = std::clamp(std::isnan(boundary) ? hi_d + 1.0 : boundary, lo_d, hi_d + 1.0);
    auto th = static_cast<std::int64_t>(std::ceil(clamped));
    while (th > lo && passes(th - 1)) --th;
    while (th <= hi && !passes(th)) ++th;
    return {static_cast<std::int32_t>(th), Direction::kGeq};
  }
  // Largest passing acc; lo - 1 means none pass.
  const double clamped = std::clamp(std::isnan(boundary) ? lo_d - 1.0 : boundary, lo_d - 1.0, hi_d);
  auto th = static_cast<std::int64_t>(std::floor(clamped));
  while (th < hi && passes(th + 1)) ++th;
  while (th >= lo && !passes(th)) --th;
  return {static_cast<std::int32_t>(th), Direction::kLeq};
}

}  // namespace detail

/// Folds batchnorm + sign of a binary layer into a popcount threshold:
/// th = ((mu - beta * sigma / gamma) + K * C_in) / 2, ceiling for gamma > 0
/// (GEQ) and floor for gamma < 0 (LEQ). Thresholds are clamped to the
/// reachable popcount range [0, N] widened by one.
inline ThresholdSpec fold_batchnorm_binary(double mu, double sigma, double gamma, double beta,
                                           std::size_t k, std::size_t c_in) {
  detail::check_batchnorm(sigma, gamma);
  const auto n = static_cast<std::int64_t>(k * c_in);
  const double boundary = ((mu - beta * sigma / gamma) + static_cast<double>(n)) / 2.0;
  return detail::fold_range(mu, sigma, gamma, beta, boundary, 0, n, 2, n);
}

/// Folds batchnorm + sign of the int8 first layer into a threshold on the raw
/// accumulator: th = mu - beta * sigma / gamma.
inline ThresholdSpec fold_batchnorm_int8(double mu, double sigma, double gamma, double beta,
                                         std::size_t k, std::size_t c_in) {
  detail::check_batchnorm(sigma, gamma);
  const auto n = static_cast<std::int64_t>(k * c_in);
  const double boundary = mu - beta * sigma / gamma;
  // The reachable range is [-128 n, 128 n]; keep one step of headroom in int32.
  constexpr std::int64_t kLimit = std::numeric_limits<std::int32_t>::max() - 1;
  return detail::fold_range(mu, sigma, gamma, beta, boundary, std::max(-128 * n, -kLimit),
                            std::min(128 * n, kLimit), 1, 0);
}

namespace detail {

inline std::size_t conv_output_steps(std::size_t t_in, std::size_t k, const char* what) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, std::string(what) + ": kernel size 0");
  if (t_in < k) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": " + std::to_string(t_in) +
                                               " timesteps < kernel size " + std::to_string(k));
  }
  return t_in - k + 1;
}

inline void check_pool(const PoolWindow& p, std::size_t t_in) {
  if (p.k == 0) throw Error(ErrorCode::kInvalidArgument, "pool size 0");
  if (p.k != p.stride) {
    throw Error(ErrorCode::kInvalidArgument, "pooling requires kernel == stride, got (" +
                                                 std::to_string(p.k) + ", " +
                                                 std::to_string(p.stride) + ")");
  }
  if (p.k > t_in) {
    throw Error(ErrorCode::kShapeMismatch, "pool size " + std::to_string(p.k) + " exceeds " +
                                               std::to_string(t_in) + " timesteps");
  }
}

// Output sink shared by the conv kernels. With a fused pool the bit for conv
// timestep t is ORed into pooled timestep t / k; conv timesteps in a trailing
// partial window are never computed.
class ConvSink {
 public:
  ConvSink(std::size_t t_conv, std::size_t c_out, const std::optional<PoolWindow>& pool,
           OpCounters* counters)
      : pool_k_(pool ? pool->k : 1),
        out_(t_conv / pool_k_, c_out),
        counters_(counters) {}

  std::size_t computed_steps() const noexcept { return out_.timesteps() * pool_k_; }

  void emit(std::size_t t, std::size_t m, bool bit) noexcept {
    if (pool_k_ == 1) {
      if (bit) out_.set(t, m, true);
      return;
    }
    if (counters_) ++counters_->or_ops;
    if (bit) out_.set(t / pool_k_, m, true);
  }

  PackedBitTensor take() && { return std::move(out_); }

 private:
  std::size_t pool_k_;
  PackedBitTensor out_;
  OpCounters* counters_;
};

template <class Layer>
void check_conv_layer(const Layer& layer, const char* what) {
  if (layer.weights.size() != layer.c_out * layer.words_per_filter()) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": weight storage holds " +
                                               std::to_string(layer.weights.size()) +
                                               " words, expected " +
                                               std::to_string(layer.c_out * layer.words_per_filter()));
  }
  if (layer.thresholds.size() != layer.c_out) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": " +
                                               std::to_string(layer.thresholds.size()) +
                                               " thresholds for " + std::to_string(layer.c_out) +
                                               " output channels");
  }
}

}  // namespace detail

/// Binarized convolution with fused threshold (and optional fused OR-pool).
/// Default schedule: outer loop over timesteps, inner over output channels,
/// 2 timesteps x 2 channels per inner iteration.
inline PackedBitTensor conv1d_binary(const PackedBitTensor& x, const BinaryConvLayer& layer,
                                     const ConvSchedule& schedule = {},
                                     OpCounters* counters = nullptr) {
  if (x.channels() != layer.c_in) {
    throw Error(ErrorCode::kShapeMismatch, "conv1d_binary: input has " +
                                               std::to_string(x.channels()) + " channels, layer expects " +
                                               std::to_string(layer.c_in));
  }
  detail::check_conv_layer(layer, "conv1d_binary");
  const std::size_t t_out = detail::conv_output_steps(x.timesteps(), layer.k, "conv1d_binary");
  if (layer.fused_pool) detail::check_pool(*layer.fused_pool, t_out);
  if (schedule.timesteps == 0 || schedule.channels == 0 ||
      schedule.timesteps > ConvSchedule::kMaxBlock || schedule.channels > ConvSchedule::kMaxBlock) {
    throw Error(ErrorCode::kInvalidArgument, "conv schedule blocking must be in [1, 4]");
  }

  detail::ConvSink sink(t_out, layer.c_out, layer.fused_pool, counters);
  const std::size_t steps = sink.computed_steps();
  const std::size_t n_bits = layer.window_bits();
  const std::size_t n_words = layer.words_per_filter();
  const Word last_mask = tail_mask(n_bits);
  const auto src = x.stream().words();

  const bool time_outer = schedule.order == LoopOrder::kTimeOuter;
  const std::size_t bt = time_outer ? schedule.timesteps : 1;
  const std::size_t bm = time_outer ? schedule.channels : 1;

  // Aligned input windows for the timesteps of the current block.
  std::vector<Word> scratch(bt * n_words);
  auto window = [&](std::size_t i) {
    return std::span<Word>(scratch).subspan(i * n_words, n_words);
  };

  auto run_block = [&](std::size_t t0, std::size_t nt, std::size_t m0, std::size_t nm) {
    std::array<std::array<std::int64_t, ConvSchedule::kMaxBlock>, ConvSchedule::kMaxBlock> acc{};
    for (std::size_t w = 0; w < n_words; ++w) {
      const Word mask = (w + 1 == n_words) ? last_mask : kAllOnes;
      for (std::size_t j = 0; j < nm; ++j) {
        const Word wt = layer.weights[(m0 + j) * n_words + w];
        for (std::size_t i = 0; i < nt; ++i) {
          acc[i][j] += std::popcount(static_cast<Word>(~(scratch[i * n_words + w] ^ wt) & mask));
        }
      }
      if (counters) {
        counters->xnor_word_ops += nt * nm;
        counters->popcount_ops += nt * nm;
      }
    }
    for (std::size_t i = 0; i < nt; ++i) {
      for (std::size_t j = 0; j < nm; ++j) {
        sink.emit(t0 + i, m0 + j, layer.thresholds[m0 + j].passes(acc[i][j]));
      }
    }
    if (counters) counters->threshold_compares += nt * nm;
  };

  if (time_outer) {
    for (std::size_t t0 = 0; t0 < steps; t0 += bt) {
      const std::size_t nt = std::min(bt, steps - t0);
      for (std::size_t i = 0; i < nt; ++i) {
        extract_window_into(src, (t0 + i) * layer.c_in, n_bits, window(i));
      }
      for (std::size_t m0 = 0; m0 < layer.c_out; m0 += bm) {
        run_block(t0, nt, m0, std::min(bm, layer.c_out - m0));
      }
    }
  } else {
    for (std::size_t m = 0; m < layer.c_out; ++m) {
      for (std::size_t t = 0; t < steps; ++t) {
        extract_window_into(src, t * layer.c_in, n_bits, window(0));
        run_block(t, 1, m, 1);
      }
    }
  }
  return std::move(sink).take();
}

/// Mixed int8/binary convolution for the first layer. The accumulator is
/// sum over the K x C_in window of (+-1 weight) * x and is thresholded as is.
inline PackedBitTensor conv1d_int8(const Int8Tensor& x, const Int8ConvLayer& layer,
                                   OpCounters* counters = nullptr) {
  if (x.channels != layer.c_in) {
    throw Error(ErrorCode::kShapeMismatch, "conv1d_int8: input has " + std::to_string(x.channels) +
                                               " channels, layer expects " +
                                               std::to_string(layer.c_in));
  }
  if (x.data.size() != x.timesteps * x.channels) {
    throw Error(ErrorCode::kShapeMismatch, "conv1d_int8: input data size does not match shape");
  }
  if (layer.window_bits() > Int8ConvLayer::kMaxWindow) {
    throw Error(ErrorCode::kInvalidArgument, "conv1d_int8: K * C_in exceeds 2^24");
  }
  detail::check_conv_layer(layer, "conv1d_int8");
  const std::size_t t_out = detail::conv_output_steps(x.timesteps, layer.k, "conv1d_int8");
  if (layer.fused_pool) detail::check_pool(*layer.fused_pool, t_out);

  detail::ConvSink sink(t_out, layer.c_out, layer.fused_pool, counters);
  const std::size_t steps = sink.computed_steps();
  const std::size_t n = layer.window_bits();
  for (std::size_t t = 0; t < steps; ++t) {
    // The K x C_in window is contiguous in time-major order.
    const std::int8_t* in = x.data.data() + t * layer.c_in;
    std::int64_t total = 0;
    for (std::size_t i = 0; i < n; ++i) total += in[i];
    for (std::size_t m = 0; m < layer.c_out; ++m) {
      const auto w = layer.filter(m);
      // sum(w * x) = 2 * sum_{w=+1} x - sum x
      std::int64_t positive = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (get_bit(w, i)) positive += in[i];
      }
      sink.emit(t, m, layer.thresholds[m].passes(2 * positive - total));
    }
    if (counters) {
      counters->int8_macs += n * layer.c_out;
      counters->threshold_compares += layer.c_out;
    }
  }
  return std::move(sink).take();
}

/// Non-overlapping max-pool over time; on the bit encoding max is OR.
inline PackedBitTensor maxpool_binary(const PackedBitTensor& x, std::size_t pool_k,
                                      std::size_t pool_s, OpCounters* counters = nullptr) {
  detail::check_pool(PoolWindow{pool_k, pool_s}, x.timesteps());
  const std::size_t t_out = x.timesteps() / pool_k;
  const std::size_t c = x.channels();
  PackedBitTensor out(t_out, c);
  std::vector<Word> row(words_for(c));
  const auto src = x.stream().words();
  auto dst = out.stream().mutable_words();
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t j = 0; j < pool_k; ++j) {
      extract_window_into(src, (t * pool_k + j) * c, c, row);
      or_bits_into(dst, t * c, row, c);
    }
    if (counters) counters->or_ops += pool_k * c;
  }
  return out;
}

/// Q16.16 class scores of the output head. Input is flattened in its own
/// time-major stream order.
inline std::vector<std::int64_t> fc_scores(const PackedBitTensor& x, const BinaryFcLayer& layer,
                                           OpCounters* counters = nullptr) {
  if (x.stream().bit_len() != layer.in_bits) {
    throw Error(ErrorCode::kShapeMismatch, "fc_scores: input has " +
                                               std::to_string(x.stream().bit_len()) +
                                               " bits, layer expects " + std::to_string(layer.in_bits));
  }
  if (layer.weights.size() != layer.n_classes * layer.words_per_class() ||
      layer.score_scale.size() != layer.n_classes || layer.score_bias.size() != layer.n_classes) {
    throw Error(ErrorCode::kShapeMismatch, "fc_scores: parameter sizes do not match n_classes");
  }
  std::vector<std::int64_t> scores(layer.n_classes);
  for (std::size_t m = 0; m < layer.n_classes; ++m) {
    const std::int64_t dot = binary_dot(x.stream().words(), layer.class_weights(m), layer.in_bits);
    scores[m] = std::int64_t{layer.score_scale[m]} * dot + std::int64_t{layer.score_bias[m]};
  }
  if (counters) {
    counters->xnor_word_ops += layer.n_classes * layer.words_per_class();
    counters->popcount_ops += layer.n_classes * layer.words_per_class();
  }
  return scores;
}

/// Index of the maximum score, lowest index on ties.
template <class T>
std::size_t predict(std::span<const T> scores) {
  if (scores.empty()) throw Error(ErrorCode::kInvalidArgument, "predict: empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

inline std::size_t predict(const std::vector<std::int64_t>& scores) {
  return predict(std::span<const std::int64_t>(scores));
}

}  // namespace ubnn
