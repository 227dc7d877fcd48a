#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "ubnn/bitpack.hpp"
#include "ubnn/error.hpp"
#include "ubnn/layers.hpp"
#include "ubnn/model.hpp"

namespace ubnn {

/// One executed kernel call. A conv immediately followed by a pool runs as a
/// single stage covering both descriptor entries.
struct Stage {
  std::size_t first_layer = 0;
  std::size_t last_layer = 0;
  Layer layer;
};

using NetworkInput = std::variant<Int8Tensor, PackedBitTensor>;

struct ForwardTrace {
  // Output of each non-final stage, in stage order.
  std::vector<PackedBitTensor> activations;
  std::vector<std::int64_t> scores;
  std::size_t prediction = 0;
};

/// Builds the network input from a flat time-major row of int8 samples. For
/// binary-domain networks every value must be +1 or -1.
inline NetworkInput make_input(const InputSpec& spec, std::span<const std::int8_t> row) {
  if (row.size() != spec.timesteps * spec.channels) {
    throw Error(ErrorCode::kShapeMismatch, "input row has " + std::to_string(row.size()) +
                                               " values, model expects " +
                                               std::to_string(spec.timesteps * spec.channels));
  }
  if (spec.domain == InputDomain::kBinary) return pack(row, spec.timesteps, spec.channels);
  return Int8Tensor{spec.timesteps, spec.channels, std::vector<std::int8_t>(row.begin(), row.end())};
}

/// Immutable compiled network. Safe to share across threads; each call keeps
/// its own scratch buffers.
class Engine {
 public:
  explicit Engine(Network net, ConvSchedule schedule = {})
      : net_(std::move(net)), schedule_(schedule) {
    validate(net_);
    for (std::size_t i = 0; i < net_.layers.size(); ++i) {
      Stage stage{i, i, net_.layers[i]};
      const bool is_conv = std::holds_alternative<Int8ConvLayer>(stage.layer) ||
                           std::holds_alternative<BinaryConvLayer>(stage.layer);
      if (is_conv && i + 1 < net_.layers.size()) {
        if (const auto* p = std::get_if<PoolLayer>(&net_.layers[i + 1])) {
          std::visit(
              [&](auto& l) {
                if constexpr (requires { l.fused_pool; }) l.fused_pool = PoolWindow{p->k, p->stride};
              },
              stage.layer);
          stage.last_layer = ++i;
        }
      }
      stages_.push_back(std::move(stage));
    }
  }

  const Network& network() const noexcept { return net_; }
  std::span<const Stage> stages() const noexcept { return stages_; }

  /// Runs every stage. When `counters` is non-null it receives one entry per
  /// stage.
  ForwardTrace run(const NetworkInput& input, std::vector<OpCounters>* counters = nullptr) const {
    check_input(input);
    if (counters) counters->assign(stages_.size(), OpCounters{});
    ForwardTrace trace;
    PackedBitTensor current;
    const Int8Tensor* int8_input = std::get_if<Int8Tensor>(&input);
    if (const auto* packed = std::get_if<PackedBitTensor>(&input)) current = *packed;

    for (std::size_t s = 0; s < stages_.size(); ++s) {
      OpCounters* c = counters ? &(*counters)[s] : nullptr;
      const Layer& layer = stages_[s].layer;
      if (const auto* c8 = std::get_if<Int8ConvLayer>(&layer)) {
        current = conv1d_int8(*int8_input, *c8, c);
      } else if (const auto* cb = std::get_if<BinaryConvLayer>(&layer)) {
        current = conv1d_binary(current, *cb, schedule_, c);
      } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
        current = maxpool_binary(current, p->k, p->stride, c);
      } else {
        trace.scores = fc_scores(current, std::get<BinaryFcLayer>(layer), c);
        trace.prediction = predict(trace.scores);
        break;
      }
      trace.activations.push_back(current);
    }
    return trace;
  }

  std::size_t classify(const NetworkInput& input) const { return run(input).prediction; }

 private:
  void check_input(const NetworkInput& input) const {
    const auto& spec = net_.input;
    if (const auto* t = std::get_if<Int8Tensor>(&input)) {
      if (spec.domain != InputDomain::kInt8 || t->timesteps != spec.timesteps ||
          t->channels != spec.channels || t->data.size() != t->timesteps * t->channels) {
        throw Error(ErrorCode::kShapeMismatch, "int8 input does not match the model input spec");
      }
    } else {
      const auto& p = std::get<PackedBitTensor>(input);
      if (spec.domain != InputDomain::kBinary || p.timesteps() != spec.timesteps ||
          p.channels() != spec.channels) {
        throw Error(ErrorCode::kShapeMismatch, "binary input does not match the model input spec");
      }
    }
  }

  Network net_;
  ConvSchedule schedule_;
  std::vector<Stage> stages_;
};

}  // namespace ubnn
