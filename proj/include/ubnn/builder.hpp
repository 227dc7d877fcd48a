#pragma once

// Turns a dense reference network (float batchnorm, +-1 weights) into the
// packed deployable form: weights bit-packed per filter, batchnorm folded into
// integer thresholds, FC scale/bias quantized to Q16.16.

#include <cstddef>
#include <variant>

#include "ubnn/bitpack.hpp"
#include "ubnn/layers.hpp"
#include "ubnn/model.hpp"
#include "ubnn/oracle.hpp"

namespace ubnn {

namespace detail {

template <class Conv>
Conv pack_conv(const oracle::RefConv& ref, std::size_t layer_index) {
  const auto& f = ref.filters;
  Conv conv;
  conv.c_in = f.c_in;
  conv.c_out = f.c_out;
  conv.k = f.k;
  const std::size_t stride = conv.words_per_filter();
  conv.weights.assign(f.c_out * stride, 0);
  for (std::size_t m = 0; m < f.c_out; ++m) {
    std::span<Word> dst(conv.weights.data() + m * stride, stride);
    for (std::size_t kk = 0; kk < f.k; ++kk) {
      for (std::size_t c = 0; c < f.c_in; ++c) {
        const std::int8_t w = f.at(m, kk, c);
        if (w != 1 && w != -1) {
          throw Error(ErrorCode::kInvalidArgument, "filter weight is not +-1", layer_index);
        }
        set_bit(dst, kk * f.c_in + c, w == 1);
      }
    }
  }
  if (ref.activation.size() != f.c_out) {
    throw Error(ErrorCode::kShapeMismatch, "activation count differs from output channels",
                layer_index);
  }
  for (const auto& act : ref.activation) {
    if (const auto* bn = std::get_if<oracle::BatchNorm>(&act)) {
      conv.thresholds.push_back(
          ref.int8_input ? fold_batchnorm_int8(bn->mu, bn->sigma, bn->gamma, bn->beta, f.k, f.c_in)
                         : fold_batchnorm_binary(bn->mu, bn->sigma, bn->gamma, bn->beta, f.k, f.c_in));
    } else {
      conv.thresholds.push_back(std::get<ThresholdSpec>(act));
    }
  }
  return conv;
}

}  // namespace detail

inline Network build_network(const oracle::ReferenceNetwork& ref) {
  Network net;
  net.input = {ref.timesteps, ref.channels,
               ref.int8_input ? InputDomain::kInt8 : InputDomain::kBinary};
  for (std::size_t i = 0; i < ref.layers.size(); ++i) {
    const auto& layer = ref.layers[i];
    if (const auto* conv = std::get_if<oracle::RefConv>(&layer)) {
      if (conv->int8_input) {
        net.layers.emplace_back(detail::pack_conv<Int8ConvLayer>(*conv, i));
      } else {
        net.layers.emplace_back(detail::pack_conv<BinaryConvLayer>(*conv, i));
      }
    } else if (const auto* pool = std::get_if<oracle::RefPool>(&layer)) {
      net.layers.emplace_back(PoolLayer{pool->k, pool->stride});
    } else {
      const auto& fc = std::get<oracle::RefFc>(layer);
      BinaryFcLayer out;
      out.in_bits = fc.in_len;
      out.n_classes = fc.n_classes;
      out.weights.assign(fc.n_classes * out.words_per_class(), 0);
      for (std::size_t m = 0; m < fc.n_classes; ++m) {
        std::span<Word> dst(out.weights.data() + m * out.words_per_class(), out.words_per_class());
        for (std::size_t j = 0; j < fc.in_len; ++j) set_bit(dst, j, fc.weights[m * fc.in_len + j] == 1);
        out.score_scale.push_back(to_q16(fc.scale[m]));
        out.score_bias.push_back(to_q16(fc.bias[m]));
      }
      net.n_classes = fc.n_classes;
      net.layers.emplace_back(std::move(out));
    }
  }
  validate(net);
  return net;
}

}  // namespace ubnn
