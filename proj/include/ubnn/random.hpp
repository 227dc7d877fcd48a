#pragma once

// Random architectures, parameters and inputs for property tests, the
// `verify` command and `generate`. All draws go through a caller-supplied
// std::mt19937_64 so results are reproducible from a seed.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "ubnn/error.hpp"
#include "ubnn/model.hpp"
#include "ubnn/oracle.hpp"
#include "ubnn/rf.hpp"

namespace ubnn::random {

using Rng = std::mt19937_64;

inline std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double uniform_real(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::int8_t pm_one(Rng& rng) { return (rng() & 1u) ? 1 : -1; }

inline std::vector<std::int8_t> int8_row(Rng& rng, std::size_t n) {
  std::uniform_int_distribution<int> dist(-128, 127);
  std::vector<std::int8_t> row(n);
  for (auto& v : row) v = static_cast<std::int8_t>(dist(rng));
  return row;
}

inline std::vector<std::int8_t> pm_one_row(Rng& rng, std::size_t n) {
  std::vector<std::int8_t> row(n);
  for (auto& v : row) v = pm_one(rng);
  return row;
}

/// A row matching the model input: int8 samples, or +-1 for binary input.
inline std::vector<std::int8_t> input_row(Rng& rng, const InputSpec& spec) {
  const std::size_t n = spec.timesteps * spec.channels;
  return spec.domain == InputDomain::kInt8 ? int8_row(rng, n) : pm_one_row(rng, n);
}

/// Batchnorm parameters that put the zero crossing inside the typical range
/// of the accumulator, with both signs of gamma.
inline oracle::BatchNorm batchnorm(Rng& rng, std::size_t window, bool int8_input) {
  const double spread = std::sqrt(static_cast<double>(window)) * (int8_input ? 74.0 : 1.0);
  oracle::BatchNorm bn;
  bn.mu = uniform_real(rng, -spread, spread);
  bn.sigma = uniform_real(rng, 0.1, 2.0) * std::max(spread, 1.0);
  const double g = uniform_real(rng, 0.1, 2.0);
  bn.gamma = (rng() % 4 == 0) ? -g : g;
  bn.beta = uniform_real(rng, -1.0, 1.0);
  return bn;
}

/// Reference network with random +-1 weights, float batchnorm per channel and
/// Q16.16-representable FC parameters. Throws kValidation if the
/// architecture does not fit the input.
inline oracle::ReferenceNetwork reference_network(Rng& rng, const std::vector<ArchLayer>& arch,
                                                  const InputSpec& input, std::size_t n_classes) {
  oracle::ReferenceNetwork net;
  net.timesteps = input.timesteps;
  net.channels = input.channels;
  net.int8_input = input.domain == InputDomain::kInt8;
  std::size_t t = input.timesteps;
  std::size_t c = input.channels;
  bool first_conv = true;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const auto& a = arch[i];
    if (a.kind == ArchLayer::Kind::kConv) {
      if (a.b == 0 || a.b > t) throw Error(ErrorCode::kValidation, "kernel exceeds timesteps", i);
      oracle::RefConv conv;
      conv.int8_input = first_conv && net.int8_input;
      conv.filters = {a.a, a.b, c, {}};
      for (std::size_t j = 0; j < a.a * a.b * c; ++j) conv.filters.w.push_back(pm_one(rng));
      for (std::size_t m = 0; m < a.a; ++m) {
        conv.activation.emplace_back(batchnorm(rng, a.b * c, conv.int8_input));
      }
      net.layers.emplace_back(std::move(conv));
      t = t - a.b + 1;
      c = a.a;
      first_conv = false;
    } else if (a.kind == ArchLayer::Kind::kPool) {
      if (a.a == 0 || a.a > t) throw Error(ErrorCode::kValidation, "pool exceeds timesteps", i);
      net.layers.emplace_back(oracle::RefPool{a.a, a.b});
      t = (t - a.a) / a.b + 1;
    } else {
      oracle::RefFc fc;
      fc.n_classes = n_classes;
      fc.in_len = t * c;
      for (std::size_t j = 0; j < n_classes * fc.in_len; ++j) fc.weights.push_back(pm_one(rng));
      const double span = static_cast<double>(fc.in_len);
      for (std::size_t m = 0; m < n_classes; ++m) {
        fc.scale.push_back(std::round(uniform_real(rng, -2.0, 2.0) * 65536.0) / 65536.0);
        fc.bias.push_back(std::round(uniform_real(rng, -span, span) * 65536.0) / 65536.0);
      }
      net.layers.emplace_back(std::move(fc));
    }
  }
  return net;
}

struct ArchOptions {
  std::size_t max_timesteps = 256;
  std::size_t max_channels = 32;
  std::size_t max_classes = 8;
};

struct ArchDraw {
  std::vector<ArchLayer> layers;
  InputSpec input;
  std::size_t n_classes = 2;
};

/// Draws an architecture from the "Conv(C,K) ... Pool(P,P) ... FC" family:
/// one to three blocks of one or two convs, each block optionally followed by
/// Pool(2,2) or Pool(4,4), then FC. Channels are powers of two up to
/// max_channels, K in {3, 5, 7, 11, 15}. The input length is drawn so the
/// chain stays valid within max_timesteps.
inline ArchDraw architecture(Rng& rng, const ArchOptions& opt = {}) {
  static constexpr std::size_t kKernels[] = {3, 5, 7, 11, 15};
  std::size_t max_log = 0;
  while ((std::size_t{2} << max_log) <= opt.max_channels) ++max_log;
  for (;;) {
    ArchDraw d;
    const std::size_t blocks = uniform(rng, 1, 3);
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t convs = uniform(rng, 1, 2);
      for (std::size_t j = 0; j < convs; ++j) {
        d.layers.push_back({ArchLayer::Kind::kConv, std::size_t{1} << uniform(rng, 0, max_log),
                            kKernels[uniform(rng, 0, 4)]});
      }
      const std::size_t pool = uniform(rng, 0, 2);
      if (pool != 0) {
        const std::size_t p = pool == 1 ? 2 : 4;
        d.layers.push_back({ArchLayer::Kind::kPool, p, p});
      }
    }
    d.layers.push_back({ArchLayer::Kind::kFc, 0, 0});

    // Smallest input length that keeps at least one timestep everywhere.
    std::size_t need = 1;
    for (auto it = d.layers.rbegin(); it != d.layers.rend(); ++it) {
      if (it->kind == ArchLayer::Kind::kConv) need = need + it->b - 1;
      if (it->kind == ArchLayer::Kind::kPool) need = need * it->a;
    }
    if (need > opt.max_timesteps) continue;
    const bool int8 = rng() % 4 != 0;
    const std::size_t channels =
        int8 ? uniform(rng, 1, 4) : (std::size_t{1} << uniform(rng, 0, max_log));
    d.input = {uniform(rng, need, opt.max_timesteps), channels,
               int8 ? InputDomain::kInt8 : InputDomain::kBinary};
    d.n_classes = uniform(rng, 2, opt.max_classes);
    return d;
  }
}

/// Random leaf distribution quantized to uint8.
inline std::vector<std::uint8_t> leaf_probabilities(Rng& rng, std::size_t n_classes) {
  std::vector<double> p(n_classes);
  double total = 0.0;
  for (auto& v : p) total += (v = uniform_real(rng, 0.0, 1.0));
  for (auto& v : p) v /= total;
  return rf::quantize_probabilities(p);
}

/// Random explicit tree of depth at most `max_depth`; each node above the
/// depth limit splits with probability `split_p`. Node order is shuffled
/// relative to pre-order so flattening has real work to do.
inline rf::Tree tree(Rng& rng, std::size_t max_depth, std::size_t n_classes, std::size_t n_features,
                     double split_p = 0.75) {
  rf::Tree t;
  struct Item {
    int node;
    std::size_t depth;
  };
  t.nodes.emplace_back();
  std::vector<Item> todo{{0, 0}};
  while (!todo.empty()) {
    const Item it = todo.back();
    todo.pop_back();
    if (it.depth < max_depth && uniform_real(rng, 0.0, 1.0) < split_p) {
      const int left = static_cast<int>(t.nodes.size());
      t.nodes.emplace_back();
      t.nodes.emplace_back();
      auto& n = t.nodes[static_cast<std::size_t>(it.node)];
      n.feature = static_cast<int>(uniform(rng, 0, n_features - 1));
      n.threshold = static_cast<std::int8_t>(static_cast<int>(uniform(rng, 0, 255)) - 128);
      // Children in either storage order.
      n.left = (rng() & 1) ? left : left + 1;
      n.right = n.left == left ? left + 1 : left;
      todo.push_back({left, it.depth + 1});
      todo.push_back({left + 1, it.depth + 1});
    } else {
      t.nodes[static_cast<std::size_t>(it.node)].probabilities = leaf_probabilities(rng, n_classes);
    }
  }
  return t;
}

inline rf::FeatureQuantizer quantizer(Rng& rng, std::size_t n_features) {
  rf::FeatureQuantizer q;
  for (std::size_t i = 0; i < n_features; ++i) {
    q.scale.push_back(static_cast<float>(uniform_real(rng, 0.01, 50.0)));
    q.zero.push_back(static_cast<float>(uniform_real(rng, -1000.0, 1000.0)));
  }
  return q;
}

}  // namespace ubnn::random
