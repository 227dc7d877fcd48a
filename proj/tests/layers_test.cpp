#include <cmath>
#include <cstdint>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "ubnn/layers.hpp"
#include "ubnn/oracle.hpp"

namespace ubnn {
namespace {

using testing::dense_of;
using testing::random_binary_conv;
using testing::random_bits;
using testing::random_int8_conv;

oracle::DenseFilters dense_filters(const BinaryConvLayer& l) {
  oracle::DenseFilters f{l.c_out, l.k, l.c_in, {}};
  for (std::size_t m = 0; m < l.c_out; ++m) {
    for (std::size_t i = 0; i < l.window_bits(); ++i) f.w.push_back(get_bit(l.filter(m), i) ? 1 : -1);
  }
  return f;
}

oracle::DenseTensor reference_binary_conv(const PackedBitTensor& x, const BinaryConvLayer& l) {
  const auto y = oracle::conv1d_reference(dense_of(x), dense_filters(l));
  std::vector<oracle::ChannelActivation> act(l.thresholds.begin(), l.thresholds.end());
  return oracle::activation_reference(y, act, true, l.window_bits());
}

TEST(ConvBinary, AllOnesBoundary) {
  for (auto [c_in, k] : {std::pair<std::size_t, std::size_t>{16, 3}, {4, 11}, {1, 5}, {32, 7}}) {
    const std::size_t n = k * c_in;
    BinaryConvLayer layer{c_in, 2, k, std::vector<Word>(2 * words_for(n), 0), {}, std::nullopt};
    for (std::size_t m = 0; m < 2; ++m) {
      for (std::size_t i = 0; i < n; ++i) set_bit(std::span<Word>(layer.weights).subspan(m * words_for(n)), i, true);
    }
    layer.thresholds = {{static_cast<std::int32_t>(n), Direction::kGeq},
                        {static_cast<std::int32_t>(n + 1), Direction::kGeq}};
    const PackedBitTensor x = pack(std::vector<std::int8_t>(20 * c_in, 1), 20, c_in);
    const auto out = conv1d_binary(x, layer);
    ASSERT_EQ(out.timesteps(), 20 - k + 1);
    for (std::size_t t = 0; t < out.timesteps(); ++t) {
      EXPECT_TRUE(out.at(t, 0));
      EXPECT_FALSE(out.at(t, 1));
    }
  }
}

TEST(ConvBinary, FortyEightBitWindowUsesTwoWords) {
  random::Rng rng(11);
  const auto layer = random_binary_conv(rng, 16, 16, 3);
  EXPECT_EQ(layer.window_bits(), 48u);
  EXPECT_EQ(layer.words_per_filter(), 2u);
  const auto x = random_bits(rng, 64, 16);
  OpCounters c;
  const auto out = conv1d_binary(x, layer, {}, &c);
  EXPECT_EQ(out.timesteps(), 62u);
  EXPECT_EQ(c.xnor_word_ops, 62u * 16u * 2u);
  EXPECT_EQ(c.xnor_word_ops, 1984u);
  EXPECT_EQ(c.threshold_compares, 62u * 16u);
}

TEST(ConvBinary, MatchesOracle4x2x11) {
  random::Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const auto layer = random_binary_conv(rng, 4, 2, 11);
    const auto x = random_bits(rng, 32, 4);
    ASSERT_EQ(dense_of(conv1d_binary(x, layer)), reference_binary_conv(x, layer));
  }
}

TEST(ConvBinary, OracleEquivalenceAcrossShapes) {
  random::Rng rng(13);
  const std::size_t channels[] = {1, 2, 4, 8, 16, 32};
  const std::size_t kernels[] = {3, 5, 7, 11, 15};
  for (int i = 0; i < 300; ++i) {
    const std::size_t c_in = channels[rng() % 6];
    const std::size_t c_out = channels[rng() % 6];
    const std::size_t k = kernels[rng() % 5];
    const std::size_t t = k + rng() % (257 - k);
    const auto layer = random_binary_conv(rng, c_in, c_out, k);
    const auto x = random_bits(rng, t, c_in);
    ASSERT_EQ(dense_of(conv1d_binary(x, layer)), reference_binary_conv(x, layer))
        << c_in << " " << c_out << " " << k << " " << t;
  }
}

TEST(ConvBinary, BatchnormOracleEquivalence) {
  random::Rng rng(14);
  for (int i = 0; i < 100; ++i) {
    const std::size_t c_in = std::size_t{1} << (rng() % 6);
    const std::size_t c_out = std::size_t{1} << (rng() % 6);
    const std::size_t k = 1 + rng() % 15;
    auto layer = random_binary_conv(rng, c_in, c_out, k);
    std::vector<oracle::BatchNorm> bn;
    for (std::size_t m = 0; m < c_out; ++m) {
      bn.push_back(random::batchnorm(rng, k * c_in, false));
      layer.thresholds[m] = fold_batchnorm_binary(bn[m].mu, bn[m].sigma, bn[m].gamma, bn[m].beta, k, c_in);
    }
    const auto x = random_bits(rng, k + rng() % 100, c_in);
    const auto y = oracle::conv1d_reference(dense_of(x), dense_filters(layer));
    ASSERT_EQ(dense_of(conv1d_binary(x, layer)), oracle::batchnorm_sign_reference(y, bn));
  }
}

TEST(ConvBinary, Errors) {
  random::Rng rng(15);
  const auto layer = random_binary_conv(rng, 4, 2, 5);
  try {
    conv1d_binary(random_bits(rng, 10, 8), layer);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  EXPECT_THROW(conv1d_binary(random_bits(rng, 4, 4), layer), Error);
  EXPECT_THROW(conv1d_binary(random_bits(rng, 10, 4), layer, {0, 2}), Error);
  EXPECT_THROW(conv1d_binary(random_bits(rng, 10, 4), layer, {5, 2}), Error);
}

TEST(ConvBinary, ScheduleNeutrality) {
  random::Rng rng(16);
  for (int i = 0; i < 200; ++i) {
    const std::size_t c_in = std::size_t{1} << (rng() % 6);
    const std::size_t c_out = std::size_t{1} << (rng() % 6);
    const std::size_t k = 1 + rng() % 15;
    auto layer = random_binary_conv(rng, c_in, c_out, k);
    const auto x = random_bits(rng, k + rng() % 60, c_in);
    const auto naive = conv1d_binary(x, layer, {1, 1, LoopOrder::kChannelOuter});
    for (std::size_t bt = 1; bt <= 4; ++bt) {
      for (std::size_t bm = 1; bm <= 4; ++bm) {
        ASSERT_EQ(conv1d_binary(x, layer, {bt, bm, LoopOrder::kTimeOuter}), naive);
      }
    }
  }
}

TEST(ConvBinary, CountersIndependentOfSchedule) {
  random::Rng rng(17);
  const auto layer = random_binary_conv(rng, 8, 4, 7);
  const auto x = random_bits(rng, 33, 8);
  OpCounters a, b;
  conv1d_binary(x, layer, {2, 2}, &a);
  conv1d_binary(x, layer, {1, 1, LoopOrder::kChannelOuter}, &b);
  EXPECT_EQ(a, b);
}

TEST(ConvBinary, AlignmentInvariance) {
  random::Rng rng(18);
  for (int i = 0; i < 150; ++i) {
    const std::size_t c_in = std::size_t{1} << (rng() % 6);
    const std::size_t k = 1 + rng() % 15;
    const std::size_t t = k + rng() % 40;
    const auto layer = random_binary_conv(rng, c_in, std::size_t{1} << (rng() % 4), k);
    const auto inner = random::pm_one_row(rng, t * c_in);
    const std::size_t before = rng() % 37;
    const std::size_t after = rng() % 5;
    auto outer = random::pm_one_row(rng, before * c_in);
    outer.insert(outer.end(), inner.begin(), inner.end());
    const auto tail = random::pm_one_row(rng, after * c_in);
    outer.insert(outer.end(), tail.begin(), tail.end());

    const auto direct = conv1d_binary(pack(inner, t, c_in), layer);
    const auto embedded = conv1d_binary(pack(outer, before + t + after, c_in), layer);
    for (std::size_t s = 0; s < direct.timesteps(); ++s) {
      for (std::size_t m = 0; m < layer.c_out; ++m) {
        ASSERT_EQ(direct.at(s, m), embedded.at(s + before, m));
      }
    }
  }
}

TEST(ConvBinary, FusedPoolEqualsUnfused) {
  random::Rng rng(19);
  for (int i = 0; i < 200; ++i) {
    const std::size_t c_in = std::size_t{1} << (rng() % 6);
    const std::size_t k = 1 + rng() % 15;
    const std::size_t p = std::size_t{1} << (rng() % 3);
    const std::size_t t = k + p - 1 + rng() % 50;
    auto layer = random_binary_conv(rng, c_in, std::size_t{1} << (rng() % 6), k);
    const auto x = random_bits(rng, t, c_in);
    const auto unfused = maxpool_binary(conv1d_binary(x, layer), p, p);
    layer.fused_pool = PoolWindow{p, p};
    ASSERT_EQ(conv1d_binary(x, layer), unfused);
    ASSERT_EQ(conv1d_binary(x, layer, {3, 1}), unfused);
  }
}

TEST(ConvInt8, UniformInput) {
  for (int v : {-128, -3, 0, 5, 127}) {
    Int8ConvLayer layer{3, 2, 5, std::vector<Word>(2, 0), {}, std::nullopt};
    for (std::size_t m = 0; m < 2; ++m) {
      for (std::size_t i = 0; i < 15; ++i) set_bit(std::span<Word>(layer.weights).subspan(m, 1), i, true);
    }
    layer.thresholds = {{0, Direction::kGeq}, {1, Direction::kGeq}};
    const Int8Tensor x{10, 3, std::vector<std::int8_t>(30, static_cast<std::int8_t>(v))};
    const auto out = conv1d_int8(x, layer);
    ASSERT_EQ(out.timesteps(), 6u);
    for (std::size_t t = 0; t < 6; ++t) {
      EXPECT_EQ(out.at(t, 0), 15 * v >= 0);
      EXPECT_EQ(out.at(t, 1), 15 * v >= 1);
    }
  }
}

TEST(ConvInt8, ZeroInput) {
  random::Rng rng(20);
  for (int i = 0; i < 20; ++i) {
    auto layer = random_int8_conv(rng, 3, 4, 7);
    const Int8Tensor x{16, 3, std::vector<std::int8_t>(48, 0)};
    const auto out = conv1d_int8(x, layer);
    for (std::size_t t = 0; t < out.timesteps(); ++t) {
      for (std::size_t m = 0; m < 4; ++m) EXPECT_EQ(out.at(t, m), layer.thresholds[m].passes(0));
    }
  }
}

TEST(ConvInt8, MatchesIntegerLoop) {
  random::Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    const std::size_t c_in = 1 + rng() % 6;
    const std::size_t c_out = std::size_t{1} << (rng() % 6);
    const std::size_t k = 1 + rng() % 15;
    const std::size_t t = k + rng() % 80;
    auto layer = random_int8_conv(rng, c_in, c_out, k);
    const Int8Tensor x{t, c_in, random::int8_row(rng, t * c_in)};
    const auto out = conv1d_int8(x, layer);
    for (std::size_t s = 0; s + k <= t; ++s) {
      for (std::size_t m = 0; m < c_out; ++m) {
        std::int64_t acc = 0;
        for (std::size_t kk = 0; kk < k; ++kk) {
          for (std::size_t c = 0; c < c_in; ++c) {
            const int w = get_bit(layer.filter(m), kk * c_in + c) ? 1 : -1;
            acc += w * x.at(s + kk, c);
          }
        }
        ASSERT_EQ(out.at(s, m), layer.thresholds[m].passes(acc));
      }
    }
  }
}

TEST(ConvInt8, FusedPoolEqualsUnfused) {
  random::Rng rng(22);
  for (int i = 0; i < 100; ++i) {
    const std::size_t c_in = 1 + rng() % 4;
    const std::size_t k = 1 + rng() % 15;
    const std::size_t p = std::size_t{1} << (rng() % 3);
    const std::size_t t = k + p - 1 + rng() % 50;
    auto layer = random_int8_conv(rng, c_in, std::size_t{1} << (rng() % 5), k);
    const Int8Tensor x{t, c_in, random::int8_row(rng, t * c_in)};
    const auto unfused = maxpool_binary(conv1d_int8(x, layer), p, p);
    layer.fused_pool = PoolWindow{p, p};
    ASSERT_EQ(conv1d_int8(x, layer), unfused);
  }
}

TEST(ConvInt8, Errors) {
  random::Rng rng(23);
  auto layer = random_int8_conv(rng, 3, 2, 5);
  EXPECT_THROW(conv1d_int8(Int8Tensor{10, 2, std::vector<std::int8_t>(20)}, layer), Error);
  EXPECT_THROW(conv1d_int8(Int8Tensor{4, 3, std::vector<std::int8_t>(12)}, layer), Error);
  EXPECT_THROW(conv1d_int8(Int8Tensor{10, 3, std::vector<std::int8_t>(29)}, layer), Error);
}

TEST(Fold, ZeroMeanIdentityIsHalfWindow) {
  const auto th = fold_batchnorm_binary(0, 1, 1, 0, 3, 16);
  EXPECT_EQ(th.threshold, 24);
  EXPECT_EQ(th.direction, Direction::kGeq);
}

TEST(Fold, SaturatedBetaPassesEverything) {
  const auto th = fold_batchnorm_binary(0, 1, 1, 1e6, 48, 1);
  EXPECT_LE(th.threshold, 0);
  for (std::int64_t p = 0; p <= 48; ++p) EXPECT_TRUE(th.passes(p));
  const auto none = fold_batchnorm_binary(0, 1, 1, -1e6, 48, 1);
  for (std::int64_t p = 0; p <= 48; ++p) EXPECT_FALSE(none.passes(p));
}

TEST(Fold, NegativeGammaUsesFloorAndLeq) {
  // boundary = ((2 - 0) + 5) / 2 = 3.5 -> floor 3, LEQ
  const auto th = fold_batchnorm_binary(2, 1, -1, 0, 5, 1);
  EXPECT_EQ(th.direction, Direction::kLeq);
  EXPECT_EQ(th.threshold, 3);
}

TEST(Fold, ExactTieCountsAsPositive) {
  // y = 2P - 8; mu = 0, beta = 0: P = 4 gives exactly zero -> +1.
  const auto th = fold_batchnorm_binary(0, 1, 1, 0, 8, 1);
  EXPECT_TRUE(th.passes(4));
  EXPECT_FALSE(th.passes(3));
  const auto neg = fold_batchnorm_binary(0, 1, -1, 0, 8, 1);
  EXPECT_TRUE(neg.passes(4));
  EXPECT_FALSE(neg.passes(5));
}

TEST(Fold, ExhaustiveSweepAgainstFloat) {
  random::Rng rng(24);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t n = 1 + rng() % 512;
    const auto bn = random::batchnorm(rng, n, false);
    const auto th = fold_batchnorm_binary(bn.mu, bn.sigma, bn.gamma, bn.beta, n, 1);
    EXPECT_EQ(th.direction, bn.gamma > 0 ? Direction::kGeq : Direction::kLeq);
    for (std::int64_t p = 0; p <= static_cast<std::int64_t>(n); ++p) {
      const double y = static_cast<double>(2 * p - static_cast<std::int64_t>(n));
      ASSERT_EQ(th.passes(p), oracle::sign(bn.gamma * (y - bn.mu) / bn.sigma + bn.beta) > 0);
    }
  }
}

TEST(Fold, Int8ThresholdOnAccumulator) {
  const auto th = fold_batchnorm_int8(10.5, 2, 1, 0, 7, 3);
  EXPECT_EQ(th.threshold, 11);
  EXPECT_EQ(th.direction, Direction::kGeq);
  random::Rng rng(25);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = 1 + rng() % 64;
    const auto bn = random::batchnorm(rng, n, true);
    const auto t8 = fold_batchnorm_int8(bn.mu, bn.sigma, bn.gamma, bn.beta, n, 1);
    for (std::int64_t acc = -128 * static_cast<std::int64_t>(n); acc <= 128 * static_cast<std::int64_t>(n); ++acc) {
      ASSERT_EQ(t8.passes(acc), oracle::sign(bn.gamma * (static_cast<double>(acc) - bn.mu) / bn.sigma + bn.beta) > 0);
    }
  }
}

TEST(Fold, RejectsBadParameters) {
  EXPECT_THROW(fold_batchnorm_binary(0, 0, 1, 0, 3, 1), Error);
  EXPECT_THROW(fold_batchnorm_binary(0, -1, 1, 0, 3, 1), Error);
  EXPECT_THROW(fold_batchnorm_binary(0, 1, 0, 0, 3, 1), Error);
  EXPECT_THROW(fold_batchnorm_int8(0, 1, 0, 0, 3, 1), Error);
}

TEST(MaxPool, IdentityAndOr) {
  random::Rng rng(26);
  const auto x = random_bits(rng, 13, 5);
  EXPECT_EQ(maxpool_binary(x, 1, 1), x);
  const auto y = pack(std::vector<std::int8_t>{-1, -1, -1, 1}, 4, 1);
  const auto pooled = maxpool_binary(y, 4, 4);
  ASSERT_EQ(pooled.timesteps(), 1u);
  EXPECT_TRUE(pooled.at(0, 0));
}

TEST(MaxPool, MatchesMaxOracle) {
  random::Rng rng(27);
  for (int i = 0; i < 200; ++i) {
    const std::size_t c = 1 + rng() % 40;
    const std::size_t p = 1 + rng() % 5;
    const std::size_t t = p + rng() % 40;
    const auto x = random_bits(rng, t, c);
    OpCounters counters;
    const auto out = maxpool_binary(x, p, p, &counters);
    ASSERT_EQ(dense_of(out), oracle::maxpool_reference(dense_of(x), p, p));
    EXPECT_EQ(counters.or_ops, (t / p) * p * c);
  }
}

TEST(MaxPool, Errors) {
  random::Rng rng(28);
  const auto x = random_bits(rng, 3, 2);
  EXPECT_THROW(maxpool_binary(x, 4, 4), Error);
  EXPECT_THROW(maxpool_binary(x, 2, 1), Error);
  EXPECT_THROW(maxpool_binary(x, 0, 0), Error);
}

BinaryFcLayer random_fc(random::Rng& rng, std::size_t in_bits, std::size_t classes) {
  BinaryFcLayer fc{in_bits, classes, testing::random_filters(rng, classes, in_bits), {}, {}};
  for (std::size_t m = 0; m < classes; ++m) {
    fc.score_scale.push_back(static_cast<std::int32_t>(rng() % 400000) - 200000);
    fc.score_bias.push_back(static_cast<std::int32_t>(rng() % 4000000) - 2000000);
  }
  return fc;
}

TEST(Fc, UnitScaleOnMatchingInput) {
  random::Rng rng(29);
  auto fc = random_fc(rng, 70, 3);
  fc.score_scale = {65536, 65536, 65536};
  fc.score_bias = {0, 0, 0};
  const PackedBitTensor x(BitStream(std::vector<Word>(fc.class_weights(1).begin(), fc.class_weights(1).end()), 70), 70, 1);
  EXPECT_EQ(fc_scores(x, fc)[1], 70 * 65536);
}

TEST(Fc, ZeroScaleGivesBias) {
  random::Rng rng(30);
  auto fc = random_fc(rng, 40, 4);
  fc.score_scale.assign(4, 0);
  const auto s = fc_scores(random_bits(rng, 10, 4), fc);
  for (std::size_t m = 0; m < 4; ++m) EXPECT_EQ(s[m], fc.score_bias[m]);
}

TEST(Fc, FixedPointWithinBoundOfFloat) {
  random::Rng rng(31);
  for (int i = 0; i < 300; ++i) {
    const std::size_t in = 1 + rng() % 500;
    auto fc = random_fc(rng, in, 4);
    std::vector<double> scale, bias;
    for (std::size_t m = 0; m < 4; ++m) {
      scale.push_back(random::uniform_real(rng, -3, 3));
      bias.push_back(random::uniform_real(rng, -100, 100));
      fc.score_scale[m] = to_q16(scale[m]);
      fc.score_bias[m] = to_q16(bias[m]);
    }
    const auto x = random_bits(rng, in, 1);
    const auto s = fc_scores(x, fc);
    for (std::size_t m = 0; m < 4; ++m) {
      const auto dot = binary_dot(x.stream().words(), fc.class_weights(m), in);
      const double exact = scale[m] * static_cast<double>(dot) + bias[m];
      EXPECT_LE(std::abs(from_q16(s[m]) - exact), std::ldexp(1.0, -16) * (1.0 + std::abs(static_cast<double>(dot))));
    }
  }
}

TEST(Fc, ArgmaxScaleInvariance) {
  random::Rng rng(32);
  for (int i = 0; i < 300; ++i) {
    auto fc = random_fc(rng, 1 + rng() % 200, 2 + rng() % 6);
    const auto x = random_bits(rng, fc.in_bits, 1);
    const auto base = predict(fc_scores(x, fc));
    for (std::int32_t factor : {2, 3, 7, 100}) {
      auto scaled = fc;
      for (auto& v : scaled.score_scale) v *= factor;
      for (auto& v : scaled.score_bias) v *= factor;
      ASSERT_EQ(predict(fc_scores(x, scaled)), base);
    }
  }
}

TEST(Fc, SizeMismatch) {
  random::Rng rng(33);
  const auto fc = random_fc(rng, 40, 2);
  EXPECT_THROW(fc_scores(random_bits(rng, 41, 1), fc), Error);
}

TEST(Predict, Values) {
  EXPECT_EQ(predict(std::vector<std::int64_t>{1, 3, 2}), 1u);
  EXPECT_EQ(predict(std::vector<std::int64_t>{5, 5}), 0u);
  EXPECT_THROW(predict(std::vector<std::int64_t>{}), Error);
  random::Rng rng(34);
  for (int i = 0; i < 200; ++i) {
    std::vector<std::int64_t> v(1 + rng() % 10);
    for (auto& x : v) x = static_cast<std::int64_t>(rng() % 5);
    std::size_t best = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] > v[best]) best = j;
    }
    EXPECT_EQ(predict(v), best);
  }
}

TEST(Q16, RoundTripAndOverflow) {
  EXPECT_EQ(to_q16(1.0), 65536);
  EXPECT_EQ(to_q16(-0.5), -32768);
  EXPECT_DOUBLE_EQ(from_q16(to_q16(3.25)), 3.25);
  EXPECT_THROW(to_q16(40000.0), Error);
}

}  // namespace
}  // namespace ubnn
