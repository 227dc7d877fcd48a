#pragma once

// Bit-level primitives shared by every layer kernel.
//
// Bits are packed MSB-first into 32-bit words: logical bit i lives in word
// i / 32 at position 31 - i % 32. A numerical +1 is stored as bit 1 and -1 as
// bit 0. Bits past the logical length of a stream are always zero.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ubnn/error.hpp"

namespace ubnn {

using Word = std::uint32_t;

inline constexpr std::size_t kWordBits = 32;
inline constexpr Word kAllOnes = 0xFFFFFFFFu;

constexpr std::size_t words_for(std::size_t bits) noexcept {
  return (bits + kWordBits - 1) / kWordBits;
}

/// Word with the `n_bits` most significant bits set.
constexpr Word leftover_mask(std::size_t n_bits) {
  if (n_bits > kWordBits) {
    throw Error(ErrorCode::kInvalidArgument,
                "leftover mask width " + std::to_string(n_bits) + " exceeds 32");
  }
  if (n_bits == 0) return 0;
  return kAllOnes << (kWordBits - n_bits);
}

/// Mask to apply to the final word of an `n_bits`-long stream.
constexpr Word tail_mask(std::size_t n_bits) noexcept {
  const std::size_t rem = n_bits % kWordBits;
  return rem == 0 ? kAllOnes : (kAllOnes << (kWordBits - rem));
}

constexpr bool get_bit(std::span<const Word> words, std::size_t i) noexcept {
  return (words[i / kWordBits] >> (kWordBits - 1 - i % kWordBits)) & 1u;
}

constexpr void set_bit(std::span<Word> words, std::size_t i, bool value) noexcept {
  const Word m = Word{1} << (kWordBits - 1 - i % kWordBits);
  if (value) {
    words[i / kWordBits] |= m;
  } else {
    words[i / kWordBits] &= ~m;
  }
}

class BitStream {
 public:
  BitStream() = default;

  /// Zero-filled stream of `bit_len` bits.
  explicit BitStream(std::size_t bit_len) : words_(words_for(bit_len), 0), bit_len_(bit_len) {}

  /// Adopts `words`; any bits past `bit_len` are cleared.
  BitStream(std::vector<Word> words, std::size_t bit_len)
      : words_(std::move(words)), bit_len_(bit_len) {
    if (bit_len_ > words_.size() * kWordBits) {
      throw Error(ErrorCode::kInvalidArgument,
                  "bit length " + std::to_string(bit_len_) + " exceeds " +
                      std::to_string(words_.size()) + " words");
    }
    words_.resize(words_for(bit_len_));
    if (!words_.empty()) words_.back() &= tail_mask(bit_len_);
  }

  std::size_t bit_len() const noexcept { return bit_len_; }
  std::size_t word_count() const noexcept { return words_.size(); }
  std::span<const Word> words() const noexcept { return words_; }
  std::span<Word> mutable_words() noexcept { return words_; }

  bool bit(std::size_t i) const noexcept { return get_bit(words_, i); }
  void set(std::size_t i, bool value) noexcept { set_bit(words_, i, value); }

  friend bool operator==(const BitStream&, const BitStream&) = default;

 private:
  std::vector<Word> words_;
  std::size_t bit_len_ = 0;
};

/// Time-major binary activations: element (t, c) is logical bit t * C + c.
class PackedBitTensor {
 public:
  PackedBitTensor() = default;

  PackedBitTensor(std::size_t timesteps, std::size_t channels)
      : stream_(timesteps * channels), timesteps_(timesteps), channels_(channels) {}

  PackedBitTensor(BitStream stream, std::size_t timesteps, std::size_t channels)
      : stream_(std::move(stream)), timesteps_(timesteps), channels_(channels) {
    if (stream_.bit_len() != timesteps * channels) {
      throw Error(ErrorCode::kShapeMismatch,
                  "stream holds " + std::to_string(stream_.bit_len()) + " bits, shape needs " +
                      std::to_string(timesteps * channels));
    }
  }

  std::size_t timesteps() const noexcept { return timesteps_; }
  std::size_t channels() const noexcept { return channels_; }
  const BitStream& stream() const noexcept { return stream_; }
  BitStream& stream() noexcept { return stream_; }

  bool at(std::size_t t, std::size_t c) const noexcept { return stream_.bit(t * channels_ + c); }
  void set(std::size_t t, std::size_t c, bool v) noexcept { stream_.set(t * channels_ + c, v); }

  friend bool operator==(const PackedBitTensor&, const PackedBitTensor&) = default;

 private:
  BitStream stream_;
  std::size_t timesteps_ = 0;
  std::size_t channels_ = 0;
};

inline PackedBitTensor pack(std::span<const std::int8_t> values, std::size_t timesteps,
                            std::size_t channels) {
  if (values.size() != timesteps * channels) {
    throw Error(ErrorCode::kShapeMismatch,
                "pack: " + std::to_string(values.size()) + " values for shape (" +
                    std::to_string(timesteps) + ", " + std::to_string(channels) + ")");
  }
  PackedBitTensor out(timesteps, channels);
  auto words = out.stream().mutable_words();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::int8_t v = values[i];
    if (v != 1 && v != -1) {
      throw Error(ErrorCode::kInvalidArgument,
                  "pack: value " + std::to_string(int{v}) + " at index " + std::to_string(i) +
                      " is not +1 or -1");
    }
    if (v == 1) words[i / kWordBits] |= Word{1} << (kWordBits - 1 - i % kWordBits);
  }
  return out;
}

inline std::vector<std::int8_t> unpack(const PackedBitTensor& t) {
  std::vector<std::int8_t> out(t.stream().bit_len());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.stream().bit(i) ? 1 : -1;
  return out;
}

/// Copies bits [offset, offset + length) of `src` into `dst` starting at bit 0.
/// Each destination word is the source word shifted left by offset % 32 with
/// the top bits of the following word shifted in; the final word is masked.
/// `dst` must hold words_for(length) words. `src` is never modified.
inline void extract_window_into(std::span<const Word> src, std::size_t offset, std::size_t length,
                                std::span<Word> dst) noexcept {
  const std::size_t n_words = words_for(length);
  const std::size_t base = offset / kWordBits;
  const unsigned shift = static_cast<unsigned>(offset % kWordBits);
  if (shift == 0) {
    for (std::size_t j = 0; j < n_words; ++j) dst[j] = src[base + j];
  } else {
    for (std::size_t j = 0; j < n_words; ++j) {
      const std::size_t w = base + j;
      const Word hi = src[w] << shift;
      const Word lo = (w + 1 < src.size()) ? (src[w + 1] >> (kWordBits - shift)) : 0;
      dst[j] = hi | lo;
    }
  }
  if (n_words != 0) dst[n_words - 1] &= tail_mask(length);
}

inline BitStream extract_window(const BitStream& src, std::size_t bit_offset, std::size_t length) {
  if (bit_offset > src.bit_len() || length > src.bit_len() - bit_offset) {
    throw Error(ErrorCode::kInvalidArgument,
                "window [" + std::to_string(bit_offset) + ", +" + std::to_string(length) +
                    ") exceeds stream of " + std::to_string(src.bit_len()) + " bits");
  }
  BitStream out(length);
  extract_window_into(src.words(), bit_offset, length, out.mutable_words());
  return out;
}

/// XNOR-popcount over the first `n_bits` bits of two word sequences. Bits past
/// `n_bits` in either operand are ignored, whatever their content.
inline std::size_t popcount_sum(std::span<const Word> a, std::span<const Word> b,
                                std::size_t n_bits) noexcept {
  const std::size_t n_words = words_for(n_bits);
  if (n_words == 0) return 0;
  std::size_t total = 0;
  for (std::size_t j = 0; j + 1 < n_words; ++j) {
    total += static_cast<std::size_t>(std::popcount(static_cast<Word>(~(a[j] ^ b[j]))));
  }
  const std::size_t last = n_words - 1;
  total += static_cast<std::size_t>(
      std::popcount(static_cast<Word>(~(a[last] ^ b[last]) & tail_mask(n_bits))));
  return total;
}

inline std::size_t popcount_sum(const BitStream& a, const BitStream& b) {
  if (a.bit_len() != b.bit_len()) {
    throw Error(ErrorCode::kShapeMismatch, "popcount_sum: lengths " + std::to_string(a.bit_len()) +
                                               " and " + std::to_string(b.bit_len()));
  }
  return popcount_sum(a.words(), b.words(), a.bit_len());
}

/// Arithmetic dot product of the two +-1 vectors: 2 * popcount_sum - N.
inline std::int64_t binary_dot(std::span<const Word> a, std::span<const Word> b,
                               std::size_t n_bits) noexcept {
  return 2 * static_cast<std::int64_t>(popcount_sum(a, b, n_bits)) -
         static_cast<std::int64_t>(n_bits);
}

inline std::int64_t binary_dot(const BitStream& a, const BitStream& b) {
  return 2 * static_cast<std::int64_t>(popcount_sum(a, b)) -
         static_cast<std::int64_t>(a.bit_len());
}

/// ORs `length` bits of `src` (starting at bit 0) into `dst` at `dst_offset`.
inline void or_bits_into(std::span<Word> dst, std::size_t dst_offset, std::span<const Word> src,
                         std::size_t length) noexcept {
  const std::size_t n_words = words_for(length);
  const std::size_t base = dst_offset / kWordBits;
  const unsigned shift = static_cast<unsigned>(dst_offset % kWordBits);
  for (std::size_t j = 0; j < n_words; ++j) {
    Word w = src[j];
    if (j + 1 == n_words) w &= tail_mask(length);
    if (w == 0) continue;
    dst[base + j] |= w >> shift;
    if (shift != 0) {
      const Word spill = w << (kWordBits - shift);
      if (spill != 0) dst[base + j + 1] |= spill;
    }
  }
}

}  // namespace ubnn
