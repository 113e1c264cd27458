#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace dmsgcn {

/// Philox4x32-10 counter-based generator. Output depends only on
/// (seed, stream, counter), so streams are reproducible across platforms
/// and independent of call order.
class Philox {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit Philox(std::uint64_t seed, std::uint64_t stream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  static Block generate(Block ctr, std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

  Block block(std::uint64_t counter) const {
    return generate({static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
                     static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
                    key_);
  }

  /// Writes words [4 * first_block, 4 * first_block + count) to out; equal to
  /// calling u32 on each index, laid out for vectorization.
  void fill_words(std::uint64_t first_block, std::size_t count, std::uint32_t* out) const {
    constexpr std::size_t kLanes = 16;
    std::uint32_t c0[kLanes], c1[kLanes], c2[kLanes], c3[kLanes];
    for (std::size_t base = 0; base < count; base += 4 * kLanes) {
      for (std::size_t l = 0; l < kLanes; ++l) {
        const std::uint64_t counter = first_block + base / 4 + l;
        c0[l] = static_cast<std::uint32_t>(counter);
        c1[l] = static_cast<std::uint32_t>(counter >> 32);
        c2[l] = static_cast<std::uint32_t>(stream_);
        c3[l] = static_cast<std::uint32_t>(stream_ >> 32);
      }
      std::uint32_t k0 = key_[0], k1 = key_[1];
      for (int round = 0; round < 10; ++round) {
        if (round > 0) {
          k0 += kWeyl0;
          k1 += kWeyl1;
        }
        for (std::size_t l = 0; l < kLanes; ++l) {
          const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c0[l];
          const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c2[l];
          const std::uint32_t n0 = static_cast<std::uint32_t>(p1 >> 32) ^ c1[l] ^ k0;
          const std::uint32_t n2 = static_cast<std::uint32_t>(p0 >> 32) ^ c3[l] ^ k1;
          c1[l] = static_cast<std::uint32_t>(p1);
          c3[l] = static_cast<std::uint32_t>(p0);
          c0[l] = n0;
          c2[l] = n2;
        }
      }
      for (std::size_t l = 0; l < kLanes; ++l) {
        const std::uint32_t words[4] = {c0[l], c1[l], c2[l], c3[l]};
        for (std::size_t j = 0; j < 4; ++j) {
          const std::size_t idx = base + 4 * l + j;
          if (idx < count) out[idx] = words[j];
        }
      }
    }
  }

  /// The index-th 32-bit word of the stream.
  std::uint32_t u32(std::uint64_t index) const { return block(index >> 2)[index & 3u]; }

  /// Uniform in [0, 1) with 24 bits of resolution.
  float uniform_float(std::uint64_t index) const {
    return static_cast<float>(u32(index) >> 8) * 0x1p-24f;
  }

  /// Uniform in [0, 1) with 53 bits of resolution; consumes words 2*index and 2*index+1.
  double uniform_double(std::uint64_t index) const {
    const Block b = block(index >> 1);
    const std::size_t off = (index & 1u) * 2;
    const std::uint64_t bits = (static_cast<std::uint64_t>(b[off]) << 32) | b[off + 1];
    return static_cast<double>(bits >> 11) * 0x1p-53;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
};

/// Sequential draws on top of Philox.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) : philox_(seed, stream) {}

  std::uint32_t next_u32() { return philox_.u32(counter_++); }

  /// 53-bit uniform in [0, 1) built from the next two words.
  double next_double() {
    const std::uint64_t hi = next_u32();
    const std::uint64_t lo = next_u32();
    return static_cast<double>(((hi << 32) | lo) >> 11) * 0x1p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0 || n > (std::uint64_t{1} << 32)) throw std::out_of_range("CounterRng::below: n outside [1, 2^32]");
    const std::uint64_t limit = (std::uint64_t{1} << 32) - ((std::uint64_t{1} << 32) % n);
    for (;;) {
      const std::uint64_t r = next_u32();
      if (r < limit) return r % n;
    }
  }

  /// Words consumed so far.
  std::uint64_t counter() const { return counter_; }

 private:
  Philox philox_;
  std::uint64_t counter_ = 0;
};

/// SplitMix64 finalizer; combines seeds and tags into fresh keys.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// FNV-1a over a string, for turning names into stream tags.
constexpr std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace dmsgcn
