#pragma once

#include <cstdint>
#include <cmath>

namespace flowlab {

// Philox 4x32-10 counter-based generator. A (key, counter) pair maps to 128
// random bits through a fixed bijection, so a stream can be indexed by
// (path, step, coordinate) and evaluated in any order with identical results.
struct Philox4x32 {
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;

  static inline void round_once(std::uint32_t ctr[4], const std::uint32_t key[2]) {
    const std::uint64_t p0 = std::uint64_t(kMul0) * ctr[0];
    const std::uint64_t p1 = std::uint64_t(kMul1) * ctr[2];
    const std::uint32_t y0 = std::uint32_t(p1 >> 32) ^ ctr[1] ^ key[0];
    const std::uint32_t y1 = std::uint32_t(p1);
    const std::uint32_t y2 = std::uint32_t(p0 >> 32) ^ ctr[3] ^ key[1];
    const std::uint32_t y3 = std::uint32_t(p0);
    ctr[0] = y0;
    ctr[1] = y1;
    ctr[2] = y2;
    ctr[3] = y3;
  }

  // counter = (c01 lo, c01 hi, c23 lo, c23 hi), key = (key64 lo, key64 hi)
  static inline void generate(std::uint64_t key64, std::uint64_t c01, std::uint64_t c23,
                              std::uint32_t out[4]) {
    std::uint32_t key[2] = {std::uint32_t(key64), std::uint32_t(key64 >> 32)};
    out[0] = std::uint32_t(c01);
    out[1] = std::uint32_t(c01 >> 32);
    out[2] = std::uint32_t(c23);
    out[3] = std::uint32_t(c23 >> 32);
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      round_once(out, key);
    }
  }
};

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Stable seed derivation so every stage draws from its own stream.
std::uint64_t derive_seed(std::uint64_t master, const char* label);

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
  return splitmix64(master ^ splitmix64(salt));
}

// One standard normal per (step, coordinate) lattice point of a keyed stream.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t path_index)
      : key_(splitmix64(seed ^ splitmix64(path_index ^ 0xA5A5A5A55A5A5A5Aull))) {}

  double operator()(std::uint64_t step, std::uint32_t coord) const {
    std::uint32_t r[4];
    Philox4x32::generate(key_, step, (std::uint64_t(coord) << 32) | 0x5EEDull, r);
    const std::uint64_t a = (std::uint64_t(r[1]) << 32) | r[0];
    const std::uint64_t b = (std::uint64_t(r[3]) << 32) | r[2];
    // u1 in (0,1] keeps the log finite; u2 in [0,1).
    const double u1 = double((a >> 11) + 1) * 0x1.0p-53;
    const double u2 = double(b >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

}  // namespace flowlab
