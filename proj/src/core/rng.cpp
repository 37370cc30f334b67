#include "core/rng.hpp"

namespace flowlab {

std::uint64_t derive_seed(std::uint64_t master, const char* label) {
  // FNV-1a over the label, then mixed with the master seed.
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const char* p = label; *p; ++p) {
    h ^= std::uint64_t(static_cast<unsigned char>(*p));
    h *= 0x100000001B3ull;
  }
  return splitmix64(master ^ splitmix64(h));
}

}  // namespace flowlab
