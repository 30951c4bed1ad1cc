#include "attrdial/rng.hpp"

#include <cmath>

#include "attrdial/error.hpp"
#include "attrdial/hash.hpp"

namespace attrdial {

namespace {

// splitmix64 finalizer: bijective mixer over 64-bit words.
uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

SeededRng::SeededRng(uint64_t seed, std::string_view stream)
    : key_(mix64(seed ^ fnv1a64(stream))) {}

SeededRng::SeededRng(uint64_t key, int) : key_(key) {}

SeededRng SeededRng::substream(std::string_view name) const {
  return SeededRng(mix64(key_ ^ fnv1a64(name) ^ 0xA5A5A5A55A5A5A5AULL), 0);
}

SeededRng SeededRng::substream(uint64_t index) const {
  return SeededRng(mix64(key_ ^ mix64(index ^ 0x6C62272E07BB0142ULL)), 0);
}

uint64_t SeededRng::next_u64() { return mix64(key_ ^ mix64(counter_++)); }

double SeededRng::next_unit() {
  // 53 high bits -> double in [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

uint64_t SeededRng::next_below(uint64_t n) {
  if (n == 0) {
    throw InputError("SeededRng::next_below: n must be positive");
  }
  // Lemire multiply-shift range reduction.
  return static_cast<uint64_t>(
      (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double SeededRng::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  double u1 = 1.0 - next_unit();
  double u2 = next_unit();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double SeededRng::next_uniform(double lo, double hi) {
  if (!(lo < hi)) {
    throw InputError("SeededRng::next_uniform: lo must be < hi");
  }
  return lo + (hi - lo) * next_unit();
}

}  // namespace attrdial
