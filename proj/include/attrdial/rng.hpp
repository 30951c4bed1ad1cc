// Counter-based deterministic RNG. A generator is (key, counter); the key is
// derived from a 64-bit seed plus an optional stream name, and substreams are
// derived from the key alone, so child streams do not depend on how much the
// parent has been consumed. Identical seed + call sequence => identical bits.
#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace attrdial {

class SeededRng {
 public:
  explicit SeededRng(uint64_t seed, std::string_view stream = "");

  // Independent child stream; derivation uses only the parent key.
  SeededRng substream(std::string_view name) const;
  SeededRng substream(uint64_t index) const;

  uint64_t next_u64();
  // Uniform in [0, 1).
  double next_unit();
  // Uniform integer in [0, n); n must be positive.
  uint64_t next_below(uint64_t n);
  // Standard normal via Box-Muller (pairs cached).
  double next_gaussian();
  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  uint64_t key() const { return key_; }

 private:
  SeededRng(uint64_t key, int);  // raw-key constructor

  uint64_t key_ = 0;
  uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace attrdial
