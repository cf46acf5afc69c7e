#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace toolwatch {

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64_mix(std::uint64_t x);

// SplitMix64 stream. Platform independent: every derived quantity is computed
// from integer state with explicit arithmetic, never from <random> distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t state_;
};

// Named substream of a top-level seed ("split", "init", "shuffle", "dropout",
// "augment", ...). Distinct names or indices give independent streams.
Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

}  // namespace toolwatch
