#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace st {

// Mixes a seed with a salt (splitmix64 finalizer). Used to derive
// independent named streams from one master seed so that drawing from
// one stream never shifts another.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG stream. Distributions are implemented on top of the
// raw mt19937_64 output (the standard distributions are implementation
// defined, which would break bit-reproducibility of generated datasets).
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) { return int(uniform() * n); }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, one value per call
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = int(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[i], v[size_t(j)]);
    }
  }

  // Independent stream keyed on this stream's seed (not its position).
  RngStream derive(uint64_t salt) const { return RngStream(mix_seed(seed_, salt)); }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

// Stream derived from a master seed and up to two purpose tags.
inline RngStream derived_stream(uint64_t master_seed, uint64_t a, uint64_t b = 0) {
  return RngStream(mix_seed(mix_seed(master_seed, a), b));
}

}  // namespace st
