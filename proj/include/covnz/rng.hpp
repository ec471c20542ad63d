#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace covnz {

// Deterministic random source. All randomness in the toolkit flows through
// this wrapper so that a (seed, stream) pair fully determines every draw,
// independent of platform library quirks: the raw generator is mt19937_64
// (bit-exact everywhere) and the real-valued distributions are implemented
// here rather than delegated to <random>, whose distributions are
// implementation-defined.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = bound * (UINT64_MAX / bound);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % bound;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the second deviate is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // Identity permutation of size n, shuffled.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

  // Derives an independent substream seed; splitmix64 finalizer mixes the
  // (seed, tag...) tuple so substreams for adjacent tags are uncorrelated.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag_a,
                              std::uint64_t tag_b = 0, std::uint64_t tag_c = 0) {
    std::uint64_t z = seed;
    for (std::uint64_t t : {tag_a, tag_b, tag_c}) {
      z += 0x9e3779b97f4a7c15ull + t;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      z = z ^ (z >> 31);
    }
    return z;
  }

private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace covnz
