#pragma once

#include <cstdint>
#include <vector>

namespace meq {

// Deterministic 64-bit generator (splitmix64). All randomness in the library
// flows from one root seed; independent streams are derived by hashing
// (seed, stream index), so replications can run concurrently and still
// reproduce bit-identical results run to run.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Stream (seed, index) starts at a hashed state, not a linear offset: the
  // generator itself walks the state line in golden-ratio steps, so a linear
  // offset would make streams shifted copies of one master sequence.
  static Rng stream(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    return Rng(mix64(mix64(z)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  // uniform on [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // counts from n draws of a categorical distribution with the given weights
  std::vector<long> multinomial(long n, const std::vector<double>& weights) {
    std::vector<double> cdf(weights.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      cdf[i] = acc;
    }
    std::vector<long> counts(weights.size(), 0);
    for (long d = 0; d < n; ++d) {
      const double u = uniform() * acc;
      std::size_t lo = 0, hi = cdf.size() - 1;
      while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (cdf[mid] <= u)
          lo = mid + 1;
        else
          hi = mid;
      }
      ++counts[lo];
    }
    return counts;
  }

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace meq
