#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mvrec {

// Seeded generator with pinned sampling algorithms, so streams are
// reproducible independent of the standard library's distribution
// implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return (eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  uint64_t below(uint64_t n) { return eng_() % n; }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + (int)below((uint64_t)(hi - lo + 1));
  }

  double normal() {
    // Box-Muller, one value per pair for a simple deterministic stream
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Normal clipped by re-sampling to |x| <= 2 sigma
  double trunc_normal(double sigma) {
    for (int i = 0; i < 64; ++i) {
      double x = normal() * sigma;
      if (std::abs(x) <= 2.0 * sigma) return x;
    }
    return 0.0;
  }

  // Fisher-Yates sample of k distinct indices from [0, n)
  template <class Out>
  void sample_indices(int n, int k, Out out) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + (int)below((uint64_t)(n - i));
      std::swap(idx[i], idx[j]);
      *out++ = idx[i];
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace mvrec
