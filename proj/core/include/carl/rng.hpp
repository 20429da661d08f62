#pragma once

#include "carl/common.hpp"

#include <cmath>
#include <iosfwd>
#include <random>

namespace carl {

// Seeded random stream. Wraps mt19937_64 with explicit uniform/normal draws.
// The normal draw is a cache-free Box-Muller so the full sampler state is the
// engine state; that keeps checkpoint/resume bit-exact.
class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng substream(std::uint64_t seed, const std::string& name) {
    return Rng(substream_seed(seed, hash_name(name)));
  }

  double uniform() {  // [0, 1)
    return (engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // integer in [0, n)
  std::uint64_t index(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * double(n)) % n; }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <class S>
  VecX<S> normal_vec(int n) {
    VecX<S> v(n);
    for (int i = 0; i < n; ++i) v[i] = static_cast<S>(normal());
    return v;
  }
  template <class S>
  MatX<S> normal_mat(int rows, int cols) {
    MatX<S> m(rows, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r) m(r, c) = static_cast<S>(normal());
    return m;
  }
  template <class S>
  VecX<S> uniform_vec(int n, double lo, double hi) {
    VecX<S> v(n);
    for (int i = 0; i < n; ++i) v[i] = static_cast<S>(uniform(lo, hi));
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

  std::string serialize() const;
  void deserialize(const std::string& text);

 private:
  std::mt19937_64 engine_;
};

}  // namespace carl
