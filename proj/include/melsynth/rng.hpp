#pragma once

#include "melsynth/common.hpp"

#include <cmath>
#include <cstdint>

namespace melsynth {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic xoshiro256++ with a fixed Box-Muller normal sampler, so
// seeded runs reproduce bit-identical streams regardless of the standard
// library in use. Never touches any global entropy source.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  // Independent child stream: mixes the current state with a stream id.
  // Does not advance this generator, so child(k) is order-free.
  Rng child(uint64_t stream) const {
    uint64_t sm = s_[0] ^ (s_[2] + 0x632be59bd9b4e019ull) ^ (stream * 0x9e3779b97f4a7c15ull);
    return Rng(splitmix64(sm));
  }

  uint64_t next_u64() {
    uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) { return n ? next_u64() % n : 0; }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <class T>
  void fill_normal(Mat<T>& m, double stddev = 1.0, double mean = 0.0) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        m(r, c) = static_cast<T>(mean + stddev * normal());
  }

  template <class T>
  Mat<T> normal_mat(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    Mat<T> m(rows, cols);
    fill_normal(m, stddev);
    return m;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable mixing for derived seeds (per-step, per-segment, per-track streams).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t sm = seed ^ (stream * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull);
  return splitmix64(sm);
}

}  // namespace melsynth
