#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace ssvi {

namespace detail {

// splitmix64; used to decorrelate user seeds and stream indices.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Deterministic random stream. Identical (seed, stream) pairs give
/// bit-identical draws on the same build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(detail::splitmix64(seed)) {}

  /// Sub-stream derived from (seed, index); independent of draw order in
  /// other streams.
  static Rng stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(detail::splitmix64(seed) ^ detail::splitmix64(index * 0x9e3779b97f4a7c15ULL + 1));
  }

  Rng substream(std::uint64_t index) { return Rng::stream(gen_(), index); }

  /// Uniform on (0,1); never returns exactly 0 or 1.
  double uniform() { return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (cached pair for determinism).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  /// Unit Rayleigh draw (scale-squared 1) by inverse CDF.
  double rayleigh1() { return std::sqrt(-2.0 * std::log(uniform())); }

  /// Uniform integer in [0, bound).
  std::uint64_t integer(std::uint64_t bound) {
    // rejection-free modulo is fine here; bounds are tiny vs 2^64
    return gen_() % bound;
  }

  /// Deterministic Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[integer(i)]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ssvi
