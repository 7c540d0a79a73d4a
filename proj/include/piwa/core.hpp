#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace piwa {

/// Dense model coefficients. Feature vectors stay sparse (see data.hpp);
/// parameters are always dense.
using Vec = Eigen::VectorXd;

/// Malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or malformed data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numeric failure at run time: divergence, overflow, violated bound
/// (CLI exit code 4).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline void require_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) {
    throw NumericError(std::string(what) + ": non-finite entries");
  }
}

/// Euclidean-ball feasible region. `unbounded` means the whole space; in
/// that case center/radius are ignored.
struct BallDomain {
  Vec center;
  double radius = 0.0;
  bool unbounded = true;

  static BallDomain everywhere() { return BallDomain{}; }

  static BallDomain ball(Vec center, double radius) {
    if (!(radius > 0.0) || !std::isfinite(radius)) {
      throw ConfigError("ball domain requires a positive finite radius");
    }
    require_finite(center, "ball center");
    BallDomain d;
    d.center = std::move(center);
    d.radius = radius;
    d.unbounded = false;
    return d;
  }

  bool contains(const Vec& x, double tol = 0.0) const {
    if (unbounded) return true;
    return (x - center).norm() <= radius + tol;
  }
};

/// Radial projection onto a ball. Interior points are returned unchanged
/// (bitwise); exterior points are scaled so the result satisfies
/// dist^2 <= radius^2 in computed arithmetic, which makes projecting twice
/// an exact no-op. The shrink factor grows geometrically to absorb the
/// rare boundary cases where one rounding pass lands a hair outside.
inline Vec project_ball(const Vec& x, const BallDomain& domain) {
  if (!x.allFinite()) {
    throw NumericError("project_ball: non-finite input");
  }
  if (domain.unbounded) return x;
  const double r2 = domain.radius * domain.radius;
  const Vec offset = x - domain.center;
  const double dist2 = offset.squaredNorm();
  if (dist2 <= r2) return x;
  const double dist = std::sqrt(dist2);
  double shrink = 0.0;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double scale = domain.radius / dist * (1.0 - shrink);
    if (scale < 1.0) {
      Vec y = domain.center + scale * offset;
      if ((y - domain.center).squaredNorm() <= r2) return y;
    }
    shrink = shrink == 0.0 ? std::numeric_limits<double>::epsilon() : 2.0 * shrink;
  }
  throw NumericError("project_ball: radial scaling did not converge");
}

namespace detail {

// SplitMix64 finalizer; mixes a seed with a stream id so that sweeps and
// trials can derive independent generators from one master seed.
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Unbiased bounded draw on top of a 64-bit generator (rejection of the
// biased tail of the modulo map).
template <class Gen>
std::uint64_t bounded(Gen& gen, std::uint64_t range) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  std::uint64_t x = gen();
  while (x >= limit) x = gen();
  return x % range;
}

}  // namespace detail

inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  return detail::splitmix64(seed ^ detail::splitmix64(stream));
}

/// Replayable uniform index source over {0, ..., n-1}. The sequence is a
/// pure function of (seed, n): mt19937_64 outputs mapped by unbiased
/// rejection, so two streams built from the same pair emit identical
/// indices regardless of how far either has advanced.
class SampleStream {
 public:
  SampleStream(std::uint64_t seed, std::int64_t n)
      : seed_(seed), n_(n), gen_(seed) {
    if (n <= 0) throw DataError("sample stream requires n >= 1");
  }

  std::int64_t next() {
    ++position_;
    return static_cast<std::int64_t>(
        detail::bounded(gen_, static_cast<std::uint64_t>(n_)));
  }

  std::uint64_t seed() const { return seed_; }
  std::int64_t size() const { return n_; }
  std::uint64_t position() const { return position_; }

 private:
  std::uint64_t seed_;
  std::int64_t n_;
  std::uint64_t position_ = 0;
  std::mt19937_64 gen_;
};

/// Scalar sampler for synthetic data generation. Box-Muller normals on top
/// of mt19937_64 keep generated datasets identical across standard-library
/// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t bounded(std::uint64_t range) {
    return detail::bounded(gen_, range);
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace piwa
