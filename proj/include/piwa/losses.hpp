#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "piwa/core.hpp"
#include "piwa/data.hpp"

namespace piwa {

enum class LossKind { Hinge, Logistic, LeastSquares, PlSine };

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::Hinge: return "hinge";
    case LossKind::Logistic: return "logistic";
    case LossKind::LeastSquares: return "least-squares";
    case LossKind::PlSine: return "pl-sine";
  }
  return "?";
}

/// Per-sample loss with value/subgradient oracles and declared regularity
/// constants. An L2 term (lambda/2)||x||^2 may ride on any convex kind; the
/// half factor makes the objective exactly lambda-strongly convex.
/// `unit_scale` divides the whole per-sample loss (the normalized variant
/// whose values fit in [0,1] on a bounded domain); declared constants are
/// stated for the scaled loss.
class LossModel {
 public:
  LossKind kind = LossKind::Hinge;
  double lambda = 0.0;
  double unit_scale = 1.0;

  std::optional<double> lipschitz_g;      // pointwise bound on ||subgradient||
  std::optional<double> smoothness_l;     // gradient Lipschitz constant
  std::optional<double> strong_convexity; // per-sample modulus
  std::optional<double> weak_convexity;   // rho: f + (rho/2)||.||^2 convex
  std::optional<double> pl_modulus;       // mu in the PL inequality
  bool values_in_unit_range = false;      // declared f(x; z) in [0, 1]

  static LossModel hinge() { return make(LossKind::Hinge, 0.0); }

  static LossModel hinge_l2(double lambda) {
    if (!(lambda > 0.0)) throw ConfigError("hinge+l2 requires lambda > 0");
    LossModel m = make(LossKind::Hinge, lambda);
    m.strong_convexity = lambda;
    return m;
  }

  static LossModel logistic(double lambda = 0.0) {
    LossModel m = make(LossKind::Logistic, lambda);
    if (lambda > 0.0) m.strong_convexity = lambda;
    return m;
  }

  static LossModel least_squares() { return make(LossKind::LeastSquares, 0.0); }

  static LossModel least_squares_l2(double lambda) {
    if (!(lambda > 0.0)) throw ConfigError("least-squares+l2 requires lambda > 0");
    LossModel m = make(LossKind::LeastSquares, lambda);
    m.strong_convexity = lambda;
    return m;
  }

  /// f(x; z) = sum_j x_j^2 + 3 sin^2 x_j + z . x. Nonconvex, 4-weakly
  /// convex, 8-smooth, PL with modulus 1/32 (stress instance).
  static LossModel pl_sine() {
    LossModel m = make(LossKind::PlSine, 0.0);
    m.weak_convexity = 4.0;
    m.smoothness_l = 8.0;
    m.pl_modulus = 1.0 / 32.0;
    return m;
  }

  double value(const Vec& x, const Sample& z) const {
    double v = 0.0;
    switch (kind) {
      case LossKind::Hinge: {
        const double margin = z.label * sparse_dot(z, x);
        v = std::max(0.0, 1.0 - margin);
        break;
      }
      case LossKind::Logistic: {
        const double m = z.label * sparse_dot(z, x);
        // log(1 + exp(-m)) without overflow
        v = m >= 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
        break;
      }
      case LossKind::LeastSquares: {
        const double r = sparse_dot(z, x) - z.label;
        v = 0.5 * r * r;
        break;
      }
      case LossKind::PlSine: {
        for (int j = 0; j < x.size(); ++j) {
          const double s = std::sin(x[j]);
          v += x[j] * x[j] + 3.0 * s * s;
        }
        v += sparse_dot(z, x);
        break;
      }
    }
    if (lambda > 0.0) v += 0.5 * lambda * x.squaredNorm();
    return v / unit_scale;
  }

  /// Writes a valid subgradient into g (resized and overwritten). Hinge at
  /// margin exactly 1 returns the zero element of the subdifferential.
  void subgrad_into(const Vec& x, const Sample& z, Vec& g) const {
    g.setZero(x.size());
    switch (kind) {
      case LossKind::Hinge: {
        const double margin = z.label * sparse_dot(z, x);
        if (margin < 1.0) sparse_axpy(-z.label, z, g);
        break;
      }
      case LossKind::Logistic: {
        const double m = z.label * sparse_dot(z, x);
        const double sig = 1.0 / (1.0 + std::exp(m));  // sigma(-m)
        sparse_axpy(-z.label * sig, z, g);
        break;
      }
      case LossKind::LeastSquares: {
        const double r = sparse_dot(z, x) - z.label;
        sparse_axpy(r, z, g);
        break;
      }
      case LossKind::PlSine: {
        for (int j = 0; j < x.size(); ++j) {
          g[j] = 2.0 * x[j] + 3.0 * std::sin(2.0 * x[j]);
        }
        sparse_axpy(1.0, z, g);
        break;
      }
    }
    if (lambda > 0.0) g += lambda * x;
    if (unit_scale != 1.0) g /= unit_scale;
  }

  Vec subgrad(const Vec& x, const Sample& z) const {
    Vec g;
    subgrad_into(x, z, g);
    return g;
  }

  /// (1/n) sum_i f(x; z_i); the regularizer enters once since it is part of
  /// every per-sample value.
  double full_objective(const Vec& x, const Dataset& data) const {
    if (data.samples.empty()) throw DataError("full objective over empty dataset");
    double acc = 0.0;
    double comp = 0.0;  // Kahan carry
    for (const Sample& s : data.samples) {
      const double y = value(x, s) - comp;
      const double t = acc + y;
      comp = (t - acc) - y;
      acc = t;
    }
    return acc / static_cast<double>(data.size());
  }

  bool convex() const { return kind != LossKind::PlSine; }

  std::string name() const {
    std::string n = loss_kind_name(kind);
    if (lambda > 0.0 && kind != LossKind::Logistic) n += "+l2";
    return n;
  }

 private:
  static LossModel make(LossKind k, double lambda) {
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    LossModel m;
    m.kind = k;
    m.lambda = lambda;
    if (k == LossKind::PlSine && lambda != 0.0) {
      throw ConfigError("pl-sine does not take an L2 term");
    }
    if (k != LossKind::PlSine) m.weak_convexity = 0.0;  // convex kinds
    return m;
  }
};

/// Stage objective of the stagewise algorithm: base loss plus
/// ||x - anchor||^2 / (2 gamma). Value and gradient decompose additively;
/// the wrapper is convex whenever gamma <= 1/rho for a rho-weakly-convex
/// base.
class ProximalLoss {
 public:
  ProximalLoss(const LossModel& base, Vec anchor, double gamma)
      : base_(&base), anchor_(std::move(anchor)), gamma_(gamma) {
    if (!(gamma > 0.0)) throw ConfigError("proximal weight gamma must be > 0");
    if (base.weak_convexity && *base.weak_convexity > 0.0 &&
        gamma > 1.0 / *base.weak_convexity + 1e-12) {
      throw ConfigError("gamma exceeds 1/rho; proximal wrapper would stay nonconvex");
    }
    require_finite(anchor_, "proximal anchor");
    if (base.smoothness_l) smoothness_l = *base.smoothness_l + 1.0 / gamma;
    if (base.weak_convexity) strong_convexity = 1.0 / gamma - *base.weak_convexity;
  }

  double value(const Vec& x, const Sample& z) const {
    return base_->value(x, z) + (x - anchor_).squaredNorm() / (2.0 * gamma_);
  }

  void subgrad_into(const Vec& x, const Sample& z, Vec& g) const {
    base_->subgrad_into(x, z, g);
    g += (x - anchor_) / gamma_;
  }

  Vec subgrad(const Vec& x, const Sample& z) const {
    Vec g;
    subgrad_into(x, z, g);
    return g;
  }

  double full_objective(const Vec& x, const Dataset& data) const {
    return base_->full_objective(x, data) +
           (x - anchor_).squaredNorm() / (2.0 * gamma_);
  }

  const LossModel& base() const { return *base_; }
  const Vec& anchor() const { return anchor_; }
  double gamma() const { return gamma_; }

  std::optional<double> lipschitz_g;  // Ghat for the stage ball, set by the driver
  std::optional<double> smoothness_l;
  std::optional<double> strong_convexity;

 private:
  const LossModel* base_;
  Vec anchor_;
  double gamma_;
};

inline ProximalLoss prox_wrap(const LossModel& base, Vec anchor, double gamma) {
  return ProximalLoss(base, std::move(anchor), gamma);
}

// ---------------------------------------------------------------------------
// Constant derivation for concrete instances
// ---------------------------------------------------------------------------

inline double max_feature_norm(const Dataset& data) {
  double m = 0.0;
  for (const Sample& s : data.samples) m = std::max(m, sparse_norm(s));
  return m;
}

inline double max_abs_label(const Dataset& data) {
  double m = 0.0;
  for (const Sample& s : data.samples) m = std::max(m, std::abs(s.label));
  return m;
}

/// Pointwise gradient-norm bound over the run's domain, when one exists.
/// Unbounded domains admit a bound only for unregularized hinge/logistic;
/// anything whose gradient grows with ||x|| returns nullopt ("unknown").
inline std::optional<double> derive_lipschitz(const LossModel& loss,
                                              const Dataset& data,
                                              const BallDomain& domain) {
  const double fmax = max_feature_norm(data);
  const double reach = domain.unbounded
                           ? std::numeric_limits<double>::infinity()
                           : domain.center.norm() + domain.radius;
  double g = 0.0;
  switch (loss.kind) {
    case LossKind::Hinge:
    case LossKind::Logistic:
      g = fmax;
      if (loss.lambda > 0.0) {
        if (domain.unbounded) return std::nullopt;
        g += loss.lambda * reach;
      }
      break;
    case LossKind::LeastSquares: {
      if (domain.unbounded) return std::nullopt;
      g = fmax * (fmax * reach + max_abs_label(data)) + loss.lambda * reach;
      break;
    }
    case LossKind::PlSine: {
      if (domain.unbounded) return std::nullopt;
      const auto d = static_cast<double>(data.dim);
      double zmax = 0.0;
      for (const Sample& s : data.samples) zmax = std::max(zmax, sparse_norm(s));
      g = 2.0 * reach + 3.0 * std::sqrt(d) + zmax;
      break;
    }
  }
  return g / loss.unit_scale;
}

/// Smoothness constant when the kind is differentiable; hinge is nonsmooth.
inline std::optional<double> derive_smoothness(const LossModel& loss,
                                               const Dataset& data) {
  const double fmax = max_feature_norm(data);
  switch (loss.kind) {
    case LossKind::Hinge: return std::nullopt;
    case LossKind::Logistic: return (0.25 * fmax * fmax + loss.lambda) / loss.unit_scale;
    case LossKind::LeastSquares: return (fmax * fmax + loss.lambda) / loss.unit_scale;
    case LossKind::PlSine: return 8.0;
  }
  return std::nullopt;
}

/// Rescales a logistic loss so its values fit in [0, 1] on the given ball;
/// returns the normalization constant it divided by. Constants of the
/// scaled model are restated accordingly.
inline double normalize_to_unit_range(LossModel& loss, const Dataset& data,
                                      const BallDomain& domain) {
  if (loss.kind != LossKind::Logistic) {
    throw ConfigError("unit-range normalization is provided for the logistic kind");
  }
  if (domain.unbounded) {
    throw ConfigError("unit-range normalization needs a bounded domain");
  }
  const double reach = domain.center.norm() + domain.radius;
  const double mmax = max_feature_norm(data) * reach;
  // max over the ball of log(1+e^{-m}) is at m = -mmax
  const double top = mmax + std::log1p(std::exp(-mmax)) +
                     0.5 * loss.lambda * reach * reach;
  const double scale = std::max(top, 1.0);
  loss.unit_scale *= scale;
  loss.values_in_unit_range = true;
  if (loss.lipschitz_g) *loss.lipschitz_g /= scale;
  if (loss.smoothness_l) *loss.smoothness_l /= scale;
  if (loss.strong_convexity) *loss.strong_convexity /= scale;
  return scale;
}

}  // namespace piwa
