#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "piwa/core.hpp"

namespace piwa {

enum class Scheme { Last, Uniform, Piwa, Suffix, PolyDecay, Ema };

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::Last: return "last";
    case Scheme::Uniform: return "uniform";
    case Scheme::Piwa: return "piwa";
    case Scheme::Suffix: return "suffix";
    case Scheme::PolyDecay: return "poly-decay";
    case Scheme::Ema: return "ema";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& s) {
  if (s == "last") return Scheme::Last;
  if (s == "uniform") return Scheme::Uniform;
  if (s == "piwa") return Scheme::Piwa;
  if (s == "suffix") return Scheme::Suffix;
  if (s == "poly-decay") return Scheme::PolyDecay;
  if (s == "ema") return Scheme::Ema;
  throw ConfigError("unknown averaging scheme: " + s);
}

constexpr double kWeightOverflowLimit = 1e300;

/// w_t = t^alpha with the documented overflow guard (t^alpha <= 1e300).
inline double iterate_weight(std::int64_t t, double alpha) {
  const double w = std::pow(static_cast<double>(t), alpha);
  if (!(w <= kWeightOverflowLimit)) {
    throw NumericError("iterate weight t^alpha overflows the 1e300 guard (t=" +
                       std::to_string(t) + ", alpha=" + std::to_string(alpha) + ")");
  }
  return w;
}

/// Weighted mean sum(t^alpha F_t) / sum(t^alpha), t counted from 1.
/// Compensated summation keeps the 1e-12 monotonicity comparisons honest.
inline double h_value(double alpha, std::span<const double> f_values) {
  if (f_values.empty()) throw ConfigError("h_value needs a nonempty sequence");
  double num = 0.0, num_c = 0.0;
  double den = 0.0, den_c = 0.0;
  for (std::size_t i = 0; i < f_values.size(); ++i) {
    const double w = iterate_weight(static_cast<std::int64_t>(i) + 1, alpha);
    double y = w * f_values[i] - num_c;
    double t = num + y;
    num_c = (t - num) - y;
    num = t;
    y = w - den_c;
    t = den + y;
    den_c = (t - den) - y;
    den = t;
  }
  if (!std::isfinite(den) || !std::isfinite(num)) {
    throw NumericError("h_value weight sum overflow");
  }
  return num / den;
}

/// One averaging scheme as an incremental state machine. Updates must be
/// strictly sequential (t = 1, 2, ...). Weighted schemes use the ratio
/// update mean += (w_t / W_t)(x_t - mean), which keeps intermediates
/// bounded even when W_t reaches ~1e100.
class AveragingState {
 public:
  static AveragingState last() { return AveragingState(Scheme::Last); }

  static AveragingState uniform() { return AveragingState(Scheme::Uniform); }

  static AveragingState piwa(double alpha) {
    if (!(alpha >= 0.0)) throw ConfigError("piwa exponent alpha must be >= 0");
    AveragingState s(Scheme::Piwa);
    s.alpha_ = alpha;
    return s;
  }

  /// Uniform average over the last ceil(fraction * horizon) iterates.
  /// The horizon is required up front; that is what makes a one-pass
  /// implementation possible.
  static AveragingState suffix(double fraction, std::int64_t horizon) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
      throw ConfigError("suffix fraction must lie in (0, 1]");
    }
    if (horizon < 1) throw ConfigError("suffix averaging needs horizon >= 1");
    AveragingState s(Scheme::Suffix);
    s.fraction_ = fraction;
    s.horizon_ = horizon;
    const auto window = static_cast<std::int64_t>(
        std::ceil(fraction * static_cast<double>(horizon)));
    s.suffix_start_ = horizon - std::max<std::int64_t>(window, 1) + 1;
    return s;
  }

  static AveragingState poly_decay(double eta) {
    if (!(eta >= 0.0)) throw ConfigError("poly-decay parameter must be >= 0");
    AveragingState s(Scheme::PolyDecay);
    s.eta_pd_ = eta;
    return s;
  }

  static AveragingState ema(double beta) {
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("ema decay must lie in (0, 1)");
    AveragingState s(Scheme::Ema);
    s.beta_ = beta;
    return s;
  }

  void update(const Vec& x, std::int64_t t) {
    if (t != t_ + 1) {
      throw std::invalid_argument("averaging updates must be sequential (got t=" +
                                  std::to_string(t) + " after " + std::to_string(t_) + ")");
    }
    switch (scheme_) {
      case Scheme::Last:
        mean_ = x;
        break;
      case Scheme::Uniform:
        absorb_weighted(x, 1.0);
        break;
      case Scheme::Piwa:
        absorb_weighted(x, iterate_weight(t, alpha_));
        break;
      case Scheme::Suffix:
        if (t > horizon_) {
          throw std::invalid_argument("suffix averaging advanced past its horizon");
        }
        if (t >= suffix_start_) absorb_weighted(x, 1.0);
        else last_seen_ = x;
        break;
      case Scheme::PolyDecay: {
        const double c = (eta_pd_ + 1.0) / (static_cast<double>(t) + eta_pd_);
        if (t == 1) mean_ = x;
        else mean_ = (1.0 - c) * mean_ + c * x;
        break;
      }
      case Scheme::Ema:
        if (t == 1) mean_ = x;  // initialized at the first iterate, no bias correction
        else mean_ = beta_ * mean_ + (1.0 - beta_) * x;
        break;
    }
    t_ = t;
  }

  /// The scheme's output. Pure; errors if nothing was absorbed, and for
  /// suffix averaging if the declared horizon has not been reached.
  Vec finalize() const {
    if (t_ == 0) throw std::invalid_argument("finalize before any update");
    if (scheme_ == Scheme::Suffix && t_ != horizon_) {
      throw std::invalid_argument("suffix averaging finalized before its horizon");
    }
    return mean_;
  }

  /// Trace snapshot at an intermediate iteration. Identical to finalize()
  /// except that suffix averaging reports the latest iterate while its
  /// window has not opened yet.
  const Vec& current() const {
    if (t_ == 0) throw std::invalid_argument("no iterates absorbed yet");
    if (scheme_ == Scheme::Suffix && absorbed_ == 0) return last_seen_;
    return mean_;
  }

  Scheme scheme() const { return scheme_; }
  double alpha() const { return alpha_; }
  std::int64_t steps() const { return t_; }
  std::int64_t absorbed() const { return absorbed_; }
  double weight_sum() const { return weight_sum_; }

 private:
  explicit AveragingState(Scheme s) : scheme_(s) {}

  void absorb_weighted(const Vec& x, double w) {
    weight_sum_ += w;
    if (!std::isfinite(weight_sum_)) throw NumericError("averaging weight sum overflow");
    ++absorbed_;
    if (absorbed_ == 1) mean_ = x;  // w/W == 1 on the first absorbed point
    else mean_ += (w / weight_sum_) * (x - mean_);
  }

  Scheme scheme_;
  double alpha_ = 0.0;
  double fraction_ = 1.0;
  double eta_pd_ = 0.0;
  double beta_ = 0.9;
  std::int64_t horizon_ = 0;
  std::int64_t suffix_start_ = 1;

  Vec mean_;
  Vec last_seen_;
  double weight_sum_ = 0.0;
  std::int64_t t_ = 0;
  std::int64_t absorbed_ = 0;
};

}  // namespace piwa
