#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "piwa/core.hpp"

namespace piwa {

/// Symbols shared by the bound evaluators. Leave a field unset to mark it
/// unknown; each evaluator refuses when a symbol it needs is missing.
struct BoundInputs {
  std::optional<double> alpha;    // averaging exponent
  std::optional<double> g;        // gradient-norm bound G
  std::optional<double> l;        // smoothness L
  std::optional<double> d;        // domain diameter D
  std::optional<double> eta1;     // initial step size
  std::optional<double> lambda;   // strong-convexity modulus
  std::optional<double> mu;       // PL modulus
  std::optional<double> c;        // stagewise step constant
  std::optional<double> delta;    // failure probability
  std::optional<double> s_prev;   // total iterations of stages 1..K-1
  std::optional<std::int64_t> n;  // dataset size
  std::optional<std::int64_t> t;  // iteration horizon T
  bool loss_in_unit_range = false;
};

namespace detail {

inline double need(const std::optional<double>& v, const char* sym, const char* where) {
  if (!v) throw ConfigError(std::string(where) + ": required input '" + sym + "' is unknown");
  return *v;
}

inline double need_count(const std::optional<std::int64_t>& v, const char* sym,
                         const char* where) {
  if (!v) throw ConfigError(std::string(where) + ": required input '" + sym + "' is unknown");
  return static_cast<double>(*v);
}

// x^p via exp(p ln x), guarded against overflow past 1e300.
inline double guarded_pow(double x, double p, const char* where) {
  const double v = std::pow(x, p);
  if (!(std::abs(v) <= 1e300)) {
    throw NumericError(std::string(where) + ": power overflows the 1e300 guard");
  }
  return v;
}

}  // namespace detail

/// Expected weighted optimization gap for the convex case with
/// eta_t = eta1 / sqrt(t); two branches in alpha.
inline double bound_opt_convex(const BoundInputs& in) {
  const char* where = "bound_opt_convex";
  const double alpha = detail::need(in.alpha, "alpha", where);
  const double g = detail::need(in.g, "G", where);
  const double d = detail::need(in.d, "D", where);
  const double eta1 = detail::need(in.eta1, "eta1", where);
  const double t = detail::need_count(in.t, "T", where);
  const double rt = std::sqrt(t);
  const double first = (alpha + 1.0) * d * d / (2.0 * eta1 * rt);
  if (alpha < 0.5) {
    return first + (alpha + 1.0) * eta1 * g * g / ((2.0 * alpha + 1.0) * rt);
  }
  return first + (alpha + 1.0) * eta1 * g * g / rt;
}

/// Uniform-stability bound for the convex smooth case,
/// 4 eta1 G^2 (alpha+1) (T+1)^{alpha+1.5} / (n (alpha+1.5) T^{alpha+1}).
/// Refuses unless the declared step size obeys eta1 <= 2/L.
inline double bound_stab_convex(const BoundInputs& in) {
  const char* where = "bound_stab_convex";
  const double alpha = detail::need(in.alpha, "alpha", where);
  const double g = detail::need(in.g, "G", where);
  const double l = detail::need(in.l, "L", where);
  const double eta1 = detail::need(in.eta1, "eta1", where);
  const double n = detail::need_count(in.n, "n", where);
  const double t = detail::need_count(in.t, "T", where);
  if (eta1 > 2.0 / l) {
    throw ConfigError(std::string(where) + ": eta1 > 2/L violates the smoothness step cap");
  }
  const double num = 4.0 * eta1 * g * g * (alpha + 1.0) *
                     detail::guarded_pow(t + 1.0, alpha + 1.5, where);
  const double den = n * (alpha + 1.5) * detail::guarded_pow(t, alpha + 1.0, where);
  return num / den;
}

/// Expected weighted optimization gap for the strongly convex case with
/// eta_t = 2(alpha+1) / (lambda t); three branches in alpha.
inline double bound_opt_strongly(const BoundInputs& in) {
  const char* where = "bound_opt_strongly";
  const double alpha = detail::need(in.alpha, "alpha", where);
  const double g = detail::need(in.g, "G", where);
  const double lambda = detail::need(in.lambda, "lambda", where);
  const double t = detail::need_count(in.t, "T", where);
  if (alpha == 0.0) {
    return g * g * (1.0 + std::log(t)) / (lambda * t);
  }
  const double a1 = alpha + 1.0;
  if (alpha < 1.0) {
    return a1 * a1 * g * g / (alpha * lambda * t);
  }
  return a1 * a1 * g * g * detail::guarded_pow(t + 1.0, alpha, where) /
         (alpha * lambda * detail::guarded_pow(t, alpha + 1.0, where));
}

struct StronglyConvexStability {
  double t0 = 0.0;
  double value = 0.0;
};

/// Uniform-stability bound for the strongly convex smooth case:
/// t0/n + 4 G^2 (alpha+1) / (lambda n) with t0 = max{2(alpha+1)G/lambda, 1}.
/// Requires the per-sample loss declared to take values in [0, 1].
inline StronglyConvexStability bound_stab_strongly(const BoundInputs& in) {
  const char* where = "bound_stab_strongly";
  const double alpha = detail::need(in.alpha, "alpha", where);
  const double g = detail::need(in.g, "G", where);
  const double lambda = detail::need(in.lambda, "lambda", where);
  const double n = detail::need_count(in.n, "n", where);
  if (!in.loss_in_unit_range) {
    throw ConfigError(std::string(where) + ": loss is not declared to lie in [0, 1]");
  }
  StronglyConvexStability out;
  out.t0 = std::max(2.0 * (alpha + 1.0) * g / lambda, 1.0);
  out.value = out.t0 / n + 4.0 * g * g * (alpha + 1.0) / (lambda * n);
  return out;
}

/// Uniform-stability bound for the stagewise algorithm (conditioned on the
/// first K-1 stages agreeing):
/// S_{K-1}/n + (1 + 1/(Lc))/(n-1) * (2(alpha+1) c L^2)^{1/(1+Lc)} * T^{Lc/(1+Lc)}.
inline double bound_stab_stagewise(const BoundInputs& in) {
  const char* where = "bound_stab_stagewise";
  const double alpha = detail::need(in.alpha, "alpha", where);
  const double l = detail::need(in.l, "L", where);
  const double c = detail::need(in.c, "c", where);
  const double s_prev = detail::need(in.s_prev, "S_{K-1}", where);
  const double n = detail::need_count(in.n, "n", where);
  const double t = detail::need_count(in.t, "T", where);
  if (n < 2.0) throw ConfigError(std::string(where) + ": needs n >= 2");
  const double lc = l * c;
  const double base = std::pow(2.0 * (alpha + 1.0) * c * l * l, 1.0 / (1.0 + lc));
  const double tail = detail::guarded_pow(t, lc / (1.0 + lc), where);
  return s_prev / n + (1.0 + 1.0 / lc) / (n - 1.0) * base * tail;
}

/// Expected last-iterate deviation of two coupled trajectories on
/// neighboring datasets: (2G/n) * sum_{t=1}^{T-1} eta_t. The step sum is
/// taken over whatever schedule the run used, so this accepts the summed
/// value rather than a closed form.
inline double bound_coupled_deviation(double g, std::int64_t n, double step_sum) {
  if (n < 1) throw ConfigError("bound_coupled_deviation: needs n >= 1");
  return 2.0 * g / static_cast<double>(n) * step_sum;
}

/// Per-stage high-probability gap bound for the stagewise algorithm:
/// 2(alpha+1) eps_{k-1} / (eta mu T) + eta Ghat^2 / 2
///   + coef (alpha+1) Ghat D sqrt(2 ln(1/delta)) / sqrt(T).
/// The statement carries coefficient 2 on the deviation term while the
/// derivation yields 4; `deviation_coef` picks one, defaulting to the
/// conservative 4.
inline double bound_stage(double alpha, double eps_prev, double eta, double mu,
                          std::int64_t t, double ghat_sq, double d_k, double delta,
                          double deviation_coef = 4.0) {
  if (t < 1) throw ConfigError("bound_stage: needs T >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("bound_stage: delta in (0,1)");
  const double td = static_cast<double>(t);
  const double ghat = std::sqrt(ghat_sq);
  return 2.0 * (alpha + 1.0) * eps_prev / (eta * mu * td) + eta * ghat_sq / 2.0 +
         deviation_coef * (alpha + 1.0) * ghat * d_k *
             std::sqrt(2.0 * std::log(1.0 / delta)) / std::sqrt(td);
}

/// sum_{s=1}^{S} s^alpha by direct compensated summation.
inline double power_sum(std::int64_t s_max, double alpha) {
  if (s_max < 1) throw ConfigError("power_sum: needs S >= 1");
  double acc = 0.0, comp = 0.0;
  for (std::int64_t s = 1; s <= s_max; ++s) {
    const double w = detail::guarded_pow(static_cast<double>(s), alpha, "power_sum");
    const double y = w - comp;
    const double t = acc + y;
    comp = (t - acc) - y;
    acc = t;
  }
  if (!std::isfinite(acc)) throw NumericError("power_sum overflow");
  return acc;
}

}  // namespace piwa
