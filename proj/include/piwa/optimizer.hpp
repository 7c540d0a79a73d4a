#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "piwa/averaging.hpp"
#include "piwa/core.hpp"
#include "piwa/data.hpp"
#include "piwa/losses.hpp"

namespace piwa {

enum class ScheduleKind { ConvexSqrt, StronglyConvex, Constant };

/// Step-size rule. All three emit strictly positive, non-increasing steps.
struct StepSchedule {
  ScheduleKind kind = ScheduleKind::Constant;
  double eta1 = 1.0;     // convex-sqrt scale
  double lambda = 1.0;   // strongly-convex modulus
  double alpha = 0.0;    // strongly-convex averaging exponent
  double eta_const = 1.0;

  static StepSchedule convex_sqrt(double eta1) {
    if (!(eta1 > 0.0)) throw ConfigError("convex-sqrt schedule needs eta1 > 0");
    StepSchedule s;
    s.kind = ScheduleKind::ConvexSqrt;
    s.eta1 = eta1;
    return s;
  }

  /// eta_t = 2(alpha+1) / (lambda t).
  static StepSchedule strongly_convex(double lambda, double alpha) {
    if (!(lambda > 0.0)) throw ConfigError("strongly-convex schedule needs lambda > 0");
    if (!(alpha >= 0.0)) throw ConfigError("strongly-convex schedule needs alpha >= 0");
    StepSchedule s;
    s.kind = ScheduleKind::StronglyConvex;
    s.lambda = lambda;
    s.alpha = alpha;
    return s;
  }

  static StepSchedule constant(double eta) {
    if (!(eta > 0.0)) throw ConfigError("constant schedule needs eta > 0");
    StepSchedule s;
    s.kind = ScheduleKind::Constant;
    s.eta_const = eta;
    return s;
  }

  double at(std::int64_t t) const {
    if (t < 1) throw std::invalid_argument("step size asked for t < 1");
    switch (kind) {
      case ScheduleKind::ConvexSqrt:
        return eta1 / std::sqrt(static_cast<double>(t));
      case ScheduleKind::StronglyConvex:
        return 2.0 * (alpha + 1.0) / (lambda * static_cast<double>(t));
      case ScheduleKind::Constant:
        return eta_const;
    }
    return 0.0;
  }

  /// sum_{t=1}^{T-1} eta_t, the quantity the coupled-deviation bound needs.
  double sum_before(std::int64_t t_final) const {
    double acc = 0.0;
    for (std::int64_t t = 1; t < t_final; ++t) acc += at(t);
    return acc;
  }
};

inline const char* schedule_kind_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::ConvexSqrt: return "convex-sqrt";
    case ScheduleKind::StronglyConvex: return "strongly-convex";
    case ScheduleKind::Constant: return "constant";
  }
  return "?";
}

struct Checkpoint {
  std::int64_t t = 0;
  double obj_avg = 0.0;     // training objective of the averaged iterate
  double obj_last = 0.0;    // training objective of the current iterate
  double test_metric = 0.0; // misclassification on the test split; NaN if none
  double wall_ms = 0.0;
};

struct RunTrace {
  std::vector<Checkpoint> checkpoints;
  Vec final_average;
  Vec final_last;
  std::uint64_t config_fingerprint = 0;
};

/// Logarithmically spaced checkpoint iterations: powers of two plus T.
inline std::vector<std::int64_t> default_checkpoints(std::int64_t t_final) {
  std::vector<std::int64_t> out;
  for (std::int64_t t = 1; t < t_final; t *= 2) out.push_back(t);
  out.push_back(t_final);
  return out;
}

struct RunOptions {
  std::vector<std::int64_t> checkpoints;     // empty = default set
  const Dataset* eval_test = nullptr;        // misclassification target, optional
  bool record_timing = false;                // off keeps traces byte-reproducible
  int batch = 1;                             // >1 only for the nonconvex stress path
  std::function<void(const Checkpoint&)> on_checkpoint;  // streaming sink, called
                                                         // as each row is recorded
};

namespace detail {

// Sanitized checkpoint set: clipped to [1, T], sorted, unique, T included.
inline std::vector<std::int64_t> normalize_checkpoints(
    std::vector<std::int64_t> cps, std::int64_t t_final) {
  std::erase_if(cps, [t_final](std::int64_t t) { return t < 1 || t > t_final; });
  cps.push_back(t_final);
  std::sort(cps.begin(), cps.end());
  cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
  return cps;
}

}  // namespace detail

/// Projected SGD with a pluggable averaging scheme: T-1 update steps, every
/// iterate x_1..x_T fed to the averager, full-dataset objectives evaluated
/// only at checkpoints. Deterministic given (stream seed, inputs).
template <class Loss>
RunTrace sgd_piwa(const Loss& loss, const Dataset& train, const Vec& x1,
                  const StepSchedule& schedule, std::int64_t t_final,
                  const BallDomain& domain, AveragingState averager,
                  SampleStream& stream, const RunOptions& opts = {}) {
  if (t_final < 1) throw ConfigError("run length T must be >= 1");
  if (train.samples.empty()) throw DataError("training dataset is empty");
  if (x1.size() != train.dim) {
    throw ConfigError("initial point dimension " + std::to_string(x1.size()) +
                      " does not match dataset dimension " + std::to_string(train.dim));
  }
  require_finite(x1, "initial point");
  if (!domain.contains(x1, 1e-12)) throw ConfigError("initial point lies outside the domain");
  if (averager.steps() != 0) throw ConfigError("averaging state must be fresh");
  if (opts.batch < 1) throw ConfigError("batch size must be >= 1");

  const std::vector<std::int64_t> cps =
      detail::normalize_checkpoints(opts.checkpoints.empty()
                                        ? default_checkpoints(t_final)
                                        : opts.checkpoints,
                                    t_final);

  std::optional<double> g_bound;
  if constexpr (requires { loss.lipschitz_g; }) g_bound = loss.lipschitz_g;

  const auto start = std::chrono::steady_clock::now();
  RunTrace trace;
  trace.checkpoints.reserve(cps.size());

  Vec x = x1;
  Vec grad(train.dim);
  Vec batch_grad(train.dim);
  std::size_t next_cp = 0;

  auto record = [&](std::int64_t t) {
    if (next_cp >= cps.size() || cps[next_cp] != t) return;
    ++next_cp;
    Checkpoint cp;
    cp.t = t;
    cp.obj_avg = loss.full_objective(averager.current(), train);
    cp.obj_last = loss.full_objective(x, train);
    cp.test_metric = opts.eval_test
                         ? misclassification(averager.current(), *opts.eval_test)
                         : std::numeric_limits<double>::quiet_NaN();
    cp.wall_ms = opts.record_timing
                     ? std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - start)
                           .count()
                     : 0.0;
    trace.checkpoints.push_back(cp);
    if (opts.on_checkpoint) opts.on_checkpoint(cp);
  };

  averager.update(x, 1);
  record(1);

  for (std::int64_t t = 1; t < t_final; ++t) {
    const double eta = schedule.at(t);
    if (opts.batch == 1) {
      const std::int64_t i = stream.next();
      loss.subgrad_into(x, train.samples[static_cast<std::size_t>(i)], grad);
    } else {
      batch_grad.setZero();
      for (int b = 0; b < opts.batch; ++b) {
        const std::int64_t i = stream.next();
        loss.subgrad_into(x, train.samples[static_cast<std::size_t>(i)], grad);
        batch_grad += grad;
      }
      grad = batch_grad / static_cast<double>(opts.batch);
    }
    if (g_bound) {
      const double gn = grad.norm();
      if (gn > *g_bound * (1.0 + 1e-9)) {
        throw NumericError("sampled gradient norm " + std::to_string(gn) +
                           " exceeds declared bound " + std::to_string(*g_bound) +
                           " at iteration " + std::to_string(t));
      }
    }
    x -= eta * grad;
    x = project_ball(x, domain);
    if (!x.allFinite()) {
      throw NumericError("run diverged: non-finite iterate at t=" +
                         std::to_string(t + 1) + " (last finite iterate t=" +
                         std::to_string(t) + ")");
    }
    averager.update(x, t + 1);
    record(t + 1);
  }

  trace.final_average = averager.finalize();
  trace.final_last = x;
  return trace;
}

// ---------------------------------------------------------------------------
// Stagewise driver
// ---------------------------------------------------------------------------

struct StageParams {
  int k = 0;
  double eps_k = 0.0;
  double eta_k = 0.0;
  std::int64_t t_k = 0;
  double d_k = 0.0;      // stage ball radius
  double gamma = 0.0;
  double ghat_sq = 0.0;  // gradient bound for the stage objective
  bool eta_capped = false;  // true when the 1/L cap bound the step size
};

struct StageInputs {
  double eps0 = 0.0;   // initial optimality gap bound
  double mu = 0.0;     // PL modulus
  double g = 0.0;      // gradient bound of the base loss over the reachable region
  std::optional<double> l;      // smoothness; enables the eta <= 1/L cap and c bound
  std::optional<double> c;      // unset = auto min(1, 2 Ghat^2 / (L eps0))
  std::optional<double> d;      // unset = auto max-formula
  double alpha = 1.0;
  double delta = 0.1;
  std::optional<double> gamma;  // unset = 4/mu
};

/// Stage-k constants: eps_k = eps0/2^k, D_1 = sqrt(eps0/mu) with the
/// halving rule D_{k+1} = D_k/2, gamma = 4/mu, eta_k = c eps_k / (2 Ghat^2)
/// (capped at 1/L when L is known), T_k = ceil(d / (mu eps_k)). `ghat_sq`
/// is the caller's gradient bound for the stage objective
/// (2G^2 + 2 D_k^2 / gamma^2).
inline double stage_radius(int k, double eps0, double mu) {
  return std::sqrt(eps0 / mu) / std::pow(2.0, k - 1);
}

inline StageParams stage_params(int k, double eps0, double mu, double ghat_sq,
                                std::optional<double> c, std::optional<double> d,
                                double alpha, double delta,
                                std::optional<double> l = std::nullopt,
                                std::optional<double> gamma = std::nullopt) {
  if (k < 1) throw ConfigError("stage index must be >= 1");
  if (!(eps0 > 0.0 && mu > 0.0 && ghat_sq > 0.0)) {
    throw ConfigError("stage parameters need positive eps0, mu, Ghat^2");
  }
  if (!(alpha >= 0.0)) throw ConfigError("stage parameters need alpha >= 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("stage parameters need delta in (0,1)");

  StageParams p;
  p.k = k;
  p.eps_k = eps0 / std::pow(2.0, k);
  p.d_k = stage_radius(k, eps0, mu);
  p.gamma = gamma.value_or(4.0 / mu);
  p.ghat_sq = ghat_sq;

  double c_val;
  if (c) {
    c_val = *c;
    if (!(c_val > 0.0)) throw ConfigError("stage constant c must be > 0");
    if (l && c_val > std::min(1.0, 2.0 * ghat_sq / (*l * eps0)) * (1.0 + 1e-12)) {
      throw ConfigError("stage constant c violates c <= min(1, 2 Ghat^2 / (L eps0))");
    }
  } else {
    c_val = l ? std::min(1.0, 2.0 * ghat_sq / (*l * eps0)) : 1.0;
  }

  const double d_val = d.value_or(
      std::max(32.0 * (alpha + 1.0) * ghat_sq / c_val,
               512.0 * (alpha + 1.0) * (alpha + 1.0) * ghat_sq * std::log(1.0 / delta)));

  p.eta_k = c_val * p.eps_k / (2.0 * ghat_sq);
  if (l && p.eta_k > 1.0 / *l) {
    p.eta_k = 1.0 / *l;
    p.eta_capped = true;
  }
  p.t_k = static_cast<std::int64_t>(std::ceil(d_val / (mu * p.eps_k)));
  if (p.t_k < 1) p.t_k = 1;
  return p;
}

struct StagewiseResult {
  Vec x_final;
  std::vector<StageParams> stages;
  std::vector<RunTrace> traces;               // one per stage
  std::vector<double> objective_after_stage;  // F_S(x_k) on the base loss
};

/// Stagewise proximal-point driver: stage k minimizes the base objective
/// plus ||x - x_{k-1}||^2 / (2 gamma) over the ball B(x_{k-1}, D_k) with a
/// constant step, then halves D. Requires gamma <= 1/rho so each stage
/// objective is convex.
inline StagewiseResult stagewise(const LossModel& loss, const Dataset& train,
                                 const Vec& x1, int stages, const StageInputs& in,
                                 SampleStream& stream, const RunOptions& opts = {}) {
  if (stages < 1) throw ConfigError("stagewise needs K >= 1");
  if (!loss.weak_convexity) {
    throw ConfigError("stagewise needs the loss to declare its weak-convexity modulus");
  }
  const double rho = *loss.weak_convexity;
  const double gamma = in.gamma.value_or(4.0 / in.mu);
  if (rho > 0.0 && gamma > 1.0 / rho + 1e-12) {
    throw ConfigError("stagewise needs gamma <= 1/rho (got gamma=" +
                      std::to_string(gamma) + ", rho=" + std::to_string(rho) + ")");
  }

  StagewiseResult out;
  out.stages.reserve(static_cast<std::size_t>(stages));
  Vec anchor = x1;
  for (int k = 1; k <= stages; ++k) {
    const double d_k = stage_radius(k, in.eps0, in.mu);
    const double ghat_sq = 2.0 * in.g * in.g + 2.0 * d_k * d_k / (gamma * gamma);
    StageParams p = stage_params(k, in.eps0, in.mu, ghat_sq, in.c, in.d, in.alpha,
                                 in.delta, in.l, gamma);

    ProximalLoss stage_loss = prox_wrap(loss, anchor, gamma);
    stage_loss.lipschitz_g = std::sqrt(ghat_sq);
    const BallDomain ball = BallDomain::ball(anchor, p.d_k);
    try {
      RunTrace trace = sgd_piwa(stage_loss, train, anchor,
                                StepSchedule::constant(p.eta_k), p.t_k, ball,
                                AveragingState::piwa(in.alpha), stream, opts);
      anchor = trace.final_average;
      out.traces.push_back(std::move(trace));
    } catch (const NumericError& e) {
      throw NumericError("stage " + std::to_string(k) + " aborted: " + e.what());
    }
    out.objective_after_stage.push_back(loss.full_objective(anchor, train));
    out.stages.push_back(p);
  }
  out.x_final = anchor;
  return out;
}

}  // namespace piwa
