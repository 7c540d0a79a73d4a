#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "piwa/averaging.hpp"
#include "piwa/bounds.hpp"
#include "piwa/core.hpp"
#include "piwa/data.hpp"
#include "piwa/losses.hpp"
#include "piwa/optimizer.hpp"

namespace piwa {

/// Two datasets of equal size differing in exactly one position.
struct NeighborPair {
  Dataset s;
  Dataset s_prime;
  std::int64_t differing_index = 0;
};

inline NeighborPair make_neighbor(const Dataset& data, std::int64_t j, Sample z_new) {
  if (j < 0 || j >= data.size()) {
    throw ConfigError("neighbor index out of range: " + std::to_string(j));
  }
  if (!z_new.features.empty() && z_new.features.back().first > data.dim) {
    throw DataError("replacement sample exceeds the dataset dimension");
  }
  NeighborPair pair;
  pair.s = data;
  pair.s_prime = data;
  pair.s_prime.samples[static_cast<std::size_t>(j)] = std::move(z_new);
  pair.differing_index = j;
  return pair;
}

/// Configuration shared by both trajectories of a coupled run. A single
/// object configures both sides, so the two runs cannot disagree.
struct CoupledConfig {
  StepSchedule schedule;
  std::int64_t t_final = 0;
  BallDomain domain = BallDomain::everywhere();
  Scheme scheme = Scheme::Piwa;
  double alpha = 0.0;
  double fraction = 0.5;
  double eta_pd = 0.0;
  double beta = 0.9;

  AveragingState make_averager() const {
    switch (scheme) {
      case Scheme::Last: return AveragingState::last();
      case Scheme::Uniform: return AveragingState::uniform();
      case Scheme::Piwa: return AveragingState::piwa(alpha);
      case Scheme::Suffix: return AveragingState::suffix(fraction, t_final);
      case Scheme::PolyDecay: return AveragingState::poly_decay(eta_pd);
      case Scheme::Ema: return AveragingState::ema(beta);
    }
    throw ConfigError("unknown scheme");
  }
};

struct CoupledResult {
  double param_dev_avg = 0.0;   // ||avg - avg'||
  double param_dev_last = 0.0;  // ||x_T - x_T'||
  double loss_dev_max = 0.0;    // max over the probe set of |f(avg;z) - f(avg';z)|
  std::int64_t first_hit = 0;   // first t whose draw was the differing index (0 = never)
};

/// Runs SGD-PIWA on both sides of a neighbor pair with the identical index
/// sequence (same stream seed) and identical x1/config, then reports the
/// output deviations. The probe set stands in for the sup over z.
inline CoupledResult coupled_run(const LossModel& loss, const NeighborPair& pair,
                                 const CoupledConfig& config, const Dataset& probe,
                                 std::uint64_t seed) {
  if (pair.s.size() != pair.s_prime.size() || pair.s.dim != pair.s_prime.dim) {
    throw ConfigError("neighboring datasets disagree on size or dimension");
  }
  const Vec x1 = Vec::Zero(pair.s.dim);
  RunOptions opts;
  opts.checkpoints = {config.t_final};

  SampleStream stream_a(seed, pair.s.size());
  RunTrace a = sgd_piwa(loss, pair.s, x1, config.schedule, config.t_final,
                        config.domain, config.make_averager(), stream_a, opts);
  SampleStream stream_b(seed, pair.s.size());
  RunTrace b = sgd_piwa(loss, pair.s_prime, x1, config.schedule, config.t_final,
                        config.domain, config.make_averager(), stream_b, opts);

  CoupledResult r;
  r.param_dev_avg = (a.final_average - b.final_average).norm();
  r.param_dev_last = (a.final_last - b.final_last).norm();
  for (const Sample& z : probe.samples) {
    r.loss_dev_max = std::max(
        r.loss_dev_max,
        std::abs(loss.value(a.final_average, z) - loss.value(b.final_average, z)));
  }
  SampleStream replay(seed, pair.s.size());
  for (std::int64_t t = 1; t < config.t_final; ++t) {
    if (replay.next() == pair.differing_index) {
      r.first_hit = t;
      break;
    }
  }
  return r;
}

enum class StabilityBound { None, Convex, StronglyConvex };

struct StabilityTrial {
  int trial = 0;
  std::uint64_t seed = 0;
  std::int64_t replaced_index = 0;
  double param_dev_avg = 0.0;
  double param_dev_last = 0.0;
  double loss_dev_max = 0.0;
};

struct StabilityAlphaReport {
  double alpha = 0.0;
  std::vector<StabilityTrial> trials;
  double mean_param_dev_avg = 0.0;
  double mean_param_dev_last = 0.0;
  double mean_loss_dev_max = 0.0;
  double max_param_dev_avg = 0.0;
  double max_loss_dev_max = 0.0;
  double thm_bound = std::numeric_limits<double>::quiet_NaN();
};

struct StabilityReport {
  std::vector<StabilityAlphaReport> per_alpha;
};

struct StabilitySweepOptions {
  int trials = 50;
  StabilityBound bound = StabilityBound::None;
  std::optional<double> g;  // constants for the bound annotation
  std::optional<double> l;
  std::optional<double> lambda;
};

/// Monte Carlo uniform-stability estimate: per alpha, `trials` coupled runs
/// with the replaced position, the replacement sample, and the stream seed
/// all resampled per trial. Trials are paired across the alpha grid (common
/// random numbers), which sharpens trend comparisons in alpha. The schedule
/// follows the base config except that a strongly-convex schedule tracks
/// the grid alpha.
inline StabilityReport stability_sweep(const LossModel& loss, const Dataset& data,
                                       const CoupledConfig& base,
                                       const std::vector<double>& alpha_grid,
                                       const Dataset& probe, const Dataset& pool,
                                       std::uint64_t master_seed,
                                       const StabilitySweepOptions& opts) {
  if (opts.trials < 1) throw ConfigError("stability sweep needs trials >= 1");
  if (pool.samples.empty()) throw DataError("replacement pool is empty");
  StabilityReport report;
  for (std::size_t ai = 0; ai < alpha_grid.size(); ++ai) {
    const double alpha = alpha_grid[ai];
    CoupledConfig config = base;
    config.alpha = alpha;
    if (config.schedule.kind == ScheduleKind::StronglyConvex) {
      config.schedule.alpha = alpha;
    }
    StabilityAlphaReport ar;
    ar.alpha = alpha;
    for (int trial = 0; trial < opts.trials; ++trial) {
      const std::uint64_t tseed =
          split_seed(master_seed, static_cast<std::uint64_t>(trial));
      Rng rng(split_seed(tseed, 1));
      const auto j = static_cast<std::int64_t>(
          rng.bounded(static_cast<std::uint64_t>(data.size())));
      const auto pick = static_cast<std::size_t>(
          rng.bounded(static_cast<std::uint64_t>(pool.samples.size())));
      NeighborPair pair = make_neighbor(data, j, pool.samples[pick]);
      CoupledResult res = coupled_run(loss, pair, config, probe, split_seed(tseed, 2));

      StabilityTrial row;
      row.trial = trial;
      row.seed = tseed;
      row.replaced_index = j;
      row.param_dev_avg = res.param_dev_avg;
      row.param_dev_last = res.param_dev_last;
      row.loss_dev_max = res.loss_dev_max;
      ar.trials.push_back(row);

      ar.mean_param_dev_avg += res.param_dev_avg;
      ar.mean_param_dev_last += res.param_dev_last;
      ar.mean_loss_dev_max += res.loss_dev_max;
      ar.max_param_dev_avg = std::max(ar.max_param_dev_avg, res.param_dev_avg);
      ar.max_loss_dev_max = std::max(ar.max_loss_dev_max, res.loss_dev_max);
    }
    const double nt = static_cast<double>(opts.trials);
    ar.mean_param_dev_avg /= nt;
    ar.mean_param_dev_last /= nt;
    ar.mean_loss_dev_max /= nt;

    if (opts.bound != StabilityBound::None) {
      BoundInputs in;
      in.alpha = alpha;
      in.g = opts.g;
      in.l = opts.l;
      in.lambda = opts.lambda;
      in.n = data.size();
      in.t = config.t_final;
      in.eta1 = config.schedule.kind == ScheduleKind::ConvexSqrt
                    ? std::optional<double>(config.schedule.eta1)
                    : std::nullopt;
      in.loss_in_unit_range = loss.values_in_unit_range;
      if (opts.bound == StabilityBound::Convex) {
        ar.thm_bound = bound_stab_convex(in);
      } else {
        ar.thm_bound = bound_stab_strongly(in).value;
      }
    }
    report.per_alpha.push_back(std::move(ar));
  }
  return report;
}

}  // namespace piwa
