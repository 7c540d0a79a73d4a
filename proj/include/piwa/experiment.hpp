#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "piwa/averaging.hpp"
#include "piwa/bounds.hpp"
#include "piwa/config.hpp"
#include "piwa/core.hpp"
#include "piwa/data.hpp"
#include "piwa/losses.hpp"
#include "piwa/optimizer.hpp"
#include "piwa/ratefit.hpp"
#include "piwa/stability.hpp"
#include "piwa/trace.hpp"

namespace piwa {

/// Everything a run needs, resolved from a config: data, loss, domain,
/// derived constants, and (when the generator knows them) the optimum and
/// PL modulus.
struct Problem {
  LossModel loss;
  Dataset train;
  Dataset test;  // empty when no split was requested
  BallDomain domain = BallDomain::everywhere();
  std::optional<double> g;
  std::optional<double> l;
  std::optional<double> f_star;
  std::optional<double> mu;
  std::optional<Vec> solution;
  double unit_scale = 1.0;
};

namespace detail {

inline LossModel make_loss(const Config& cfg) {
  const std::string kind = cfg.get_string("problem.loss");
  if (kind == "hinge") return LossModel::hinge();
  if (kind == "hinge+l2") return LossModel::hinge_l2(cfg.get_real("problem.lambda"));
  if (kind == "logistic") return LossModel::logistic(cfg.get_real("problem.lambda", 0.0));
  if (kind == "least-squares") return LossModel::least_squares();
  if (kind == "least-squares+l2") {
    return LossModel::least_squares_l2(cfg.get_real("problem.lambda"));
  }
  if (kind == "pl-sine") return LossModel::pl_sine();
  throw ConfigError("unknown loss kind: " + kind);
}

inline RankDeficientSpec rank_deficient_spec(const Config& cfg) {
  RankDeficientSpec spec;
  spec.n = cfg.get_int("problem.n");
  spec.d = static_cast<int>(cfg.get_int("problem.d"));
  spec.rank = static_cast<int>(cfg.get_int("problem.rank"));
  spec.solution_norm = cfg.get_real("problem.solution_norm", 1.0);
  spec.noise = cfg.get_real("problem.noise", 0.0);
  spec.row_norm = cfg.get_real("problem.row_norm", 0.0);
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("problem.data_seed", 0));
  return spec;
}

}  // namespace detail

/// Optional per-feature max-abs scaler (off by default; recorded in
/// provenance when applied).
inline void scale_features_maxabs(Dataset& data) {
  std::vector<double> maxabs(static_cast<std::size_t>(data.dim), 0.0);
  for (const Sample& s : data.samples) {
    for (const auto& [idx, val] : s.features) {
      auto& m = maxabs[static_cast<std::size_t>(idx - 1)];
      m = std::max(m, std::abs(val));
    }
  }
  for (Sample& s : data.samples) {
    for (auto& [idx, val] : s.features) {
      const double m = maxabs[static_cast<std::size_t>(idx - 1)];
      if (m > 0.0) val /= m;
    }
  }
  data.provenance += " [maxabs-scaled]";
}

inline Dataset build_dataset(const Config& cfg) {
  Dataset data;
  if (cfg.has("problem.data")) {
    LibsvmOptions opts;
    opts.zero_one_labels = cfg.get_bool("problem.labels01", false);
    opts.real_labels = cfg.get_bool("problem.real_labels", false);
    opts.dim_override = static_cast<int>(cfg.get_int("problem.dim_override", 0));
    data = load_libsvm(cfg.get_string("problem.data"), opts);
  } else if (cfg.has("problem.synthetic")) {
    const std::string kind = cfg.get_string("problem.synthetic");
    if (kind == "classification-margin") {
      ClassificationSpec spec;
      spec.n = cfg.get_int("problem.n");
      spec.d = static_cast<int>(cfg.get_int("problem.d"));
      spec.margin = cfg.get_real("problem.margin", 0.05);
      spec.flip_noise = cfg.get_real("problem.flip_noise", 0.0);
      spec.seed = static_cast<std::uint64_t>(cfg.get_int("problem.data_seed", 0));
      data = gen_classification(spec);
    } else if (kind == "rank-deficient-ls") {
      data = gen_rank_deficient_ls(detail::rank_deficient_spec(cfg)).data;
    } else if (kind == "pl-sine-noise") {
      data = gen_pl_sine_noise(cfg.get_int("problem.n"),
                               static_cast<int>(cfg.get_int("problem.d")),
                               cfg.get_real("problem.noise", 1.0),
                               static_cast<std::uint64_t>(cfg.get_int("problem.data_seed", 0)));
    } else {
      throw ConfigError("unknown synthetic kind: " + kind);
    }
  } else {
    throw ConfigError("config needs problem.data or problem.synthetic");
  }
  if (cfg.get_bool("problem.scale_features", false)) scale_features_maxabs(data);
  return data;
}

inline Problem build_problem(const Config& cfg) {
  Problem p;
  p.loss = detail::make_loss(cfg);
  Dataset all = build_dataset(cfg);

  const double test_fraction = cfg.get_real("problem.test_fraction", 0.0);
  if (test_fraction > 0.0) {
    auto [train, test] =
        split(all, test_fraction,
              static_cast<std::uint64_t>(cfg.get_int("problem.split_seed", 1)));
    p.train = std::move(train);
    p.test = std::move(test);
  } else {
    p.train = std::move(all);
  }

  const std::string domain_kind = cfg.get_string("algorithm.domain", "unbounded");
  if (domain_kind == "ball") {
    p.domain = BallDomain::ball(Vec::Zero(p.train.dim), cfg.get_real("algorithm.radius"));
  } else if (domain_kind != "unbounded") {
    throw ConfigError("algorithm.domain must be 'unbounded' or 'ball'");
  }

  if (cfg.get_bool("problem.unit_range", false)) {
    p.unit_scale = normalize_to_unit_range(p.loss, p.train, p.domain);
  }
  p.g = derive_lipschitz(p.loss, p.train, p.domain);
  p.l = derive_smoothness(p.loss, p.train);
  p.loss.lipschitz_g = p.g;
  p.loss.smoothness_l = p.l;

  // Closed-form optimum for the regularized least-squares family.
  if (p.loss.kind == LossKind::LeastSquares && p.loss.lambda > 0.0) {
    const Eigen::MatrixXd h =
        ls_hessian(p.train) +
        p.loss.lambda * Eigen::MatrixXd::Identity(p.train.dim, p.train.dim);
    Vec rhs = Vec::Zero(p.train.dim);
    for (const Sample& s : p.train.samples) sparse_axpy(s.label, s, rhs);
    rhs /= static_cast<double>(p.train.size());
    Vec x_star = h.ldlt().solve(rhs);
    p.f_star = p.loss.full_objective(x_star, p.train);
    p.solution = std::move(x_star);
  }
  if (cfg.get_string("problem.synthetic", "") == "rank-deficient-ls" &&
      p.loss.kind == LossKind::LeastSquares && p.loss.lambda == 0.0 &&
      test_fraction == 0.0) {
    RankDeficientInstance inst = gen_rank_deficient_ls(detail::rank_deficient_spec(cfg));
    p.f_star = inst.f_star;
    p.mu = inst.mu;
    p.solution = std::move(inst.least_norm_solution);
  }
  return p;
}

inline StepSchedule build_schedule(const Config& cfg, const Problem& p, double alpha) {
  const std::string kind = cfg.get_string("algorithm.schedule");
  if (kind == "convex-sqrt") return StepSchedule::convex_sqrt(cfg.get_real("algorithm.eta1"));
  if (kind == "strongly-convex") {
    double lambda;
    if (cfg.has("algorithm.lambda")) {
      lambda = cfg.get_real("algorithm.lambda");
    } else if (p.loss.strong_convexity) {
      lambda = *p.loss.strong_convexity;
    } else {
      throw ConfigError("strongly-convex schedule needs algorithm.lambda or a loss with a declared modulus");
    }
    return StepSchedule::strongly_convex(lambda, alpha);
  }
  if (kind == "constant") return StepSchedule::constant(cfg.get_real("algorithm.eta_const"));
  throw ConfigError("unknown schedule kind: " + kind);
}

inline AveragingState build_averager(Scheme scheme, const Config& cfg, double alpha,
                                     std::int64_t t_final) {
  switch (scheme) {
    case Scheme::Last: return AveragingState::last();
    case Scheme::Uniform: return AveragingState::uniform();
    case Scheme::Piwa: return AveragingState::piwa(alpha);
    case Scheme::Suffix:
      return AveragingState::suffix(cfg.get_real("algorithm.fraction", 0.5), t_final);
    case Scheme::PolyDecay:
      return AveragingState::poly_decay(cfg.get_real("algorithm.eta_pd", 3.0));
    case Scheme::Ema: return AveragingState::ema(cfg.get_real("algorithm.beta", 0.9));
  }
  throw ConfigError("unknown scheme");
}

inline std::vector<std::int64_t> build_checkpoints(const Config& cfg, std::int64_t t_final) {
  const std::string rule = cfg.get_string("evaluation.checkpoints", "pow2");
  if (rule == "pow2") return default_checkpoints(t_final);
  return cfg.get_int_list("evaluation.checkpoints");
}

struct RunSummary {
  std::uint64_t seed = 0;
  std::string scheme;
  double alpha = 0.0;
  std::int64_t t_final = 0;
  double final_obj_avg = 0.0;
  double final_obj_last = 0.0;
  double final_test_metric = 0.0;
  double best_obj_avg = 0.0;
  double best_test_metric = 0.0;
  std::string trace_path;
  RunTrace trace;
};

inline std::string trace_filename(std::uint64_t fp, const std::string& scheme,
                                  double alpha, std::uint64_t seed) {
  return "trace_" + detail::hex_fingerprint(fp) + "_" + scheme + "_a" +
         detail::csv_num(alpha) + "_s" + std::to_string(seed) + ".csv";
}

/// One deterministic run: builds the averager and schedule, runs SGD-PIWA,
/// and streams the trace CSV row by row (a killed run leaves a valid
/// prefix). Returns the summary row.
inline RunSummary run_single(const Problem& p, const Config& cfg,
                             const std::string& outdir, Scheme scheme, double alpha,
                             std::uint64_t seed) {
  const auto t_final = cfg.get_int("algorithm.T");
  RunSummary s;
  s.seed = seed;
  s.scheme = scheme_name(scheme);
  s.alpha = alpha;
  s.t_final = t_final;
  s.trace_path = (std::filesystem::path(outdir) /
                  trace_filename(cfg.fingerprint(), s.scheme, alpha, seed))
                     .string();
  TraceCsvWriter writer(s.trace_path, cfg.fingerprint());

  RunOptions opts;
  opts.checkpoints = build_checkpoints(cfg, t_final);
  opts.eval_test = p.test.samples.empty() ? nullptr : &p.test;
  opts.record_timing = cfg.get_bool("evaluation.timing", false);
  opts.batch = static_cast<int>(cfg.get_int("algorithm.batch", 1));
  opts.on_checkpoint = [&](const Checkpoint& cp) {
    writer.row(seed, s.scheme, alpha, cp);
  };

  const StepSchedule schedule = build_schedule(cfg, p, alpha);
  AveragingState averager = build_averager(scheme, cfg, alpha, t_final);
  SampleStream stream(seed, p.train.size());
  const Vec x1 = Vec::Zero(p.train.dim);
  RunTrace trace = sgd_piwa(p.loss, p.train, x1, schedule, t_final, p.domain,
                            std::move(averager), stream, opts);
  trace.config_fingerprint = cfg.fingerprint();
  const Checkpoint& last = trace.checkpoints.back();
  s.final_obj_avg = last.obj_avg;
  s.final_obj_last = last.obj_last;
  s.final_test_metric = last.test_metric;
  s.best_obj_avg = last.obj_avg;
  s.best_test_metric = last.test_metric;
  for (const Checkpoint& cp : trace.checkpoints) {
    s.best_obj_avg = std::min(s.best_obj_avg, cp.obj_avg);
    if (!std::isnan(cp.test_metric)) {
      s.best_test_metric = std::isnan(s.best_test_metric)
                               ? cp.test_metric
                               : std::min(s.best_test_metric, cp.test_metric);
    }
  }
  s.trace = std::move(trace);
  return s;
}

/// Metadata sidecar: canonical config plus derived constants. Everything in
/// it is deterministic.
inline void write_meta(const Problem& p, const Config& cfg, const std::string& outdir) {
  const std::string path =
      (std::filesystem::path(outdir) /
       ("meta_" + detail::hex_fingerprint(cfg.fingerprint()) + ".txt"))
          .string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open meta output: " + path);
  out << "# resolved run metadata\n";
  out << "fingerprint = " << detail::hex_fingerprint(cfg.fingerprint()) << "\n";
  out << "train_hash = " << detail::hex_fingerprint(dataset_hash(p.train)) << "\n";
  if (!p.test.samples.empty()) {
    out << "test_hash = " << detail::hex_fingerprint(dataset_hash(p.test)) << "\n";
  }
  out << "train_provenance = " << p.train.provenance << "\n";
  out << "regularizer = (lambda/2)*||x||^2\n";
  out << "domain = "
      << (p.domain.unbounded ? std::string("unbounded")
                             : "ball r=" + detail::csv_num(p.domain.radius))
      << "\n";
  out << "lipschitz_G = " << (p.g ? detail::csv_num(*p.g) : std::string("unknown")) << "\n";
  out << "smoothness_L = " << (p.l ? detail::csv_num(*p.l) : std::string("unknown")) << "\n";
  if (p.unit_scale != 1.0) out << "unit_scale = " << detail::csv_num(p.unit_scale) << "\n";
  if (p.f_star) out << "f_star = " << detail::csv_num(*p.f_star) << "\n";
  if (p.mu) out << "pl_mu = " << detail::csv_num(*p.mu) << "\n";
  out << "# config (canonical)\n";
  out << cfg.canonical();
}

inline void write_summary(const std::vector<RunSummary>& rows, const Config& cfg,
                          const std::string& outdir) {
  const std::string path =
      (std::filesystem::path(outdir) /
       ("summary_" + detail::hex_fingerprint(cfg.fingerprint()) + ".csv"))
          .string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open summary output: " + path);
  out << "fingerprint,seed,scheme,alpha,T,final_obj_avg,final_obj_last,"
         "final_test_metric,best_obj_avg,best_test_metric\n";
  for (const RunSummary& r : rows) {
    out << detail::hex_fingerprint(cfg.fingerprint()) << ',' << r.seed << ','
        << r.scheme << ',' << detail::csv_num(r.alpha) << ',' << r.t_final << ','
        << detail::csv_num(r.final_obj_avg) << ',' << detail::csv_num(r.final_obj_last)
        << ',' << detail::csv_num(r.final_test_metric) << ','
        << detail::csv_num(r.best_obj_avg) << ',' << detail::csv_num(r.best_test_metric)
        << '\n';
  }
}

struct SweepVariant {
  Scheme scheme;
  double alpha;
};

inline std::vector<SweepVariant> sweep_variants(const Config& cfg) {
  std::vector<SweepVariant> out;
  std::vector<std::string> schemes;
  if (cfg.has("sweep.schemes")) {
    std::istringstream ss(cfg.get_string("sweep.schemes"));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      while (!tok.empty() && tok.front() == ' ') tok.erase(tok.begin());
      while (!tok.empty() && tok.back() == ' ') tok.pop_back();
      if (!tok.empty()) schemes.push_back(tok);
    }
  } else {
    schemes = {"piwa"};
  }
  for (const std::string& name : schemes) {
    const Scheme scheme = parse_scheme(name);
    if (scheme == Scheme::Piwa) {
      for (double a : cfg.get_real_list("sweep.alpha_grid")) out.push_back({scheme, a});
    } else {
      out.push_back({scheme, cfg.get_real("algorithm.alpha", 0.0)});
    }
  }
  return out;
}

/// `run`: the configured scheme across the seed list; one trace CSV per
/// seed plus meta and summary files.
inline std::vector<RunSummary> cmd_run(const Config& cfg) {
  const std::string outdir = cfg.get_string("output.dir", "out");
  std::filesystem::create_directories(outdir);
  const Problem p = build_problem(cfg);
  write_meta(p, cfg, outdir);
  const Scheme scheme = parse_scheme(cfg.get_string("algorithm.scheme", "piwa"));
  const double alpha = cfg.get_real("algorithm.alpha", 0.0);
  std::vector<RunSummary> rows;
  for (std::int64_t seed : cfg.get_int_list("seeds")) {
    rows.push_back(run_single(p, cfg, outdir, scheme, alpha,
                              static_cast<std::uint64_t>(seed)));
  }
  write_summary(rows, cfg, outdir);
  return rows;
}

/// `sweep`: cartesian product of scheme/alpha variants and seeds, with a
/// bounded worker pool; one trace file per (variant, seed) and a single
/// summary written in deterministic order afterwards.
inline std::vector<RunSummary> cmd_sweep(const Config& cfg) {
  const std::string outdir = cfg.get_string("output.dir", "out");
  std::filesystem::create_directories(outdir);
  const Problem p = build_problem(cfg);
  write_meta(p, cfg, outdir);
  const std::vector<SweepVariant> variants = sweep_variants(cfg);
  const std::vector<std::int64_t> seeds = cfg.get_int_list("seeds");

  struct Job {
    SweepVariant variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const SweepVariant& v : variants) {
    for (std::int64_t s : seeds) jobs.push_back({v, static_cast<std::uint64_t>(s)});
  }
  std::vector<RunSummary> rows(jobs.size());

  const int parallel = std::max<int>(1, static_cast<int>(cfg.get_int("sweep.parallel", 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        rows[i] = run_single(p, cfg, outdir, jobs[i].variant.scheme,
                             jobs[i].variant.alpha, jobs[i].seed);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  if (parallel == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < parallel; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  write_summary(rows, cfg, outdir);
  return rows;
}

/// Probe and replacement-pool datasets for stability runs: held-out draws
/// from the same synthetic family, or (for file data) the test split.
inline std::pair<Dataset, Dataset> stability_side_data(const Config& cfg,
                                                       const Problem& p) {
  if (cfg.has("problem.synthetic")) {
    const auto data_seed = static_cast<std::uint64_t>(cfg.get_int("problem.data_seed", 0));
    const auto held_out = [&](std::uint64_t stream) {
      return std::to_string(split_seed(data_seed, stream) >> 1);  // keep it in int64 range
    };
    Config probe_cfg = cfg;
    probe_cfg.set("problem.n", std::to_string(cfg.get_int("stability.probe_size", 1000)));
    probe_cfg.set("problem.data_seed", held_out(101));
    Config pool_cfg = cfg;
    pool_cfg.set("problem.n", std::to_string(cfg.get_int("stability.pool_size", 200)));
    pool_cfg.set("problem.data_seed", held_out(202));
    return {build_dataset(probe_cfg), build_dataset(pool_cfg)};
  }
  if (p.test.samples.empty()) {
    throw ConfigError("stability on file data needs problem.test_fraction > 0 "
                      "(the test split doubles as probe and pool)");
  }
  return {p.test, p.test};
}

/// `stability`: coupled-trajectory sweep over stability.alpha_grid; one CSV
/// with per-trial rows followed by mean/max aggregate rows per alpha.
inline StabilityReport cmd_stability(const Config& cfg) {
  const std::string outdir = cfg.get_string("output.dir", "out");
  std::filesystem::create_directories(outdir);
  const Problem p = build_problem(cfg);
  write_meta(p, cfg, outdir);

  CoupledConfig base;
  base.t_final = cfg.get_int("algorithm.T");
  base.domain = p.domain;
  base.scheme = parse_scheme(cfg.get_string("algorithm.scheme", "piwa"));
  base.alpha = cfg.get_real("algorithm.alpha", 0.0);
  base.fraction = cfg.get_real("algorithm.fraction", 0.5);
  base.eta_pd = cfg.get_real("algorithm.eta_pd", 3.0);
  base.beta = cfg.get_real("algorithm.beta", 0.9);
  base.schedule = build_schedule(cfg, p, base.alpha);

  StabilitySweepOptions opts;
  opts.trials = static_cast<int>(cfg.get_int("stability.trials", 50));
  const std::string bound = cfg.get_string("stability.bound", "none");
  if (bound == "thm2") opts.bound = StabilityBound::Convex;
  else if (bound == "thm4") opts.bound = StabilityBound::StronglyConvex;
  else if (bound != "none") throw ConfigError("stability.bound must be none|thm2|thm4");
  opts.g = p.g;
  opts.l = p.l;
  opts.lambda = p.loss.strong_convexity;

  auto [probe, pool] = stability_side_data(cfg, p);
  const std::vector<double> grid = cfg.has("stability.alpha_grid")
                                       ? cfg.get_real_list("stability.alpha_grid")
                                       : std::vector<double>{base.alpha};
  const auto master_seed = static_cast<std::uint64_t>(cfg.get_int_list("seeds").front());
  StabilityReport report =
      stability_sweep(p.loss, p.train, base, grid, probe, pool, master_seed, opts);

  const std::string path =
      (std::filesystem::path(outdir) /
       ("stability_" + detail::hex_fingerprint(cfg.fingerprint()) + ".csv"))
          .string();
  StabilityCsvWriter writer(path, cfg.fingerprint());
  for (const StabilityAlphaReport& ar : report.per_alpha) {
    for (const StabilityTrial& t : ar.trials) {
      writer.trial_row(master_seed, ar.alpha, t, ar.thm_bound);
    }
    writer.aggregate_row(master_seed, ar.alpha, "mean", ar.mean_param_dev_avg,
                         ar.mean_param_dev_last, ar.mean_loss_dev_max, ar.thm_bound);
    writer.aggregate_row(master_seed, ar.alpha, "max", ar.max_param_dev_avg,
                         std::numeric_limits<double>::quiet_NaN(), ar.max_loss_dev_max,
                         ar.thm_bound);
  }
  return report;
}

struct StagewiseRunOutput {
  std::uint64_t seed = 0;
  StagewiseResult result;
};

/// `stagewise`: the proximal-point driver per seed; the stages CSV records
/// per-stage constants and the base objective after each stage.
inline std::vector<StagewiseRunOutput> cmd_stagewise(const Config& cfg) {
  const std::string outdir = cfg.get_string("output.dir", "out");
  std::filesystem::create_directories(outdir);
  const Problem p = build_problem(cfg);
  write_meta(p, cfg, outdir);

  const Vec x1 = Vec::Zero(p.train.dim);
  StageInputs in;
  const std::string eps0_raw = cfg.get_string("stagewise.eps0", "auto");
  if (eps0_raw == "auto") {
    if (!p.f_star) {
      throw ConfigError("stagewise.eps0 = auto needs an instance with a known optimum");
    }
    in.eps0 = p.loss.full_objective(x1, p.train) - *p.f_star;
  } else {
    in.eps0 = cfg.get_real("stagewise.eps0");
  }
  const std::string mu_raw = cfg.get_string("stagewise.mu", "auto");
  if (mu_raw == "auto") {
    if (!p.mu) throw ConfigError("stagewise.mu = auto needs an instance with a known PL modulus");
    in.mu = *p.mu;
  } else {
    in.mu = cfg.get_real("stagewise.mu");
  }
  if (cfg.get_string("stagewise.gamma", "auto") != "auto") {
    in.gamma = cfg.get_real("stagewise.gamma");
  }
  // G over the union of stage balls: reach <= ||x1|| + sum_k D_k < ||x1|| + 2 D_1.
  const double reach = x1.norm() + 2.0 * std::sqrt(in.eps0 / in.mu);
  const BallDomain reach_ball = BallDomain::ball(Vec::Zero(p.train.dim), reach);
  const std::optional<double> g = derive_lipschitz(p.loss, p.train, reach_ball);
  if (!g) throw ConfigError("stagewise needs a derivable gradient bound");
  in.g = *g;
  in.l = p.l;
  if (cfg.get_string("stagewise.c", "auto") != "auto") in.c = cfg.get_real("stagewise.c");
  if (cfg.get_string("stagewise.d", "auto") != "auto") in.d = cfg.get_real("stagewise.d");
  in.alpha = cfg.get_real("algorithm.alpha", 1.0);
  in.delta = cfg.get_real("stagewise.delta", 0.1);
  const int stages = static_cast<int>(cfg.get_int("stagewise.stages"));

  RunOptions opts;
  opts.record_timing = cfg.get_bool("evaluation.timing", false);

  const std::string path =
      (std::filesystem::path(outdir) /
       ("stages_" + detail::hex_fingerprint(cfg.fingerprint()) + ".csv"))
          .string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open stages output: " + path);
  out << "fingerprint,seed,stage,eps_k,eta_k,T_k,D_k,objective,eta_capped\n";

  std::vector<StagewiseRunOutput> outputs;
  for (std::int64_t seed : cfg.get_int_list("seeds")) {
    SampleStream stream(static_cast<std::uint64_t>(seed), p.train.size());
    StagewiseRunOutput run;
    run.seed = static_cast<std::uint64_t>(seed);
    run.result = stagewise(p.loss, p.train, x1, stages, in, stream, opts);
    for (std::size_t k = 0; k < run.result.stages.size(); ++k) {
      const StageParams& sp = run.result.stages[k];
      out << detail::hex_fingerprint(cfg.fingerprint()) << ',' << seed << ','
          << sp.k << ',' << detail::csv_num(sp.eps_k) << ','
          << detail::csv_num(sp.eta_k) << ',' << sp.t_k << ','
          << detail::csv_num(sp.d_k) << ','
          << detail::csv_num(run.result.objective_after_stage[k]) << ','
          << (sp.eta_capped ? 1 : 0) << '\n';
      out.flush();
    }
    outputs.push_back(std::move(run));
  }
  return outputs;
}

/// `gen-data`: materializes the configured synthetic dataset as a LIBSVM
/// file plus a meta sidecar with whatever the generator knows (optimum, PL
/// modulus, hash).
inline std::string cmd_gen_data(const Config& cfg) {
  const std::string outdir = cfg.get_string("output.dir", "out");
  std::filesystem::create_directories(outdir);
  Dataset data = build_dataset(cfg);
  const std::string base =
      (std::filesystem::path(outdir) /
       ("data_" + detail::hex_fingerprint(cfg.fingerprint())))
          .string();
  save_libsvm(data, base + ".libsvm");
  std::ofstream meta(base + ".meta", std::ios::binary | std::ios::trunc);
  meta << "provenance = " << data.provenance << "\n";
  meta << "n = " << data.size() << "\n";
  meta << "d = " << data.dim << "\n";
  meta << "hash = " << detail::hex_fingerprint(dataset_hash(data)) << "\n";
  if (cfg.get_string("problem.synthetic", "") == "rank-deficient-ls") {
    const RankDeficientInstance inst =
        gen_rank_deficient_ls(detail::rank_deficient_spec(cfg));
    meta << "f_star = " << detail::csv_num(inst.f_star) << "\n";
    meta << "pl_mu = " << detail::csv_num(inst.mu) << "\n";
  }
  return base + ".libsvm";
}

/// Rows of a trace CSV needed by fit-rate.
struct TracePoint {
  std::int64_t t = 0;
  double obj_avg = 0.0;
};

inline std::vector<TracePoint> read_trace_points(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open trace file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty trace file: " + path);
  if (line != kTraceHeader) {
    throw DataError("unexpected trace header in " + path);
  }
  std::vector<TracePoint> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos
                                                                  : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (cells.size() != 9) {
      throw DataError("malformed trace row at line " + std::to_string(line_no));
    }
    TracePoint p;
    p.t = std::stoll(cells[4]);
    p.obj_avg = std::stod(cells[5]);
    out.push_back(p);
  }
  return out;
}

struct FitRateOptions {
  std::optional<double> baseline;  // unset = best objective found minus slack
  double slack = 0.0;
  std::int64_t t_min = 1;
  std::int64_t t_max = std::numeric_limits<std::int64_t>::max();
};

/// `fit-rate`: pools trace files, averages obj_avg across rows per
/// iteration, subtracts the baseline, and fits the log-log slope.
inline RateFit cmd_fit_rate(const std::vector<std::string>& paths,
                            const FitRateOptions& opts) {
  if (paths.empty()) throw ConfigError("fit-rate needs at least one trace file");
  std::map<std::int64_t, std::pair<double, std::int64_t>> acc;  // t -> (sum, count)
  double best = std::numeric_limits<double>::infinity();
  for (const std::string& path : paths) {
    for (const TracePoint& p : read_trace_points(path)) {
      best = std::min(best, p.obj_avg);
      auto& [sum, count] = acc[p.t];
      sum += p.obj_avg;
      ++count;
    }
  }
  const double baseline = opts.baseline ? *opts.baseline : best - opts.slack;
  std::vector<std::pair<double, double>> points;
  for (const auto& [t, sc] : acc) {
    if (t < opts.t_min || t > opts.t_max) continue;
    points.emplace_back(static_cast<double>(t),
                        sc.first / static_cast<double>(sc.second) - baseline);
  }
  return fit_rate(points);
}

}  // namespace piwa
