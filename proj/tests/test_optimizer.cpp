#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "piwa/bounds.hpp"
#include "piwa/optimizer.hpp"

using oracles::dense_ls;
using oracles::DenseLs;
using piwa::AveragingState;
using piwa::BallDomain;
using piwa::Dataset;
using piwa::LossModel;
using piwa::RunTrace;
using piwa::Sample;
using piwa::SampleStream;
using piwa::StepSchedule;
using piwa::Vec;

namespace {

Dataset scalar_target(double b) {
  Dataset d;
  d.dim = 1;
  Sample s;
  s.features = {{1, 1.0}};
  s.label = b;
  d.samples.push_back(s);
  return d;
}

}  // namespace

TEST_CASE("step schedules") {
  CHECK(StepSchedule::convex_sqrt(1.0).at(4) == 0.5);
  CHECK(StepSchedule::strongly_convex(0.5, 1.0).at(8) == Catch::Approx(1.0).epsilon(1e-15));
  CHECK(StepSchedule::constant(0.01).at(12345) == 0.01);
  CHECK_THROWS_AS(StepSchedule::constant(0.01).at(0), std::invalid_argument);

  SECTION("steps are positive and non-increasing") {
    for (const StepSchedule& s :
         {StepSchedule::convex_sqrt(2.0), StepSchedule::strongly_convex(0.3, 2.0),
          StepSchedule::constant(0.1)}) {
      double prev = std::numeric_limits<double>::infinity();
      for (std::int64_t t = 1; t <= 1000; ++t) {
        const double eta = s.at(t);
        REQUIRE(eta > 0.0);
        REQUIRE(eta <= prev);
        prev = eta;
      }
    }
  }
}

TEST_CASE("T = 1 returns the initial point for every scheme") {
  const Dataset data = scalar_target(1.0);
  const LossModel loss = LossModel::least_squares();
  Vec x1(1);
  x1 << 0.25;
  for (AveragingState st :
       {AveragingState::last(), AveragingState::uniform(), AveragingState::piwa(5.0),
        AveragingState::suffix(0.5, 1), AveragingState::poly_decay(3.0),
        AveragingState::ema(0.9)}) {
    SampleStream stream(1, data.size());
    const RunTrace trace =
        piwa::sgd_piwa(loss, data, x1, StepSchedule::constant(0.5), 1,
                       BallDomain::everywhere(), std::move(st), stream);
    CHECK(trace.final_average[0] == 0.25);
    CHECK(trace.final_last[0] == 0.25);
    REQUIRE(trace.checkpoints.size() == 1);
    CHECK(trace.checkpoints[0].t == 1);
  }
}

TEST_CASE("hand-iterated 1-d least squares recursion") {
  // f = (x - 1)^2 / 2, eta = 0.5: x_{t+1} = x_t + 0.5 (1 - x_t)
  const Dataset data = scalar_target(1.0);
  const LossModel loss = LossModel::least_squares();
  const Vec x1 = Vec::Zero(1);

  SampleStream s2(1, 1);
  CHECK(piwa::sgd_piwa(loss, data, x1, StepSchedule::constant(0.5), 2,
                       BallDomain::everywhere(), AveragingState::last(), s2)
            .final_last[0] == 0.5);
  SampleStream s3(1, 1);
  const RunTrace t3 =
      piwa::sgd_piwa(loss, data, x1, StepSchedule::constant(0.5), 3,
                     BallDomain::everywhere(), AveragingState::last(), s3);
  CHECK(t3.final_last[0] == 0.75);

  SECTION("averaged output blends the same iterates") {
    SampleStream s(1, 1);
    const RunTrace avg =
        piwa::sgd_piwa(loss, data, x1, StepSchedule::constant(0.5), 3,
                       BallDomain::everywhere(), AveragingState::uniform(), s);
    CHECK(avg.final_average[0] == Catch::Approx((0.0 + 0.5 + 0.75) / 3.0).epsilon(1e-15));
  }
}

TEST_CASE("projection keeps every iterate inside the ball") {
  // target far outside the ball pushes iterates outward
  const Dataset data = scalar_target(10.0);
  const LossModel loss = LossModel::least_squares();
  const BallDomain ball = BallDomain::ball(Vec::Zero(1), 0.1);
  const Vec x1 = Vec::Zero(1);
  for (std::int64_t t_final = 1; t_final <= 50; ++t_final) {
    SampleStream stream(7, 1);
    const RunTrace trace =
        piwa::sgd_piwa(loss, data, x1, StepSchedule::constant(0.3), t_final, ball,
                       AveragingState::last(), stream);
    REQUIRE(std::abs(trace.final_last[0]) <= 0.1 + 1e-12);
    REQUIRE(std::abs(trace.final_average[0]) <= 0.1 + 1e-12);
  }
}

TEST_CASE("identical config and seed reproduce the trace bitwise") {
  const DenseLs instance = dense_ls(50, 6, 0.2, 99);
  const LossModel loss = LossModel::least_squares_l2(0.5);
  const Vec x1 = Vec::Zero(6);
  auto run = [&]() {
    SampleStream stream(424242, instance.data.size());
    return piwa::sgd_piwa(loss, instance.data, x1,
                          StepSchedule::strongly_convex(0.5, 1.0), 2000,
                          BallDomain::ball(Vec::Zero(6), 3.0),
                          AveragingState::piwa(1.0), stream);
  };
  const RunTrace a = run();
  const RunTrace b = run();
  REQUIRE(a.final_average == b.final_average);
  REQUIRE(a.final_last == b.final_last);
  REQUIRE(a.checkpoints.size() == b.checkpoints.size());
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
    CHECK(a.checkpoints[i].obj_avg == b.checkpoints[i].obj_avg);
    CHECK(a.checkpoints[i].obj_last == b.checkpoints[i].obj_last);
  }
}

TEST_CASE("divergence aborts with a diagnostic") {
  const Dataset data = scalar_target(1.0);
  const LossModel loss = LossModel::least_squares();
  const Vec x1 = Vec::Zero(1);
  SampleStream stream(1, 1);
  // eta = 3 triples the error every step; the run must abort, not clamp
  CHECK_THROWS_AS(piwa::sgd_piwa(loss, data, x1, StepSchedule::constant(3.0), 10000,
                                 BallDomain::everywhere(), AveragingState::last(),
                                 stream),
                  piwa::NumericError);
}

TEST_CASE("preconditions") {
  const Dataset data = scalar_target(1.0);
  const LossModel loss = LossModel::least_squares();
  SampleStream stream(1, 1);

  SECTION("x1 outside the domain") {
    Vec far(1);
    far << 5.0;
    CHECK_THROWS_AS(piwa::sgd_piwa(loss, data, far, StepSchedule::constant(0.1), 10,
                                   BallDomain::ball(Vec::Zero(1), 1.0),
                                   AveragingState::last(), stream),
                    piwa::ConfigError);
  }

  SECTION("stale averaging state") {
    AveragingState st = AveragingState::uniform();
    st.update(Vec::Zero(1), 1);
    CHECK_THROWS_AS(piwa::sgd_piwa(loss, data, Vec::Zero(1),
                                   StepSchedule::constant(0.1), 10,
                                   BallDomain::everywhere(), std::move(st), stream),
                    piwa::ConfigError);
  }
}

TEST_CASE("stage parameter formulas") {
  SECTION("eps halves per stage") {
    const piwa::StageParams p = piwa::stage_params(3, 1.0, 0.25, 2.0, 1.0, 4000.0, 1.0, 0.1);
    CHECK(p.eps_k == 0.125);
  }

  SECTION("first radius from the PL modulus") {
    const piwa::StageParams p = piwa::stage_params(1, 1.0, 0.25, 2.0, 1.0, 4000.0, 1.0, 0.1);
    CHECK(p.d_k == 2.0);
  }

  SECTION("step size formula") {
    // k = 1 with eps0 = 1 gives eps_k = 0.5; c = 1, Ghat^2 = 2 -> 0.125
    const piwa::StageParams p = piwa::stage_params(1, 1.0, 0.25, 2.0, 1.0, 4000.0, 1.0, 0.1);
    CHECK(p.eta_k == 0.125);
    CHECK_FALSE(p.eta_capped);
  }

  SECTION("iteration budget") {
    const piwa::StageParams p = piwa::stage_params(2, 1.0, 0.5, 2.0, 1.0, 1000.0, 1.0, 0.1);
    CHECK(p.t_k == 8000);  // ceil(1000 / (0.5 * 0.25))
  }

  SECTION("c bound enforced when L declared") {
    CHECK_THROWS_AS(
        piwa::stage_params(1, 1.0, 0.25, 2.0, /*c=*/0.9, 4000.0, 1.0, 0.1, /*L=*/8.0),
        piwa::ConfigError);
    CHECK_NOTHROW(
        piwa::stage_params(1, 1.0, 0.25, 2.0, /*c=*/0.4, 4000.0, 1.0, 0.1, /*L=*/8.0));
  }

  SECTION("auto d uses the max formula") {
    const double ghat_sq = 2.0;
    const double alpha = 1.0;
    const double delta = 0.1;
    const piwa::StageParams p =
        piwa::stage_params(1, 1.0, 0.25, ghat_sq, 1.0, std::nullopt, alpha, delta);
    const double expect_d =
        std::max(32.0 * 2.0 * ghat_sq / 1.0,
                 512.0 * 4.0 * ghat_sq * std::log(10.0));
    CHECK(p.t_k == static_cast<std::int64_t>(std::ceil(expect_d / (0.25 * 0.5))));
  }
}

TEST_CASE("stagewise driver mechanics") {
  piwa::RankDeficientSpec spec;
  spec.n = 40;
  spec.d = 5;
  spec.rank = 3;
  spec.solution_norm = 0.5;
  spec.seed = 13;
  const piwa::RankDeficientInstance inst = piwa::gen_rank_deficient_ls(spec);

  LossModel loss = LossModel::least_squares();
  const Vec x1 = Vec::Zero(spec.d);
  const double eps0 = loss.full_objective(x1, inst.data) - inst.f_star;

  piwa::StageInputs in;
  in.eps0 = eps0;
  in.mu = inst.mu;
  const double reach = 2.0 * std::sqrt(eps0 / inst.mu);
  in.g = *piwa::derive_lipschitz(loss, inst.data,
                                 BallDomain::ball(Vec::Zero(spec.d), reach));
  in.l = piwa::derive_smoothness(loss, inst.data);
  in.c = 1.0;
  in.d = 2000.0;  // manual budget keeps this test fast
  in.alpha = 1.0;
  in.delta = 0.1;

  SECTION("radii halve and stage balls hold") {
    SampleStream stream(5, inst.data.size());
    const piwa::StagewiseResult res = piwa::stagewise(loss, inst.data, x1, 4, in, stream);
    REQUIRE(res.stages.size() == 4);
    const double d1 = res.stages[0].d_k;
    for (int k = 0; k < 4; ++k) {
      CHECK(res.stages[static_cast<std::size_t>(k)].d_k ==
            Catch::Approx(d1 / std::pow(2.0, k)).epsilon(1e-14));
    }
    // ball validity: ||x_k - x_{k-1}|| <= D_k
    Vec prev = x1;
    for (std::size_t k = 0; k < 4; ++k) {
      const Vec& xk = res.traces[k].final_average;
      CHECK((xk - prev).norm() <= res.stages[k].d_k + 1e-12);
      prev = xk;
    }
  }

  SECTION("K = 1 degenerates to a single proximal run") {
    SampleStream stream(5, inst.data.size());
    const piwa::StagewiseResult res = piwa::stagewise(loss, inst.data, x1, 1, in, stream);

    const piwa::StageParams p = piwa::stage_params(
        1, in.eps0, in.mu,
        2.0 * in.g * in.g + 2.0 * piwa::stage_radius(1, in.eps0, in.mu) *
                                piwa::stage_radius(1, in.eps0, in.mu) /
                                ((4.0 / in.mu) * (4.0 / in.mu)),
        in.c, in.d, in.alpha, in.delta, in.l);
    piwa::ProximalLoss prox = piwa::prox_wrap(loss, x1, 4.0 / in.mu);
    prox.lipschitz_g = std::sqrt(p.ghat_sq);
    SampleStream direct(5, inst.data.size());
    const RunTrace trace = piwa::sgd_piwa(
        prox, inst.data, x1, StepSchedule::constant(p.eta_k), p.t_k,
        BallDomain::ball(x1, p.d_k), AveragingState::piwa(in.alpha), direct);
    REQUIRE(res.x_final == trace.final_average);
  }

  SECTION("gamma above 1/rho is rejected") {
    LossModel nonconvex = LossModel::pl_sine();
    piwa::StageInputs bad = in;
    bad.mu = 1.0 / 32.0;  // gamma = 128 > 1/4
    SampleStream stream(5, inst.data.size());
    CHECK_THROWS_AS(piwa::stagewise(nonconvex, inst.data, x1, 1, bad, stream),
                    piwa::ConfigError);
  }
}

TEST_CASE("a declared gradient bound that is too small aborts the run") {
  const Dataset data = scalar_target(5.0);
  LossModel loss = LossModel::least_squares();
  loss.lipschitz_g = 0.1;  // actual gradient at x = 0 is 5
  SampleStream stream(1, 1);
  CHECK_THROWS_AS(piwa::sgd_piwa(loss, data, Vec::Zero(1), StepSchedule::constant(0.1),
                                 10, BallDomain::everywhere(), AveragingState::last(),
                                 stream),
                  piwa::NumericError);
}

TEST_CASE("nonconvex stress path: stagewise on the pl-sine objective") {
  // rho = 4 > mu/4 here, so the geometric-decrease guarantee does not apply;
  // this exercises the machinery with gamma = 1/rho and manual budgets.
  const int d = 2;
  const Dataset noise = piwa::gen_pl_sine_noise(20, d, 0.2, 77);
  const LossModel loss = LossModel::pl_sine();

  piwa::StageInputs in;
  in.eps0 = 8.0;
  in.mu = 1.0 / 32.0;
  in.g = 30.0;
  in.l = 8.0;
  in.c = 1.0;
  in.d = 500.0;
  in.alpha = 1.0;
  in.delta = 0.1;
  in.gamma = 0.25;  // 1/rho

  Vec x1(d);
  x1 << 2.0, -1.5;
  piwa::RunOptions opts;
  opts.batch = 8;
  SampleStream stream(3, noise.size());
  const piwa::StagewiseResult res =
      piwa::stagewise(loss, noise, x1, 3, in, stream, opts);
  REQUIRE(res.stages.size() == 3);
  const double f0 = loss.full_objective(x1, noise);
  CHECK(res.objective_after_stage.back() < f0);
  for (const auto& trace : res.traces) {
    CHECK(trace.final_average.allFinite());
  }
}

TEST_CASE("averaged gap stays under the strongly convex rate bound") {
  const std::int64_t n = 200;
  const int d = 20;
  const double lambda = 1.0;
  const DenseLs instance = dense_ls(n, d, 0.1, 7);
  const LossModel loss_plain = LossModel::least_squares_l2(lambda);

  const Vec x_star = oracles::ls_l2_optimum(instance, lambda);
  const double f_star = loss_plain.full_objective(x_star, instance.data);

  const BallDomain ball = BallDomain::ball(Vec::Zero(d), 2.0);
  REQUIRE(ball.contains(x_star));
  LossModel loss = loss_plain;
  loss.lipschitz_g = piwa::derive_lipschitz(loss, instance.data, ball);

  const std::int64_t t_final = 100000;
  for (double alpha : {1.0, 5.0}) {
    double mean_gap = 0.0;
    const int seeds = 10;
    for (int seed = 1; seed <= seeds; ++seed) {
      SampleStream stream(static_cast<std::uint64_t>(seed), n);
      piwa::RunOptions opts;
      opts.checkpoints = {t_final};
      const RunTrace trace = piwa::sgd_piwa(
          loss, instance.data, Vec::Zero(d),
          StepSchedule::strongly_convex(lambda, alpha), t_final, ball,
          AveragingState::piwa(alpha), stream, opts);
      mean_gap += loss.full_objective(trace.final_average, instance.data) - f_star;
    }
    mean_gap /= seeds;

    piwa::BoundInputs in;
    in.alpha = alpha;
    in.g = loss.lipschitz_g;
    in.lambda = lambda;
    in.t = t_final;
    const double bound = piwa::bound_opt_strongly(in);
    INFO("alpha = " << alpha << ": mean gap " << mean_gap << " vs bound " << bound);
    REQUIRE(mean_gap >= 0.0);
    REQUIRE(mean_gap <= bound);
  }
}
