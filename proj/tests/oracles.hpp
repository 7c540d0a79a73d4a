// Test-side oracles, kept independent of the library's incremental
// implementations: batch averaging formulas evaluated directly, dense
// least-squares instances with closed-form optima, and a projected
// full-batch descent reference optimizer.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

#include "piwa/core.hpp"
#include "piwa/data.hpp"
#include "piwa/losses.hpp"

namespace oracles {

using piwa::Dataset;
using piwa::Vec;

inline std::vector<Vec> random_iterates(std::int64_t t_final, int d, std::uint64_t seed) {
  piwa::Rng rng(seed);
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(t_final));
  for (std::int64_t t = 0; t < t_final; ++t) {
    Vec x(d);
    for (int i = 0; i < d; ++i) x[i] = rng.normal();
    out.push_back(std::move(x));
  }
  return out;
}

inline Vec batch_weighted(const std::vector<Vec>& xs, double alpha) {
  Vec num = Vec::Zero(xs[0].size());
  double den = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double w = std::pow(static_cast<double>(i + 1), alpha);
    num += w * xs[i];
    den += w;
  }
  return num / den;
}

inline Vec batch_suffix(const std::vector<Vec>& xs, double fraction) {
  const auto t_final = static_cast<std::int64_t>(xs.size());
  const auto window = static_cast<std::int64_t>(
      std::ceil(fraction * static_cast<double>(t_final)));
  Vec sum = Vec::Zero(xs[0].size());
  for (std::int64_t t = t_final - window + 1; t <= t_final; ++t) {
    sum += xs[static_cast<std::size_t>(t - 1)];
  }
  return sum / static_cast<double>(window);
}

inline Vec batch_ema(const std::vector<Vec>& xs, double beta) {
  Vec m = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) m = beta * m + (1.0 - beta) * xs[i];
  return m;
}

// coefficients of the polynomial-decay recursion via one backward product
inline Vec batch_poly_decay(const std::vector<Vec>& xs, double eta) {
  const std::size_t n = xs.size();
  std::vector<double> coeff(n);
  double tail = 1.0;
  for (std::size_t t = n; t >= 1; --t) {
    const double c = t == 1 ? 1.0 : (eta + 1.0) / (static_cast<double>(t) + eta);
    coeff[t - 1] = c * tail;
    tail *= 1.0 - c;
  }
  Vec out = Vec::Zero(xs[0].size());
  for (std::size_t t = 0; t < n; ++t) out += coeff[t] * xs[t];
  return out;
}

struct DenseLs {
  Dataset data;
  Eigen::MatrixXd a;
  Vec b;
};

// full-rank noisy least-squares instance with roughly unit-norm features
inline DenseLs dense_ls(std::int64_t n, int d, double noise, std::uint64_t seed) {
  piwa::Rng rng(seed);
  DenseLs out;
  out.a.resize(n, d);
  out.b.resize(n);
  Vec x_true(d);
  for (int j = 0; j < d; ++j) x_true[j] = rng.normal();
  x_true.normalize();
  for (std::int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      out.a(i, j) = rng.normal() / std::sqrt(static_cast<double>(d));
    }
    out.b[i] = out.a.row(i).dot(x_true) + noise * rng.normal();
  }
  out.data.dim = d;
  for (std::int64_t i = 0; i < n; ++i) {
    out.data.samples.push_back(piwa::dense_sample(out.a.row(i).transpose(), out.b[i]));
  }
  out.data.provenance = "test:dense-ls";
  return out;
}

// closed-form minimizer of (1/2n)||Ax - b||^2 + (lambda/2)||x||^2
inline Vec ls_l2_optimum(const DenseLs& ls, double lambda) {
  const auto n = static_cast<double>(ls.b.size());
  const int d = static_cast<int>(ls.a.cols());
  const Eigen::MatrixXd h =
      ls.a.transpose() * ls.a / n + lambda * Eigen::MatrixXd::Identity(d, d);
  return h.ldlt().solve(ls.a.transpose() * ls.b / n);
}

// projected full-batch gradient descent to machine precision; the reference
// optimum for smooth strongly convex objectives without a closed form
inline Vec projected_gd_optimum(const piwa::LossModel& loss, const Dataset& data,
                                const piwa::BallDomain& domain, double smoothness,
                                int max_iters = 200000, double grad_tol = 1e-13) {
  Vec x = Vec::Zero(data.dim);
  Vec grad(data.dim), gsum(data.dim);
  const double step = 1.0 / smoothness;
  for (int it = 0; it < max_iters; ++it) {
    gsum.setZero();
    for (const piwa::Sample& s : data.samples) {
      loss.subgrad_into(x, s, grad);
      gsum += grad;
    }
    gsum /= static_cast<double>(data.size());
    const Vec next = piwa::project_ball(x - step * gsum, domain);
    const double moved = (next - x).norm();
    x = next;
    if (moved <= grad_tol * step * std::max(1.0, x.norm())) break;
  }
  return x;
}

}  // namespace oracles
