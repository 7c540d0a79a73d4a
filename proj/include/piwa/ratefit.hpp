#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "piwa/core.hpp"

namespace piwa {

/// Ordinary least squares on (ln T, ln gap). Points with nonpositive gaps
/// are skipped (and counted); fewer than 3 usable points is an error.
struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 1.0;
  int points_used = 0;
  int points_skipped = 0;
};

inline RateFit fit_rate(std::span<const std::pair<double, double>> points) {
  std::vector<std::pair<double, double>> logs;
  int skipped = 0;
  for (const auto& [t, gap] : points) {
    if (!(gap > 0.0) || !(t > 0.0) || !std::isfinite(gap) || !std::isfinite(t)) {
      ++skipped;
      continue;
    }
    logs.emplace_back(std::log(t), std::log(gap));
  }
  if (logs.size() < 3) {
    throw NumericError("rate fit needs at least 3 points with positive gaps (" +
                       std::to_string(logs.size()) + " usable, " +
                       std::to_string(skipped) + " skipped)");
  }
  const double n = static_cast<double>(logs.size());
  double sx = 0.0, sy = 0.0;
  for (const auto& [x, y] : logs) {
    sx += x;
    sy += y;
  }
  const double mx = sx / n;
  const double my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : logs) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (!(sxx > 0.0)) throw NumericError("rate fit: all abscissae coincide");
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  const double ss_res = syy - sxy * sxy / sxx;
  fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  fit.points_used = static_cast<int>(logs.size());
  fit.points_skipped = skipped;
  if (!std::isfinite(fit.slope)) throw NumericError("rate fit produced a non-finite slope");
  return fit;
}

}  // namespace piwa
