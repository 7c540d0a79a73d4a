#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "piwa/core.hpp"

namespace piwa {

/// One observation: sparse features (1-based indices, strictly increasing)
/// and a label. Classification labels are -1/+1; regression labels are any
/// real. For the pl-sine loss the "features" hold the per-sample noise
/// vector and the label is unused.
struct Sample {
  std::vector<std::pair<int, double>> features;
  double label = 0.0;
};

struct Dataset {
  std::vector<Sample> samples;
  int dim = 0;
  std::string provenance;

  std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
};

/// Sparse-dense inner product a . x (indices 1-based).
inline double sparse_dot(const Sample& z, const Vec& x) {
  if (!z.features.empty() && z.features.back().first > x.size()) {
    throw DataError("sample feature index exceeds parameter dimension");
  }
  double acc = 0.0;
  for (const auto& [idx, val] : z.features) acc += val * x[idx - 1];
  return acc;
}

/// y += c * a for sparse a.
inline void sparse_axpy(double c, const Sample& z, Vec& y) {
  if (!z.features.empty() && z.features.back().first > y.size()) {
    throw DataError("sample feature index exceeds parameter dimension");
  }
  for (const auto& [idx, val] : z.features) y[idx - 1] += c * val;
}

inline double sparse_norm(const Sample& z) {
  double acc = 0.0;
  for (const auto& [idx, val] : z.features) acc += val * val;
  return std::sqrt(acc);
}

struct LibsvmOptions {
  bool zero_one_labels = false;  // accept 0/1 labels, mapped to -1/+1
  bool real_labels = false;      // accept any finite label (regression files)
  int dim_override = 0;          // 0 = use max index seen
};

namespace detail {

// from_chars rejects a leading '+', which LIBSVM labels ("+1") carry.
inline std::string_view strip_plus(std::string_view tok) {
  if (tok.size() > 1 && tok.front() == '+') tok.remove_prefix(1);
  return tok;
}

inline bool parse_double_token(std::string_view tok, double& out) {
  tok = strip_plus(tok);
  const char* begin = tok.data();
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

inline bool parse_int_token(std::string_view tok, int& out) {
  tok = strip_plus(tok);
  const char* begin = tok.data();
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

[[noreturn]] inline void parse_fail(std::size_t line_no, const std::string& msg) {
  throw DataError("libsvm parse error at line " + std::to_string(line_no) +
                  ": " + msg);
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses LIBSVM text: one sample per line, "label idx:val idx:val ...",
/// 1-based strictly increasing indices. Blank lines are skipped and '#'
/// starts a comment. Labels must be -1/+1 (or 0/1 with the flag, mapped to
/// -1/+1).
inline Dataset parse_libsvm(std::string_view text, const LibsvmOptions& opts = {}) {
  Dataset out;
  int max_index = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(
        pos, eol == std::string_view::npos ? text.size() - pos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' ||
                             line.back() == '\t')) {
      line.remove_suffix(1);
    }
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) {
      line.remove_prefix(1);
    }
    if (line.empty()) continue;

    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      if (j > i) tokens.push_back(line.substr(i, j - i));
      i = j;
    }

    double raw_label = 0.0;
    if (!detail::parse_double_token(tokens[0], raw_label)) {
      detail::parse_fail(line_no, "non-numeric label token '" +
                                      std::string(tokens[0]) + "'");
    }
    double label = 0.0;
    if (opts.real_labels) {
      if (!std::isfinite(raw_label)) detail::parse_fail(line_no, "non-finite label");
      label = raw_label;
    } else if (opts.zero_one_labels) {
      if (raw_label == 0.0) label = -1.0;
      else if (raw_label == 1.0) label = 1.0;
      else detail::parse_fail(line_no, "label outside {0, 1}");
    } else {
      if (raw_label == -1.0) label = -1.0;
      else if (raw_label == 1.0) label = 1.0;
      else detail::parse_fail(line_no, "label outside {-1, +1}");
    }

    Sample s;
    s.label = label;
    int prev_index = 0;
    for (std::size_t k = 1; k < tokens.size(); ++k) {
      const std::string_view tok = tokens[k];
      const std::size_t colon = tok.find(':');
      if (colon == std::string_view::npos) {
        detail::parse_fail(line_no, "expected idx:value, got '" +
                                        std::string(tok) + "'");
      }
      int idx = 0;
      double val = 0.0;
      if (!detail::parse_int_token(tok.substr(0, colon), idx)) {
        detail::parse_fail(line_no, "non-numeric index in '" +
                                        std::string(tok) + "'");
      }
      if (!detail::parse_double_token(tok.substr(colon + 1), val)) {
        detail::parse_fail(line_no, "non-numeric value in '" +
                                        std::string(tok) + "'");
      }
      if (idx < 1) detail::parse_fail(line_no, "index < 1");
      if (idx <= prev_index) {
        detail::parse_fail(line_no, "non-increasing index at line " +
                                        std::to_string(line_no));
      }
      prev_index = idx;
      s.features.emplace_back(idx, val);
      max_index = std::max(max_index, idx);
    }
    out.samples.push_back(std::move(s));
  }
  if (opts.dim_override > 0) {
    if (opts.dim_override < max_index) {
      throw DataError("dimension override " + std::to_string(opts.dim_override) +
                      " is below max feature index " + std::to_string(max_index));
    }
    out.dim = opts.dim_override;
  } else {
    out.dim = max_index;
  }
  out.provenance = "libsvm";
  return out;
}

inline Dataset load_libsvm(const std::string& path, const LibsvmOptions& opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  Dataset d = parse_libsvm(buf.str(), opts);
  d.provenance = "libsvm:" + path;
  return d;
}

/// Canonical serialization: the same grammar with shortest round-trip
/// numerals, one '\n' per sample. parse(serialize(d)) reproduces d.
inline std::string serialize_libsvm(const Dataset& d) {
  std::string out;
  for (const Sample& s : d.samples) {
    out += detail::format_double(s.label);
    for (const auto& [idx, val] : s.features) {
      out += ' ';
      out += std::to_string(idx);
      out += ':';
      out += detail::format_double(val);
    }
    out += '\n';
  }
  return out;
}

inline void save_libsvm(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open output file: " + path);
  out << serialize_libsvm(d);
}

/// Content hash (FNV-1a over dimension + canonical form); used for
/// determinism checks and provenance stamps.
inline std::uint64_t dataset_hash(const Dataset& d) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  mix("d=" + std::to_string(d.dim) + "\n");
  mix(serialize_libsvm(d));
  return h;
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

struct ClassificationSpec {
  std::int64_t n = 0;
  int d = 0;
  double margin = 0.05;    // guaranteed |w* . a| / ||a|| >= margin before flips
  double flip_noise = 0.0; // label-flip probability
  std::uint64_t seed = 0;
};

inline Sample dense_sample(const Vec& a, double label) {
  Sample s;
  s.label = label;
  s.features.reserve(static_cast<std::size_t>(a.size()));
  for (int i = 0; i < a.size(); ++i) s.features.emplace_back(i + 1, a[i]);
  return s;
}

struct ClassificationInstance {
  Dataset data;
  Vec separator;  // the planted unit ground truth
};

/// Linear-separator instance: unit ground truth w*, Gaussian features
/// rejection-sampled to the declared normalized margin, labels sign(w*.a)
/// with optional flips.
inline ClassificationInstance gen_classification_instance(const ClassificationSpec& spec) {
  if (spec.n < 1 || spec.d < 1) throw ConfigError("classification spec requires n, d >= 1");
  if (!(spec.margin > 0.0)) throw ConfigError("classification spec requires margin > 0");
  Rng rng(spec.seed);
  Vec w(spec.d);
  for (int i = 0; i < spec.d; ++i) w[i] = rng.normal();
  w.normalize();

  ClassificationInstance inst;
  inst.separator = w;
  Dataset& out = inst.data;
  out.dim = spec.d;
  out.samples.reserve(static_cast<std::size_t>(spec.n));
  Vec a(spec.d);
  for (std::int64_t i = 0; i < spec.n; ++i) {
    double activation = 0.0;
    for (;;) {
      for (int j = 0; j < spec.d; ++j) a[j] = rng.normal();
      activation = w.dot(a);
      if (std::abs(activation) >= spec.margin * a.norm()) break;
    }
    double label = activation > 0.0 ? 1.0 : -1.0;
    if (spec.flip_noise > 0.0 && rng.bernoulli(spec.flip_noise)) label = -label;
    out.samples.push_back(dense_sample(a, label));
  }
  std::ostringstream prov;
  prov << "synthetic:classification-margin n=" << spec.n << " d=" << spec.d
       << " margin=" << spec.margin << " flip=" << spec.flip_noise
       << " seed=" << spec.seed;
  out.provenance = prov.str();
  return inst;
}

inline Dataset gen_classification(const ClassificationSpec& spec) {
  return gen_classification_instance(spec).data;
}

struct RankDeficientSpec {
  std::int64_t n = 0;
  int d = 0;
  int rank = 0;            // 1 <= rank < d
  double solution_norm = 1.0;
  double noise = 0.0;      // target noise; 0 keeps the system consistent
  double row_norm = 0.0;   // > 0: normalize every design row to this norm
  std::uint64_t seed = 0;
};

struct RankDeficientInstance {
  Dataset data;
  double f_star = 0.0;       // min of (1/n) sum (a.x - b)^2 / 2
  double mu = 0.0;           // smallest nonzero eigenvalue of the empirical Hessian
  Vec least_norm_solution;
  Vec hessian_eigenvalues;   // ascending
};

/// Empirical Hessian (1/n) A^T A of the unregularized least-squares
/// objective.
inline Eigen::MatrixXd ls_hessian(const Dataset& data) {
  if (data.samples.empty()) throw DataError("empty dataset");
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(data.dim, data.dim);
  Vec a(data.dim);
  for (const Sample& s : data.samples) {
    a.setZero();
    sparse_axpy(1.0, s, a);
    h.noalias() += a * a.transpose();
  }
  h /= static_cast<double>(data.samples.size());
  return h;
}

/// Smallest nonzero eigenvalue of the empirical least-squares Hessian; the
/// PL modulus of the (convex) rank-deficient quadratic.
inline double least_squares_mu(const Dataset& data, Vec* eigenvalues = nullptr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ls_hessian(data));
  const Vec evs = es.eigenvalues();
  if (eigenvalues) *eigenvalues = evs;
  const double cutoff = 1e-10 * std::max(evs[evs.size() - 1], 1e-300);
  for (int i = 0; i < evs.size(); ++i) {
    if (evs[i] > cutoff) return evs[i];
  }
  throw DataError("least-squares Hessian is numerically zero");
}

/// Least-squares instance with exactly `rank` nonzero singular values.
/// Consistent targets give f_star = 0 exactly; noisy targets get f_star
/// from the least-norm solution.
inline RankDeficientInstance gen_rank_deficient_ls(const RankDeficientSpec& spec) {
  if (spec.rank < 1 || spec.rank >= spec.d) {
    throw ConfigError("rank-deficient spec requires 1 <= rank < d");
  }
  if (spec.n < spec.rank) throw ConfigError("rank-deficient spec requires n >= rank");
  Rng rng(spec.seed);

  Eigen::MatrixXd basis(spec.d, spec.rank);
  for (int i = 0; i < spec.d; ++i)
    for (int j = 0; j < spec.rank; ++j) basis(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(spec.d, spec.rank);

  Eigen::MatrixXd coeffs(spec.n, spec.rank);
  for (std::int64_t i = 0; i < spec.n; ++i)
    for (int j = 0; j < spec.rank; ++j) coeffs(i, j) = rng.normal();
  if (spec.row_norm > 0.0) {
    for (std::int64_t i = 0; i < spec.n; ++i) {
      coeffs.row(i) *= spec.row_norm / std::max(coeffs.row(i).norm(), 1e-300);
    }
  }
  Eigen::MatrixXd a = coeffs * q.transpose();  // n x d, rank `rank`

  Vec y(spec.rank);
  for (int j = 0; j < spec.rank; ++j) y[j] = rng.normal();
  y *= spec.solution_norm / std::max(y.norm(), 1e-300);
  Vec x_true = q * y;

  Vec b = a * x_true;
  if (spec.noise > 0.0) {
    for (std::int64_t i = 0; i < spec.n; ++i) b[i] += spec.noise * rng.normal();
  }

  RankDeficientInstance inst;
  inst.data.dim = spec.d;
  inst.data.samples.reserve(static_cast<std::size_t>(spec.n));
  for (std::int64_t i = 0; i < spec.n; ++i) {
    inst.data.samples.push_back(dense_sample(a.row(i).transpose(), b[i]));
  }
  std::ostringstream prov;
  prov << "synthetic:rank-deficient-ls n=" << spec.n << " d=" << spec.d
       << " r=" << spec.rank << " noise=" << spec.noise
       << " row_norm=" << spec.row_norm << " seed=" << spec.seed;
  inst.data.provenance = prov.str();

  inst.least_norm_solution =
      a.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);
  if (spec.noise == 0.0) {
    inst.f_star = 0.0;  // realizable by construction
  } else {
    inst.f_star = (a * inst.least_norm_solution - b).squaredNorm() /
                  (2.0 * static_cast<double>(spec.n));
  }
  inst.mu = least_squares_mu(inst.data, &inst.hessian_eigenvalues);
  return inst;
}

/// Mean-zero noise vectors for the pl-sine stochastic objective. Antithetic
/// pairs make the empirical mean exactly zero, so the full-sample objective
/// is the deterministic sum of x^2 + 3 sin^2 x plus nothing.
inline Dataset gen_pl_sine_noise(std::int64_t n, int d, double noise_scale,
                                 std::uint64_t seed) {
  if (n < 2 || n % 2 != 0) throw ConfigError("pl-sine noise set requires even n >= 2");
  Rng rng(seed);
  Dataset out;
  out.dim = d;
  out.samples.reserve(static_cast<std::size_t>(n));
  Vec z(d);
  for (std::int64_t i = 0; i < n / 2; ++i) {
    for (int j = 0; j < d; ++j) z[j] = noise_scale * rng.normal();
    out.samples.push_back(dense_sample(z, 0.0));
    out.samples.push_back(dense_sample(-z, 0.0));
  }
  std::ostringstream prov;
  prov << "synthetic:pl-sine-noise n=" << n << " d=" << d
       << " scale=" << noise_scale << " seed=" << seed;
  out.provenance = prov.str();
  return out;
}

/// Deterministic disjoint split; `test_fraction` of the samples (rounded)
/// go to the test side.
inline std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction,
                                         std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test fraction must lie in (0, 1)");
  }
  const std::int64_t n = data.size();
  const auto n_test = static_cast<std::int64_t>(
      std::llround(test_fraction * static_cast<double>(n)));
  if (n_test <= 0 || n_test >= n) {
    throw DataError("split would leave an empty train or test side");
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  Dataset train, test;
  train.dim = test.dim = data.dim;
  train.provenance = data.provenance + " [train]";
  test.provenance = data.provenance + " [test]";
  for (std::int64_t i = 0; i < n; ++i) {
    const Sample& s = data.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    if (i < n_test) test.samples.push_back(s);
    else train.samples.push_back(s);
  }
  return {std::move(train), std::move(test)};
}

/// Misclassification rate of the linear predictor sign(a . x).
inline double misclassification(const Vec& x, const Dataset& data) {
  if (data.samples.empty()) throw DataError("empty dataset");
  std::int64_t wrong = 0;
  for (const Sample& s : data.samples) {
    const double pred = sparse_dot(s, x) >= 0.0 ? 1.0 : -1.0;
    if (pred != s.label) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

}  // namespace piwa
