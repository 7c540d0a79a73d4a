#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>

#include "piwa/core.hpp"
#include "piwa/optimizer.hpp"
#include "piwa/stability.hpp"

namespace piwa {

inline constexpr const char* kTraceHeader =
    "fingerprint,seed,scheme,alpha,t,obj_avg,obj_last,test_metric,wall_ms";
inline constexpr const char* kStabilityHeader =
    "fingerprint,seed,alpha,trial,param_dev_avg,param_dev_last,loss_dev_max,thm_bound";

namespace detail {

inline std::string csv_num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string hex_fingerprint(std::uint64_t fp) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[fp & 0xF];
    fp >>= 4;
  }
  return out;
}

}  // namespace detail

/// Trace CSV writer bound to one config fingerprint; rows from a different
/// config cannot end up in the same file. Rows are flushed as written so a
/// killed run leaves a valid prefix.
class TraceCsvWriter {
 public:
  TraceCsvWriter(const std::string& path, std::uint64_t fingerprint)
      : out_(path, std::ios::binary | std::ios::trunc),
        fingerprint_(detail::hex_fingerprint(fingerprint)) {
    if (!out_) throw DataError("cannot open trace output: " + path);
    out_ << kTraceHeader << '\n';
    out_.flush();
  }

  void row(std::uint64_t seed, const std::string& scheme, double alpha,
           const Checkpoint& cp) {
    out_ << fingerprint_ << ',' << seed << ',' << scheme << ','
         << detail::csv_num(alpha) << ',' << cp.t << ','
         << detail::csv_num(cp.obj_avg) << ',' << detail::csv_num(cp.obj_last) << ','
         << detail::csv_num(cp.test_metric) << ',' << detail::csv_num(cp.wall_ms)
         << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::string fingerprint_;
};

/// Stability CSV writer; same fingerprint binding and flush policy. The
/// aggregate rows use "mean" / "max" in the trial column.
class StabilityCsvWriter {
 public:
  StabilityCsvWriter(const std::string& path, std::uint64_t fingerprint)
      : out_(path, std::ios::binary | std::ios::trunc),
        fingerprint_(detail::hex_fingerprint(fingerprint)) {
    if (!out_) throw DataError("cannot open stability output: " + path);
    out_ << kStabilityHeader << '\n';
    out_.flush();
  }

  void trial_row(std::uint64_t seed, double alpha, const StabilityTrial& t,
                 double thm_bound) {
    out_ << fingerprint_ << ',' << seed << ',' << detail::csv_num(alpha) << ','
         << t.trial << ',' << detail::csv_num(t.param_dev_avg) << ','
         << detail::csv_num(t.param_dev_last) << ','
         << detail::csv_num(t.loss_dev_max) << ',' << detail::csv_num(thm_bound)
         << '\n';
    out_.flush();
  }

  void aggregate_row(std::uint64_t seed, double alpha, const char* which,
                     double dev_avg, double dev_last, double loss_dev,
                     double thm_bound) {
    out_ << fingerprint_ << ',' << seed << ',' << detail::csv_num(alpha) << ','
         << which << ',' << detail::csv_num(dev_avg) << ','
         << detail::csv_num(dev_last) << ',' << detail::csv_num(loss_dev) << ','
         << detail::csv_num(thm_bound) << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::string fingerprint_;
};

}  // namespace piwa
