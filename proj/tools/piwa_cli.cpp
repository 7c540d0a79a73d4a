// Experiment runner: config-driven SGD runs, averaging-scheme and alpha
// sweeps, coupled-trajectory stability sweeps, the stagewise driver,
// synthetic data generation, and log-log rate fitting over trace CSVs.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "piwa/experiment.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitDataError = 3;
constexpr int kExitNumericError = 4;

int dispatch(const std::string& command, const std::string& config_path,
             const std::vector<std::string>& trace_files,
             const piwa::FitRateOptions& fit_opts) {
  if (command == "fit-rate") {
    const piwa::RateFit fit = piwa::cmd_fit_rate(trace_files, fit_opts);
    std::printf("slope = %.6f\nintercept = %.6f\nr_squared = %.6f\npoints = %d (skipped %d)\n",
                fit.slope, fit.intercept, fit.r_squared, fit.points_used,
                fit.points_skipped);
    return 0;
  }

  const piwa::Config cfg = piwa::Config::load(config_path);
  if (command == "run") {
    const auto rows = piwa::cmd_run(cfg);
    for (const auto& r : rows) std::printf("%s\n", r.trace_path.c_str());
  } else if (command == "sweep") {
    const auto rows = piwa::cmd_sweep(cfg);
    std::printf("%zu runs completed\n", rows.size());
  } else if (command == "stability") {
    const piwa::StabilityReport report = piwa::cmd_stability(cfg);
    for (const auto& ar : report.per_alpha) {
      std::printf("alpha=%g mean_param_dev=%.6g max_param_dev=%.6g bound=%.6g\n",
                  ar.alpha, ar.mean_param_dev_avg, ar.max_param_dev_avg, ar.thm_bound);
    }
  } else if (command == "stagewise") {
    const auto outputs = piwa::cmd_stagewise(cfg);
    for (const auto& run : outputs) {
      std::printf("seed=%llu", static_cast<unsigned long long>(run.seed));
      for (double obj : run.result.objective_after_stage) std::printf(" %.6g", obj);
      std::printf("\n");
    }
  } else if (command == "gen-data") {
    std::printf("%s\n", piwa::cmd_gen_data(cfg).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SGD iterate-averaging experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> trace_files;
  piwa::FitRateOptions fit_opts;
  double baseline = std::numeric_limits<double>::quiet_NaN();

  for (const char* name : {"run", "sweep", "stability", "stagewise", "gen-data"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("-c,--config", config_path, "experiment config file")->required();
  }
  CLI::App* fit = app.add_subcommand("fit-rate");
  fit->add_option("traces", trace_files, "trace CSV files")->required();
  fit->add_option("--baseline", baseline, "gap baseline (default: best objective found)");
  fit->add_option("--slack", fit_opts.slack, "slack subtracted from the best-found baseline");
  fit->add_option("--tmin", fit_opts.t_min, "smallest checkpoint iteration to fit");
  fit->add_option("--tmax", fit_opts.t_max, "largest checkpoint iteration to fit");

  CLI11_PARSE(app, argc, argv);
  if (!std::isnan(baseline)) fit_opts.baseline = baseline;

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return dispatch(command, config_path, trace_files, fit_opts);
  } catch (const piwa::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfigError;
  } catch (const piwa::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitDataError;
  } catch (const piwa::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumericError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
