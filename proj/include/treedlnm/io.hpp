#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "treedlnm/core.hpp"
#include "treedlnm/posterior.hpp"
#include "treedlnm/simulation.hpp"

namespace treedlnm {

/// Flat `key = value` configuration. Every key has a documented default; unknown
/// or repeated keys are a ConfigError.
class RunConfig {
 public:
  struct Key {
    std::string name;
    std::string default_value;
    std::string help;
  };
  static const std::vector<Key>& keys();

  RunConfig();
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool is_set(const std::string& key) const { return explicit_.count(key) > 0; }

  const std::string& str(const std::string& key) const;
  double num(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t seed() const;
  bool flag(const std::string& key) const;
  /// Comma-separated pair of numbers.
  std::pair<double, double> range(const std::string& key) const;

  /// All keys with resolved values, one `key = value` per line in a fixed order.
  std::string echo() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

/// Reads `y`, `x_1`..`x_T` and covariate columns (an intercept is prepended).
/// Companion files `<path>.se.csv` or `<path>.draws/<k>.csv` are read for the
/// uncertainty modes. Errors are DataError with row/column coordinates.
Dataset load_dataset(const std::filesystem::path& path, UncertaintyMode mode = UncertaintyMode::None);

UncertaintyMode parse_uncertainty_mode(const std::string& text);

/// Hyperparameters resolved from a config and dataset (x0, c, sigma_x included).
Hyperparameters hyperparameters_from(const RunConfig& cfg, const Dataset& data);
SplitGrid split_grid_from(const RunConfig& cfg, const MatrixXd& X, std::optional<double> x0);

/// Shortest round-trip representation; NaN is written as an empty field.
std::string format_number(double v);

/// Surface draws in long format (draw, t, x_grid, value).
void write_surface_draws(const std::filesystem::path& path, const SurfaceDraws& draws, const std::string& header);
SurfaceDraws read_surface_draws(const std::filesystem::path& path);
void write_surface_summary(const std::filesystem::path& path, const SurfaceSummary& summary,
                           const std::string& header);

struct FitOutputs {
  ChainResult chain;
  SurfaceDraws draws;
  SurfaceSummary summary;
  std::vector<int> windows;
};

/// Runs `fit` and writes surface_draws.csv, surface_summary.csv, windows.csv,
/// params.csv and run_meta.txt into output_dir.
FitOutputs cmd_fit(const RunConfig& cfg);

struct ReplicateRecord {
  int replicate = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsReport metrics;
};

/// Settings for one simulation replicate derived from a config.
ReplicateSettings replicate_settings_from(const RunConfig& cfg);

/// Runs the replicate loop on up to `jobs` threads and writes metrics.csv and
/// run_meta.txt. Throws SamplerError when more than 1% of replicates fail.
std::vector<ReplicateRecord> cmd_simulate(const RunConfig& cfg, int jobs = 1);

struct SummarizeOutputs {
  CumulativeEffect contrast;
  double contrast_from = 0.0;
  double contrast_to = 0.0;
  SurfaceSummary summary;
  std::vector<int> windows;
};

/// Reads a draws file, writes the contrast, windows at the requested level and
/// plot grids (mean, lower, upper as x_grid by week matrices).
SummarizeOutputs cmd_summarize(const RunConfig& cfg);

}  // namespace treedlnm
