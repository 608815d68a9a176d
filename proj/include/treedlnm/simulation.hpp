#pragma once

#include <string>
#include <vector>

#include "treedlnm/core.hpp"
#include "treedlnm/posterior.hpp"
#include "treedlnm/sampler.hpp"

namespace treedlnm {

enum class Scenario { A, B, C, D };

Scenario parse_scenario(const std::string& name);
std::string scenario_name(Scenario s);

/// True exposure-time surface on the log-exposure scale. Every scenario vanishes at
/// x = center.
struct ScenarioSpec {
  Scenario kind = Scenario::A;
  double amplitude = 1.0;
  int window_lo = 11;  // A-C
  int window_hi = 15;
  int peak = 13;       // D
  int half_width = 5;
  double center = 1.0;

  /// Weeks where the truth is nonzero for some exposure.
  std::vector<int> effect_weeks(int T) const;
};

double true_surface(const ScenarioSpec& spec, double x, int t);

/// AR(1)-plus-season log-exposure generator.
struct ExposureModel {
  double mean = 1.9;
  double seasonal_amplitude = 0.3;
  double period = 52.0;
  double rho = 0.8;
  double innovation_sd = 0.2035;  // gives a marginal sd close to 0.4
};

struct SimulatedExposures {
  MatrixXd log_x;     // n x T
  VectorXd phase;     // per-observation season offset in weeks, [0, period)

  MatrixXd exposures() const { return log_x.array().exp().matrix(); }
};

SimulatedExposures gen_exposures(int n, int T, Rng& rng, const ExposureModel& model = {});

struct OutcomeModel {
  double snr = 1e-3;                          // Var[f] / sigma^2
  std::vector<int> season_weeks{5, 10, 15, 20, 25, 30, 35};
  double season_coef_var = 0.04;
  double season_phase_shift = 8.0;            // weeks between exposure and confounder seasons
};

struct SimulatedData {
  Dataset data;          // X on the log scale; Z = [1, 5 normal, 5 binary, season columns]
  VectorXd f;            // true distributed-lag signal
  VectorXd gamma;        // true covariate coefficients (intercept 0)
  VectorXd season;       // seasonal confounder contribution
  double sigma2 = 1.0;
};

/// Outcomes for a generated exposure block. sigma^2 = Var[f] / snr (empirical),
/// or 1 when the signal is constant.
SimulatedData gen_outcomes(const SimulatedExposures& exposures, const ScenarioSpec& spec, Rng& rng,
                           const OutcomeModel& model = {});

/// Truth evaluated on the cells of a summary grid.
struct TruthGrid {
  std::vector<double> grid_x;
  int T = 0;
  std::vector<double> values;  // g * T + (t - 1)
};

TruthGrid truth_on_grid(const ScenarioSpec& spec, const std::vector<double>& grid_x, int T);

inline constexpr double kEffectThreshold = 0.005;

struct MetricsReport {
  double rmse_overall = 0.0;
  double rmse_no_effect = 0.0;
  double rmse_effect = 0.0;
  double coverage = 0.0;
  double ci_width = 0.0;
  double tp = 0.0;         // NaN without effect cells
  double fp = 0.0;         // NaN without no-effect cells
  double precision = 0.0;  // NaN when tp + fp is 0 or undefined
  std::vector<int> flagged_weeks;
  bool windows_within_truth = true;
};

/// Throws std::invalid_argument when the grids differ.
MetricsReport score(const SurfaceSummary& fitted, const TruthGrid& truth, const std::vector<int>& effect_weeks);
MetricsReport score(const SurfaceSummary& fitted, const ScenarioSpec& spec);
MetricsReport score(const SurfaceDraws& fitted, const ScenarioSpec& spec, double level = 0.95);

/// Mean and standard error of each metric over replicates, skipping NaN.
struct MetricSummary {
  double mean = 0.0;
  double se = 0.0;
  int count = 0;
};

struct MetricsAggregate {
  MetricSummary rmse_overall, rmse_no_effect, rmse_effect, coverage, ci_width, tp, fp, precision, windows_within_truth;
};

MetricsAggregate aggregate(const std::vector<MetricsReport>& reports);

/// Everything needed to run one generate-fit-score replicate.
struct ReplicateSettings {
  ScenarioSpec spec;
  ExposureModel exposure;
  OutcomeModel outcome;
  int n = 1000;
  int T = 37;
  Hyperparameters hyper;             // x0, c, sigma_x and mcmc.seed are set per replicate
  double c_scale = 1e4;              // c = c_scale * var(y)
  bool smooth_half_sd = false;       // sigma_x = half the exposure sd
  int n_exposure_splits = 30;
  double split_lo_pct = 0.01;
  double split_hi_pct = 99.9;
  bool quantile_splits = false;
  bool split_at_center = true;       // candidate exposure split at the centering value
  int grid_size = 100;
  double grid_lo_pct = 0.5;
  double grid_hi_pct = 99.5;
  double level = 0.95;
};

struct ReplicateResult {
  MetricsReport metrics;
  ChainResult chain;
  SurfaceSummary summary;
};

/// Generates data from `seed`, fits with a chain seed derived from it and scores
/// the surface.
ReplicateResult run_replicate(const ReplicateSettings& settings, std::uint64_t seed);

/// Generates only the dataset for a replicate seed.
SimulatedData simulate_dataset(const ReplicateSettings& settings, Rng& rng);

}  // namespace treedlnm
