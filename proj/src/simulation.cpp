#include "treedlnm/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace treedlnm {

Scenario parse_scenario(const std::string& name) {
  if (name == "A") return Scenario::A;
  if (name == "B") return Scenario::B;
  if (name == "C") return Scenario::C;
  if (name == "D") return Scenario::D;
  throw ConfigError("unknown scenario '" + name + "' (expected A, B, C or D)");
}

std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::A: return "A";
    case Scenario::B: return "B";
    case Scenario::C: return "C";
    case Scenario::D: return "D";
  }
  return "?";
}

namespace {

double logistic_curve(const ScenarioSpec& spec, double x) {
  return spec.amplitude * (1.0 / (1.0 + std::exp(-4.0 * (x - spec.center))) - 0.5);
}

double raised_cosine(const ScenarioSpec& spec, int t) {
  const double d = static_cast<double>(t - spec.peak);
  if (std::abs(d) > spec.half_width) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * d / spec.half_width));
}

}  // namespace

std::vector<int> ScenarioSpec::effect_weeks(int T) const {
  std::vector<int> weeks;
  if (amplitude == 0.0) return weeks;
  for (int t = 1; t <= T; ++t) {
    const bool active = kind == Scenario::D ? raised_cosine(*this, t) > 0.0 : (t >= window_lo && t <= window_hi);
    if (active) weeks.push_back(t);
  }
  return weeks;
}

double true_surface(const ScenarioSpec& spec, double x, int t) {
  const bool in_window = t >= spec.window_lo && t <= spec.window_hi;
  switch (spec.kind) {
    case Scenario::A: return in_window && x > spec.center ? spec.amplitude : 0.0;
    case Scenario::B: return in_window ? spec.amplitude * (x - spec.center) : 0.0;
    case Scenario::C: return in_window ? logistic_curve(spec, x) : 0.0;
    case Scenario::D: return logistic_curve(spec, x) * raised_cosine(spec, t);
  }
  return 0.0;
}

SimulatedExposures gen_exposures(int n, int T, Rng& rng, const ExposureModel& model) {
  if (n < 1 || T < 1) throw std::invalid_argument("gen_exposures: n and T must be positive");
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, model.period);
  SimulatedExposures out;
  out.log_x.resize(n, T);
  out.phase.resize(n);
  const double stationary_sd = model.innovation_sd / std::sqrt(1.0 - model.rho * model.rho);
  for (int i = 0; i < n; ++i) {
    out.phase[i] = unif(rng);
    double e = stationary_sd * normal(rng);
    for (int t = 1; t <= T; ++t) {
      if (t > 1) e = model.rho * e + model.innovation_sd * normal(rng);
      const double season = std::sin(2.0 * std::numbers::pi * (t + out.phase[i]) / model.period);
      out.log_x(i, t - 1) = model.mean + model.seasonal_amplitude * season + e;
    }
  }
  return out;
}

SimulatedData gen_outcomes(const SimulatedExposures& exposures, const ScenarioSpec& spec, Rng& rng,
                           const OutcomeModel& model) {
  const MatrixXd& X = exposures.log_x;
  const int n = static_cast<int>(X.rows()), T = static_cast<int>(X.cols());
  std::vector<int> weeks;
  for (int w : model.season_weeks) {
    if (w >= 1 && w <= T) weeks.push_back(w);
  }
  const int p = 11 + static_cast<int>(weeks.size());

  SimulatedData out;
  out.f = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    for (int t = 1; t <= T; ++t) out.f[i] += true_surface(spec, X(i, t - 1), t);
  }

  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(0.5);
  MatrixXd Z(n, p);
  Z.col(0).setOnes();
  for (int i = 0; i < n; ++i) {
    for (int j = 1; j <= 5; ++j) Z(i, j) = normal(rng);
    for (int j = 6; j <= 10; ++j) Z(i, j) = coin(rng) ? 1.0 : 0.0;
  }
  // Confounder: a season offset from the exposure season, standardized per week.
  for (size_t k = 0; k < weeks.size(); ++k) {
    VectorXd col(n);
    for (int i = 0; i < n; ++i) {
      col[i] = std::sin(2.0 * std::numbers::pi * (weeks[k] + exposures.phase[i] + model.season_phase_shift) / 52.0);
    }
    col.array() -= col.mean();
    const double sd = std::sqrt(sample_variance(col));
    if (sd > 0.0) col /= sd;
    Z.col(11 + static_cast<Eigen::Index>(k)) = col;
  }

  out.gamma = VectorXd::Zero(p);
  for (int j = 1; j <= 10; ++j) out.gamma[j] = normal(rng);
  const double season_sd = std::sqrt(model.season_coef_var);
  for (int j = 11; j < p; ++j) out.gamma[j] = season_sd * normal(rng);
  out.season = Z.rightCols(p - 11) * out.gamma.tail(p - 11);

  const double var_f = sample_variance(out.f);
  out.sigma2 = var_f > 0.0 ? var_f / model.snr : 1.0;
  const double sd = std::sqrt(out.sigma2);
  VectorXd y = out.f + Z * out.gamma;
  for (int i = 0; i < n; ++i) y[i] += sd * normal(rng);

  out.data.y = std::move(y);
  out.data.X = X;
  out.data.Z = std::move(Z);
  return out;
}

TruthGrid truth_on_grid(const ScenarioSpec& spec, const std::vector<double>& grid_x, int T) {
  TruthGrid out{grid_x, T, {}};
  out.values.reserve(grid_x.size() * static_cast<size_t>(T));
  for (double x : grid_x) {
    for (int t = 1; t <= T; ++t) out.values.push_back(true_surface(spec, x, t));
  }
  return out;
}

MetricsReport score(const SurfaceSummary& fitted, const TruthGrid& truth, const std::vector<int>& effect_weeks) {
  if (fitted.grid_x != truth.grid_x || fitted.T != truth.T || truth.values.size() != fitted.mean.size()) {
    throw std::invalid_argument("score: fitted and true surfaces are on different grids");
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  double sq_all = 0.0, sq_eff = 0.0, sq_null = 0.0, covered = 0.0, width = 0.0, hit_eff = 0.0, hit_null = 0.0;
  size_t n_eff = 0, n_null = 0;
  const size_t cells = truth.values.size();
  for (size_t c = 0; c < cells; ++c) {
    const double truth_c = truth.values[c];
    const double err = fitted.mean[c] - truth_c;
    const bool flagged = fitted.lo[c] > 0.0 || fitted.hi[c] < 0.0;
    sq_all += err * err;
    covered += (fitted.lo[c] <= truth_c && truth_c <= fitted.hi[c]) ? 1.0 : 0.0;
    width += fitted.hi[c] - fitted.lo[c];
    if (std::abs(truth_c) > kEffectThreshold) {
      ++n_eff;
      sq_eff += err * err;
      hit_eff += flagged ? 1.0 : 0.0;
    } else {
      ++n_null;
      sq_null += err * err;
      hit_null += flagged ? 1.0 : 0.0;
    }
  }
  MetricsReport r;
  const double nc = static_cast<double>(cells);
  r.rmse_overall = cells ? std::sqrt(sq_all / nc) : nan;
  r.rmse_effect = n_eff ? std::sqrt(sq_eff / static_cast<double>(n_eff)) : nan;
  r.rmse_no_effect = n_null ? std::sqrt(sq_null / static_cast<double>(n_null)) : nan;
  r.coverage = cells ? covered / nc : nan;
  r.ci_width = cells ? width / nc : nan;
  r.tp = n_eff ? hit_eff / static_cast<double>(n_eff) : nan;
  r.fp = n_null ? hit_null / static_cast<double>(n_null) : nan;
  const double denom = r.tp + r.fp;
  r.precision = (std::isfinite(denom) && denom > 0.0) ? r.tp / denom : nan;
  r.flagged_weeks = critical_windows(fitted);
  r.windows_within_truth = std::all_of(r.flagged_weeks.begin(), r.flagged_weeks.end(), [&](int w) {
    return std::find(effect_weeks.begin(), effect_weeks.end(), w) != effect_weeks.end();
  });
  return r;
}

MetricsReport score(const SurfaceSummary& fitted, const ScenarioSpec& spec) {
  return score(fitted, truth_on_grid(spec, fitted.grid_x, fitted.T), spec.effect_weeks(fitted.T));
}

MetricsReport score(const SurfaceDraws& fitted, const ScenarioSpec& spec, double level) {
  return score(evaluate_surface(fitted, level), spec);
}

namespace {

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  double sum = 0.0, sq = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    ++s.count;
    sum += v;
    sq += v * v;
  }
  if (s.count == 0) {
    s.mean = s.se = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.mean = sum / s.count;
  if (s.count > 1) {
    const double var = std::max(0.0, (sq - s.count * s.mean * s.mean) / (s.count - 1));
    s.se = std::sqrt(var / s.count);
  }
  return s;
}

}  // namespace

MetricsAggregate aggregate(const std::vector<MetricsReport>& reports) {
  auto column = [&](auto member) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(static_cast<double>(r.*member));
    return summarize(v);
  };
  MetricsAggregate a;
  a.rmse_overall = column(&MetricsReport::rmse_overall);
  a.rmse_no_effect = column(&MetricsReport::rmse_no_effect);
  a.rmse_effect = column(&MetricsReport::rmse_effect);
  a.coverage = column(&MetricsReport::coverage);
  a.ci_width = column(&MetricsReport::ci_width);
  a.tp = column(&MetricsReport::tp);
  a.fp = column(&MetricsReport::fp);
  a.precision = column(&MetricsReport::precision);
  a.windows_within_truth = column(&MetricsReport::windows_within_truth);
  return a;
}

SimulatedData simulate_dataset(const ReplicateSettings& settings, Rng& rng) {
  const auto exposures = gen_exposures(settings.n, settings.T, rng, settings.exposure);
  return gen_outcomes(exposures, settings.spec, rng, settings.outcome);
}

ReplicateResult run_replicate(const ReplicateSettings& settings, std::uint64_t seed) {
  Rng rng(seed);
  const SimulatedData sim = simulate_dataset(settings, rng);
  const MatrixXd& X = sim.data.X;

  SplitGrid grid =
      settings.quantile_splits
          ? SplitGrid::quantile_spaced(X, settings.n_exposure_splits, settings.split_lo_pct, settings.split_hi_pct)
          : SplitGrid::evenly_spaced(X, settings.n_exposure_splits, settings.split_lo_pct, settings.split_hi_pct);
  if (settings.split_at_center) grid.insert_exposure_split(settings.spec.center, X);
  Hyperparameters hyper = settings.hyper;
  hyper.x0 = settings.spec.center;
  hyper.c = default_covariate_scale(sim.data.y, settings.c_scale);
  if (settings.smooth_half_sd) hyper.sigma_x = half_sd_bandwidth(X);
  hyper.mcmc.seed = seed ^ 0x9E3779B97F4A7C15ULL;

  ReplicateResult out;
  out.chain = run_chain(sim.data, grid, hyper);
  const auto eval_grid = make_eval_grid(X, settings.grid_size, settings.grid_lo_pct, settings.grid_hi_pct, std::nullopt);
  const auto draws = evaluate_draws(out.chain.ensembles, eval_grid, settings.T, hyper.x0, out.chain.kernel);
  out.summary = evaluate_surface(draws, settings.level);
  out.metrics = score(out.summary, settings.spec);
  return out;
}

}  // namespace treedlnm
