#pragma once

#include <vector>

#include "treedlnm/core.hpp"
#include "treedlnm/weights.hpp"

namespace treedlnm {

/// One tree's contribution w_a(x, t) - w_a(x0, t), stored as its terminal
/// rectangles, leaf effects, and the per-week reference offset w_a(x0, t).
struct CenteredTree {
  std::vector<Rectangle> leaves;
  std::vector<double> mu;
  std::vector<double> offset;  // index t - 1

  double value(double x, int t, const ExposureKernel& kernel) const;
};

CenteredTree center_tree(const Tree& tree, const SplitGrid& grid, int T, double x0, const ExposureKernel& kernel);

using EnsembleDraw = std::vector<CenteredTree>;

/// Posterior draws of the centered surface on an exposure grid x all weeks.
struct SurfaceDraws {
  std::vector<double> grid_x;
  int T = 0;
  double x0 = 0.0;
  int n_draws = 0;
  std::vector<double> values;  // ((draw * |grid_x|) + g) * T + (t - 1)

  int grid_size() const { return static_cast<int>(grid_x.size()); }
  double at(int draw, int g, int t) const {
    return values[(static_cast<size_t>(draw) * grid_x.size() + static_cast<size_t>(g)) * static_cast<size_t>(T) +
                  static_cast<size_t>(t - 1)];
  }
  double& at(int draw, int g, int t) {
    return values[(static_cast<size_t>(draw) * grid_x.size() + static_cast<size_t>(g)) * static_cast<size_t>(T) +
                  static_cast<size_t>(t - 1)];
  }
};

SurfaceDraws evaluate_draws(const std::vector<EnsembleDraw>& ensembles, const std::vector<double>& grid_x, int T,
                            double x0, const ExposureKernel& kernel);

/// Pointwise posterior mean and equal-tailed interval, indexed g * T + (t - 1).
struct SurfaceSummary {
  std::vector<double> grid_x;
  int T = 0;
  double level = 0.95;
  std::vector<double> mean;
  std::vector<double> lo;
  std::vector<double> hi;

  size_t index(int g, int t) const { return static_cast<size_t>(g) * static_cast<size_t>(T) + static_cast<size_t>(t - 1); }
};

/// Quantile of sorted data by linear interpolation of order statistics.
double quantile_sorted(const std::vector<double>& sorted, double prob);

/// Throws std::invalid_argument when there are no draws.
SurfaceSummary evaluate_surface(const SurfaceDraws& draws, double level = 0.95);

/// Weeks (1-based, ascending) with some grid cell whose interval excludes zero.
std::vector<int> critical_windows(const SurfaceSummary& summary);
std::vector<int> critical_windows(const SurfaceDraws& draws, double level = 0.95);

struct CumulativeEffect {
  std::vector<double> per_draw;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Per-draw sum over weeks of w(x_to, t) - w(x_from, t). Exposures between grid
/// points are linearly interpolated; outside the grid is an error.
CumulativeEffect cumulative_effect(const SurfaceDraws& draws, double x_from, double x_to, double level = 0.95);

/// `size` evenly spaced values between two exposure percentiles; `x0` is merged in
/// when `include_x0` is set.
std::vector<double> make_eval_grid(const MatrixXd& X, int size, double lo_pct, double hi_pct,
                                   std::optional<double> include_x0);

}  // namespace treedlnm
