#include "treedlnm/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace treedlnm {

double CenteredTree::value(double x, int t, const ExposureKernel& kernel) const {
  double w = 0.0;
  for (size_t b = 0; b < leaves.size(); ++b) {
    if (leaves[b].contains_time(t)) w += mu[b] * kernel.share(x, leaves[b].x_lo, leaves[b].x_hi);
  }
  return w - offset[static_cast<size_t>(t - 1)];
}

CenteredTree center_tree(const Tree& tree, const SplitGrid& grid, int T, double x0, const ExposureKernel& kernel) {
  CenteredTree out;
  const auto leaves = tree.terminal_nodes();
  out.offset.assign(static_cast<size_t>(T), 0.0);
  for (size_t b = 0; b < leaves.size(); ++b) {
    const Rectangle rect = tree.node(leaves[b]).region.rectangle(grid);
    const double mu = tree.leaf_effects[static_cast<Eigen::Index>(b)];
    out.leaves.push_back(rect);
    out.mu.push_back(mu);
    const double share = kernel.share(x0, rect.x_lo, rect.x_hi);
    for (int t = rect.t_lo; t <= rect.t_hi; ++t) out.offset[static_cast<size_t>(t - 1)] += mu * share;
  }
  return out;
}

SurfaceDraws evaluate_draws(const std::vector<EnsembleDraw>& ensembles, const std::vector<double>& grid_x, int T,
                            double x0, const ExposureKernel& kernel) {
  SurfaceDraws out;
  out.grid_x = grid_x;
  out.T = T;
  out.x0 = x0;
  out.n_draws = static_cast<int>(ensembles.size());
  const size_t G = grid_x.size();
  out.values.assign(ensembles.size() * G * static_cast<size_t>(T), 0.0);
  std::vector<double> share(G);
  for (size_t d = 0; d < ensembles.size(); ++d) {
    double* surface = out.values.data() + d * G * static_cast<size_t>(T);
    for (const auto& tree : ensembles[d]) {
      for (size_t b = 0; b < tree.leaves.size(); ++b) {
        const auto& rect = tree.leaves[b];
        for (size_t g = 0; g < G; ++g) share[g] = tree.mu[b] * kernel.share(grid_x[g], rect.x_lo, rect.x_hi);
        for (size_t g = 0; g < G; ++g) {
          double* row = surface + g * static_cast<size_t>(T);
          for (int t = rect.t_lo; t <= rect.t_hi; ++t) row[t - 1] += share[g];
        }
      }
      for (size_t g = 0; g < G; ++g) {
        double* row = surface + g * static_cast<size_t>(T);
        for (int t = 0; t < T; ++t) row[t] -= tree.offset[static_cast<size_t>(t)];
      }
    }
  }
  return out;
}

double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<size_t>(std::floor(h));
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

SurfaceSummary evaluate_surface(const SurfaceDraws& draws, double level) {
  if (draws.n_draws < 1) throw std::invalid_argument("evaluate_surface: no posterior draws");
  SurfaceSummary out;
  out.grid_x = draws.grid_x;
  out.T = draws.T;
  out.level = level;
  const size_t cells = draws.grid_x.size() * static_cast<size_t>(draws.T);
  out.mean.assign(cells, 0.0);
  out.lo.assign(cells, 0.0);
  out.hi.assign(cells, 0.0);
  const double tail = 0.5 * (1.0 - level);
  std::vector<double> column(static_cast<size_t>(draws.n_draws));
  for (size_t c = 0; c < cells; ++c) {
    double sum = 0.0;
    for (int d = 0; d < draws.n_draws; ++d) {
      column[static_cast<size_t>(d)] = draws.values[static_cast<size_t>(d) * cells + c];
      sum += column[static_cast<size_t>(d)];
    }
    out.mean[c] = sum / draws.n_draws;
    std::sort(column.begin(), column.end());
    out.lo[c] = quantile_sorted(column, tail);
    out.hi[c] = quantile_sorted(column, 1.0 - tail);
  }
  return out;
}

std::vector<int> critical_windows(const SurfaceSummary& summary) {
  std::vector<int> weeks;
  for (int t = 1; t <= summary.T; ++t) {
    for (size_t g = 0; g < summary.grid_x.size(); ++g) {
      const size_t c = summary.index(static_cast<int>(g), t);
      if (summary.lo[c] > 0.0 || summary.hi[c] < 0.0) {
        weeks.push_back(t);
        break;
      }
    }
  }
  return weeks;
}

std::vector<int> critical_windows(const SurfaceDraws& draws, double level) {
  return critical_windows(evaluate_surface(draws, level));
}

namespace {

// Column position of x on the grid: (lower index, interpolation weight on upper).
std::pair<size_t, double> locate(const std::vector<double>& grid, double x) {
  if (grid.empty()) throw std::invalid_argument("cumulative_effect: empty exposure grid");
  const auto it = std::lower_bound(grid.begin(), grid.end(), x);
  if (it != grid.end() && *it == x) return {static_cast<size_t>(it - grid.begin()), 0.0};
  if (it == grid.begin() || it == grid.end()) {
    throw std::invalid_argument("cumulative_effect: exposure " + std::to_string(x) + " outside the evaluated grid");
  }
  const size_t hi = static_cast<size_t>(it - grid.begin());
  const double w = (x - grid[hi - 1]) / (grid[hi] - grid[hi - 1]);
  return {hi - 1, w};
}

}  // namespace

CumulativeEffect cumulative_effect(const SurfaceDraws& draws, double x_from, double x_to, double level) {
  const auto [g_from, w_from] = locate(draws.grid_x, x_from);
  const auto [g_to, w_to] = locate(draws.grid_x, x_to);
  auto value = [&](int d, size_t g, double w, int t) {
    const double lo = draws.at(d, static_cast<int>(g), t);
    return w == 0.0 ? lo : (1.0 - w) * lo + w * draws.at(d, static_cast<int>(g + 1), t);
  };
  CumulativeEffect out;
  out.per_draw.resize(static_cast<size_t>(draws.n_draws));
  for (int d = 0; d < draws.n_draws; ++d) {
    double sum = 0.0;
    for (int t = 1; t <= draws.T; ++t) sum += value(d, g_to, w_to, t) - value(d, g_from, w_from, t);
    out.per_draw[static_cast<size_t>(d)] = sum;
  }
  if (out.per_draw.empty()) return out;
  double total = 0.0;
  for (double v : out.per_draw) total += v;
  out.mean = total / static_cast<double>(out.per_draw.size());
  auto sorted = out.per_draw;
  std::sort(sorted.begin(), sorted.end());
  const double tail = 0.5 * (1.0 - level);
  out.lo = quantile_sorted(sorted, tail);
  out.hi = quantile_sorted(sorted, 1.0 - tail);
  return out;
}

std::vector<double> make_eval_grid(const MatrixXd& X, int size, double lo_pct, double hi_pct,
                                   std::optional<double> include_x0) {
  std::vector<double> values(X.data(), X.data() + X.size());
  const double lo = percentile(values, lo_pct);
  const double hi = percentile(values, hi_pct);
  std::vector<double> grid;
  for (int g = 0; g < size; ++g) grid.push_back(size == 1 ? lo : lo + (hi - lo) * g / (size - 1.0));
  if (include_x0) grid.push_back(*include_x0);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

}  // namespace treedlnm
