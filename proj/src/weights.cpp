#include "treedlnm/weights.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace treedlnm {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double hard_weight(double x, const Rectangle& region, int t) {
  return (region.contains_time(t) && x > region.x_lo && x <= region.x_hi) ? 1.0 : 0.0;
}

double psi_weight(double x, const Rectangle& region, int t, double sigma_x) {
  if (!region.contains_time(t)) return 0.0;
  return normal_cdf((region.x_hi - x) / sigma_x) - normal_cdf((region.x_lo - x) / sigma_x);
}

double uncertainty_weight(double x, double se, const Rectangle& region, int t) {
  if (!(se > 0.0)) throw DataError("exposure standard error must be positive");
  return psi_weight(x, region, t, se);
}

double ecdf_weight(std::span<const double> draws, const Rectangle& region, int t) {
  if (draws.empty()) throw DataError("empirical-CDF weight needs at least one exposure draw");
  if (!region.contains_time(t)) return 0.0;
  const auto inside = std::count_if(draws.begin(), draws.end(),
                                    [&](double d) { return d > region.x_lo && d <= region.x_hi; });
  return static_cast<double>(inside) / static_cast<double>(draws.size());
}

Weighting Weighting::from(const Hyperparameters& hyper) {
  switch (hyper.uncertainty) {
    case UncertaintyMode::PerCellSE:
      return {Kind::PerCellSE, hyper.sigma_x};
    case UncertaintyMode::EmpiricalCdf:
      return {Kind::EmpiricalCdf, hyper.sigma_x};
    case UncertaintyMode::None:
      break;
  }
  return hyper.sigma_x > 0.0 ? Weighting{Kind::Smooth, hyper.sigma_x} : Weighting{Kind::Hard, 0.0};
}

double ExposureKernel::share(double x, double x_lo, double x_hi) const {
  if (sigma_x > 0.0) return normal_cdf((x_hi - x) / sigma_x) - normal_cdf((x_lo - x) / sigma_x);
  return (x > x_lo && x <= x_hi) ? 1.0 : 0.0;
}

double cell_weight(const Dataset& data, const Weighting& weighting, int i, int t, const Rectangle& region) {
  const double x = data.X(i, t - 1);
  switch (weighting.kind) {
    case Weighting::Kind::Hard:
      return hard_weight(x, region, t);
    case Weighting::Kind::Smooth:
      return psi_weight(x, region, t, weighting.sigma_x);
    case Weighting::Kind::PerCellSE:
      return uncertainty_weight(x, (*data.se)(i, t - 1), region, t);
    case Weighting::Kind::EmpiricalCdf: {
      std::vector<double> draws;
      draws.reserve(data.draws.size());
      for (const auto& d : data.draws) draws.push_back(d(i, t - 1));
      return ecdf_weight(draws, region, t);
    }
  }
  return 0.0;
}

VectorXd leaf_design_row(const Dataset& data, const SplitGrid& grid, const Weighting& weighting, int i,
                         const Tree& tree) {
  const auto leaves = tree.terminal_nodes();
  VectorXd row = VectorXd::Zero(static_cast<Eigen::Index>(leaves.size()));
  for (size_t b = 0; b < leaves.size(); ++b) {
    const Rectangle rect = tree.node(leaves[b]).region.rectangle(grid);
    for (int t = rect.t_lo; t <= rect.t_hi; ++t) {
      row[static_cast<Eigen::Index>(b)] += cell_weight(data, weighting, i, t, rect);
    }
  }
  return row;
}

// ---------------------------------------------------------------------------

PrefixTable::PrefixTable(const Dataset& data, const SplitGrid& grid, const Weighting& weighting)
    : n_(data.n()), T_(data.T()), s_x_(grid.s_x()), stride_((data.T() + 1) * (grid.s_x() + 2)) {
  const auto& splits = grid.exposure_splits;
  cum_.assign(static_cast<size_t>(n_) * stride_, 0.0);
  const int K = s_x_ + 2;
  std::vector<double> cell(static_cast<size_t>(K));
  std::vector<double> sorted_draws;

  for (int i = 0; i < n_; ++i) {
    double* base = cum_.data() + static_cast<size_t>(i) * stride_;
    for (int t = 1; t <= T_; ++t) {
      // cell[k]: mass of (i, t) with exposure <= split k-1; cell[0] = 0, cell[K-1] = 1.
      const double x = data.X(i, t - 1);
      cell[0] = 0.0;
      cell[static_cast<size_t>(K - 1)] = 1.0;
      switch (weighting.kind) {
        case Weighting::Kind::Hard:
          for (int k = 1; k < K - 1; ++k) cell[static_cast<size_t>(k)] = x <= splits[static_cast<size_t>(k - 1)] ? 1.0 : 0.0;
          break;
        case Weighting::Kind::Smooth:
        case Weighting::Kind::PerCellSE: {
          const double sd = weighting.kind == Weighting::Kind::Smooth ? weighting.sigma_x : (*data.se)(i, t - 1);
          if (!(sd > 0.0)) throw DataError("kernel bandwidth must be positive at cell (" + std::to_string(i + 1) + ", " + std::to_string(t) + ")");
          for (int k = 1; k < K - 1; ++k) cell[static_cast<size_t>(k)] = normal_cdf((splits[static_cast<size_t>(k - 1)] - x) / sd);
          break;
        }
        case Weighting::Kind::EmpiricalCdf: {
          sorted_draws.clear();
          for (const auto& d : data.draws) sorted_draws.push_back(d(i, t - 1));
          if (sorted_draws.empty()) throw DataError("empirical-CDF weighting needs exposure draws");
          std::sort(sorted_draws.begin(), sorted_draws.end());
          const double K_draws = static_cast<double>(sorted_draws.size());
          for (int k = 1; k < K - 1; ++k) {
            const auto below = std::upper_bound(sorted_draws.begin(), sorted_draws.end(), splits[static_cast<size_t>(k - 1)]);
            cell[static_cast<size_t>(k)] = static_cast<double>(below - sorted_draws.begin()) / K_draws;
          }
          break;
        }
      }
      const double* prev = base + flat_index(t - 1, 0);
      double* cur = base + flat_index(t, 0);
      for (int k = 0; k < K; ++k) cur[k] = prev[k] + cell[static_cast<size_t>(k)];
    }
  }

  total_.assign(static_cast<size_t>(stride_), 0.0);
  for (int i = 0; i < n_; ++i) {
    const double* base = cum_.data() + static_cast<size_t>(i) * stride_;
    for (int c = 0; c < stride_; ++c) total_[static_cast<size_t>(c)] += base[c];
  }
}

void PrefixTable::check(const Region& r) const {
  if (r.x_lo_bin < 0 || r.x_hi_bin > s_x_ || r.x_lo_bin > r.x_hi_bin || r.t_lo < 1 || r.t_hi > T_ || r.t_lo > r.t_hi) {
    throw std::out_of_range("rectangle query: region not on the split grid");
  }
}

std::array<PrefixTable::Corner, 4> PrefixTable::corners(const Region& r) const {
  check(r);
  const int hi = r.x_hi_bin + 1;
  const int lo = r.x_lo_bin;
  return {Corner{flat_index(r.t_hi, hi), 1.0}, Corner{flat_index(r.t_hi, lo), -1.0},
          Corner{flat_index(r.t_lo - 1, hi), -1.0}, Corner{flat_index(r.t_lo - 1, lo), 1.0}};
}

double PrefixTable::query(int i, const Region& region) const {
  if (i < 0 || i >= n_) throw std::out_of_range("rectangle query: observation index out of range");
  const auto c = corners(region);
  const double* base = cum_.data() + static_cast<size_t>(i) * stride_;
  return (base[c[0].column] - base[c[1].column]) - (base[c[2].column] - base[c[3].column]);
}

double PrefixTable::total_mass(const Region& region) const {
  const auto c = corners(region);
  return (total_[static_cast<size_t>(c[0].column)] - total_[static_cast<size_t>(c[1].column)]) -
         (total_[static_cast<size_t>(c[2].column)] - total_[static_cast<size_t>(c[3].column)]);
}

void PrefixTable::fill_column(const Region& region, Eigen::Ref<VectorXd> out) const {
  const auto c = corners(region);
  const double* base = cum_.data();
  for (int i = 0; i < n_; ++i, base += stride_) {
    out[i] = (base[c[0].column] - base[c[1].column]) - (base[c[2].column] - base[c[3].column]);
  }
}

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> PrefixTable::matrix() const {
  return {cum_.data(), n_, stride_};
}

}  // namespace treedlnm
