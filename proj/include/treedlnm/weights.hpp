#pragma once

#include <array>
#include <span>
#include <vector>

#include "treedlnm/core.hpp"

namespace treedlnm {

/// Standard normal CDF via erfc (accurate to a few ulp over the whole line).
double normal_cdf(double z);

/// 1 iff x in (x_lo, x_hi] and t in [t_lo, t_hi].
double hard_weight(double x, const Rectangle& region, int t);

/// Gaussian-kernel share of exposure x falling in the region's exposure interval,
/// times the time indicator. Requires sigma_x > 0.
double psi_weight(double x, const Rectangle& region, int t, double sigma_x);

/// psi_weight with a per-cell standard error. Throws DataError if se <= 0.
double uncertainty_weight(double x, double se, const Rectangle& region, int t);

/// Fraction of exposure draws in (x_lo, x_hi], times the time indicator.
/// Throws DataError on an empty draw set.
double ecdf_weight(std::span<const double> draws, const Rectangle& region, int t);

/// How observed exposures are spread over terminal nodes.
struct Weighting {
  enum class Kind { Hard, Smooth, PerCellSE, EmpiricalCdf };
  Kind kind = Kind::Hard;
  double sigma_x = 0.0;

  static Weighting from(const Hyperparameters& hyper);
};

/// Exposure kernel used to evaluate a fitted surface at arbitrary exposure values
/// (hard indicator when sigma_x == 0).
struct ExposureKernel {
  double sigma_x = 0.0;

  double share(double x, double x_lo, double x_hi) const;
};

/// Weight of cell (i, t) in a rectangle, computed directly from the data.
double cell_weight(const Dataset& data, const Weighting& weighting, int i, int t, const Rectangle& region);

/// Naive design row: entry b = sum over t of the cell weight in terminal node b.
VectorXd leaf_design_row(const Dataset& data, const SplitGrid& grid, const Weighting& weighting, int i,
                         const Tree& tree);

/// Per-observation 2-D cumulative mass over (week, exposure bin), giving O(1)
/// rectangle queries. Cell (t, k) holds the mass of weeks 1..t with exposure at or
/// below split k-1 (k = 0 is empty, k = s_x + 1 is everything).
class PrefixTable {
 public:
  PrefixTable(const Dataset& data, const SplitGrid& grid, const Weighting& weighting);

  int n() const { return n_; }
  int T() const { return T_; }
  int s_x() const { return s_x_; }
  /// Columns per observation in the flattened layout: (T + 1) * (s_x + 2).
  int stride() const { return stride_; }
  int flat_index(int t, int k) const { return t * (s_x_ + 2) + k; }

  double cum(int i, int t, int k) const { return cum_[static_cast<size_t>(i) * stride_ + flat_index(t, k)]; }

  /// Mass of observation i inside a grid-aligned region. Throws std::out_of_range
  /// for bounds that are not on the grid.
  double query(int i, const Region& region) const;
  /// Mass summed over all observations.
  double total_mass(const Region& region) const;

  /// The four (flat column, sign) corners combined by a rectangle query.
  struct Corner {
    int column;
    double sign;
  };
  std::array<Corner, 4> corners(const Region& region) const;

  /// Row-major n x stride view of the cumulative table.
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> matrix() const;

  /// Fills column b of `out` (n rows) with the per-observation mass of `region`.
  void fill_column(const Region& region, Eigen::Ref<VectorXd> out) const;

 private:
  void check(const Region& region) const;

  int n_ = 0;
  int T_ = 0;
  int s_x_ = 0;
  int stride_ = 0;
  std::vector<double> cum_;
  std::vector<double> total_;
};

}  // namespace treedlnm
