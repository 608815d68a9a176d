#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace treedlnm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Outcome, n x T exposure matrix, n x p covariates (intercept column included by
/// the caller) and optional exposure-uncertainty data.
struct Dataset {
  VectorXd y;
  MatrixXd X;
  MatrixXd Z;
  std::optional<MatrixXd> se;      // per-cell standard errors, n x T
  std::vector<MatrixXd> draws;     // K exposure realisations, each n x T

  int n() const { return static_cast<int>(y.size()); }
  int T() const { return static_cast<int>(X.cols()); }
  int p() const { return static_cast<int>(Z.cols()); }
};

/// Candidate split locations. Time cut t means "week <= t" goes left.
struct SplitGrid {
  std::vector<double> exposure_splits;
  std::vector<int> time_splits;

  int s_x() const { return static_cast<int>(exposure_splits.size()); }
  int s_t() const { return static_cast<int>(time_splits.size()); }

  /// `count` evenly spaced exposure values between two percentiles (in percent) of
  /// all exposure cells, plus every time cut 1..T-1. Values that would not lie
  /// strictly inside the observed range are dropped, duplicates removed.
  static SplitGrid evenly_spaced(const MatrixXd& X, int count, double lo_pct, double hi_pct);
  /// Same, with exposure splits at evenly spaced percentiles of the exposures.
  static SplitGrid quantile_spaced(const MatrixXd& X, int count, double lo_pct, double hi_pct);
  static std::vector<int> all_time_cuts(int T);

  /// Adds an exposure split at `value` if it lies strictly inside the range of X
  /// and is not already present. Returns whether it was added.
  bool insert_exposure_split(double value, const MatrixXd& X);
};

enum class Axis { Exposure, Time };

/// Grid-indexed split rule: Exposure j sends x <= exposure_splits[j] left,
/// Time k sends t <= time_splits[k] left.
struct SplitRule {
  Axis axis = Axis::Exposure;
  int index = 0;

  friend bool operator==(const SplitRule&, const SplitRule&) = default;
};

/// Numeric rectangle (x_lo, x_hi] x [t_lo, t_hi]; exposure bounds may be infinite.
struct Rectangle {
  double x_lo = -kInf;
  double x_hi = kInf;
  int t_lo = 1;
  int t_hi = 1;

  bool contains_time(int t) const { return t >= t_lo && t <= t_hi; }
  friend bool operator==(const Rectangle&, const Rectangle&) = default;
};

/// Grid-indexed region. Exposure bin j covers (e_{j-1}, e_j] with e_{-1} = -inf and
/// e_{s_x} = +inf, so bins run 0..s_x. Time bounds are inclusive week indices.
struct Region {
  int x_lo_bin = 0;
  int x_hi_bin = 0;
  int t_lo = 1;
  int t_hi = 1;

  Rectangle rectangle(const SplitGrid& grid) const;
  friend bool operator==(const Region&, const Region&) = default;
};

/// Children of `parent` under `rule`; time rules resolve through `time_cuts`.
std::pair<Region, Region> split_region(const Region& parent, SplitRule rule, const std::vector<int>& time_cuts);

struct TreeNode {
  std::optional<SplitRule> rule;
  int left = -1;
  int right = -1;
  int parent = -1;
  int depth = 0;
  Region region;

  bool terminal() const { return !rule.has_value(); }
};

/// A dichotomous tree over (exposure, time). Terminal nodes are ordered by a
/// left-to-right depth-first walk; `leaf_effects` follows that order.
class Tree {
 public:
  Tree() = default;
  /// Root-only tree covering every exposure bin and weeks 1..T.
  Tree(const SplitGrid& grid, int T);

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }
  int size() const { return static_cast<int>(nodes_.size()); }

  std::vector<int> terminal_nodes() const;
  std::vector<int> internal_nodes() const;
  /// Internal nodes whose two children are both terminal.
  std::vector<int> nog_nodes() const;
  int num_leaves() const { return static_cast<int>(terminal_nodes().size()); }

  /// Intersection of the ancestor half-spaces of a terminal node, recomputed by
  /// walking up from the node. Throws std::out_of_range for a non-terminal id.
  Region derive_region(int leaf_id) const;

  Tree grown(int leaf_id, SplitRule rule) const;
  Tree pruned(int node_id) const;
  /// Replaces the rule at an internal node and re-derives every descendant region.
  /// Descendant rules are kept as-is even if they fall outside the new region;
  /// the caller decides whether the result is admissible (see `structurally_valid`).
  Tree changed(int node_id, SplitRule rule) const;

  /// Every internal rule cuts strictly inside its node's region.
  bool structurally_valid() const;
  /// Whether `rule` cuts strictly inside `region`.
  bool rule_inside(const Region& region, SplitRule rule) const;

  VectorXd leaf_effects;
  double tau2 = 1.0;
  double s_tau = 1.0;

 private:
  void recompute_regions(int id);
  void split_region(const Region& parent, SplitRule rule, Region& left, Region& right) const;

  std::vector<TreeNode> nodes_;
  // Time rules resolve to cut values through the grid they were built on.
  std::shared_ptr<const std::vector<int>> time_cuts_;
};

enum class UncertaintyMode { None, PerCellSE, EmpiricalCdf };

struct MoveProbs {
  double grow = 0.3;
  double prune = 0.3;
  double change = 0.4;
};

struct McmcSettings {
  int burn_in = 5000;
  int iterations = 15000;
  int thin = 10;
  std::uint64_t seed = 1;
};

struct Hyperparameters {
  int n_trees = 20;
  double alpha = 0.95;
  double beta = 2.0;
  double c = 1e4;         // covariate prior scale; see default_covariate_scale
  double sigma_x = 0.0;   // 0 => hard partitions
  MoveProbs move_probs;
  double x0 = 0.0;
  McmcSettings mcmc;
  UncertaintyMode uncertainty = UncertaintyMode::None;
  std::optional<int> max_depth;
  bool update_variances = true;  // false holds sigma2, omega2, tau2 fixed (diagnostics)
};

/// c = scale * var(y).
double default_covariate_scale(const VectorXd& y, double scale = 1e4);
/// Half the standard deviation of all exposure cells.
double half_sd_bandwidth(const MatrixXd& X);

double sample_variance(const VectorXd& v);
/// Linear-interpolation percentile (pct in [0, 100]) of all values.
double percentile(std::vector<double> values, double pct);

/// Checks every structural invariant of the inputs; returns all violations.
std::vector<std::string> validate(const Dataset& data, const SplitGrid& grid, const Hyperparameters& hyper);

struct ModelState {
  std::vector<Tree> trees;
  double sigma2 = 1.0;
  double s_sigma = 1.0;
  double omega2 = 1.0;
  double s_omega = 1.0;
  VectorXd gamma;
  VectorXd fit;
};

}  // namespace treedlnm
