#pragma once

#include <array>
#include <random>
#include <vector>

#include "treedlnm/core.hpp"
#include "treedlnm/posterior.hpp"
#include "treedlnm/weights.hpp"

namespace treedlnm {

using Rng = std::mt19937_64;

/// alpha * (1 + depth)^-beta.
double p_split(int depth, double alpha, double beta);

struct RuleChoice {
  SplitRule rule;
  double prob = 0.0;
};

/// Tree-generating prior: node split probabilities plus the split-rule prior that
/// puts half its mass on each axis at the root (1/(2 s_x) per exposure split,
/// 1/(2 s_t) per time split) and renormalises over the rules still available
/// deeper in the tree. A rule is available when it cuts strictly inside the node
/// and leaves data mass on both sides.
class TreePrior {
 public:
  TreePrior(const SplitGrid& grid, const PrefixTable& table, const Hyperparameters& hyper, double empty_threshold);

  std::vector<RuleChoice> rule_prior(const Region& region, int depth) const;
  /// Probability that a node splits; zero when it has no available rule.
  double split_probability(const Region& region, int depth) const;
  /// Full log prior of a tree structure, -inf if some rule is unavailable.
  double log_prior(const Tree& tree) const;
  bool nonempty(const Region& region) const { return table_->total_mass(region) > empty_threshold_; }

 private:
  const SplitGrid* grid_;
  const PrefixTable* table_;
  double alpha_;
  double beta_;
  std::optional<int> max_depth_;
  double empty_threshold_;
};

/// Metric left after integrating out gamma ~ N(0, sigma^2 c I):
/// M = I - Z (Z'Z + I/c)^-1 Z' = I - W'W with W = L^-1 Z' and LL' = Z'Z + I/c.
class ProjectedMetric {
 public:
  ProjectedMetric(const MatrixXd& Z, double c);

  const MatrixXd& W() const { return W_; }
  const Eigen::LLT<MatrixXd>& chol() const { return chol_; }
  double c() const { return c_; }
  int p() const { return static_cast<int>(W_.rows()); }
  /// log det M.
  double log_det() const { return log_det_; }
  VectorXd apply(const VectorXd& v) const { return v - W_.transpose() * (W_ * v); }

 private:
  double c_;
  Eigen::LLT<MatrixXd> chol_;
  MatrixXd W_;
  double log_det_;
};

/// Design quantities for one tree: U (n x B), W U (p x B) and G = U' M U.
struct TreeDesign {
  MatrixXd U;
  MatrixXd WU;
  MatrixXd G;
};

/// Builds tree designs from the prefix table. W U comes from W applied to the
/// cumulative table once, so each design costs O(n B + n B^2).
class DesignBuilder {
 public:
  DesignBuilder(const PrefixTable& table, const ProjectedMetric& metric);

  TreeDesign build(const Tree& tree) const;

 private:
  const PrefixTable* table_;
  MatrixXd projected_;  // p x stride
};

/// Partial residual R and its projection W R.
struct Residual {
  VectorXd r;
  VectorXd wr;
};

/// log N(R; 0, sigma2 (M^-1 + v U U')) with leaf effects integrated out.
double log_marginal(const TreeDesign& design, const Residual& resid, double sigma2, double leaf_var,
                    const ProjectedMetric& metric);
/// The part of log_marginal that depends on the tree.
double log_marginal_tree_terms(const TreeDesign& design, const Residual& resid, double sigma2, double leaf_var);

/// Draws leaf effects from N(V b, sigma2 V), V = (G + I/v)^-1, b = U' M R.
VectorXd draw_leaf_effects(const TreeDesign& design, const Residual& resid, double sigma2, double leaf_var, Rng& rng);

/// scale / Gamma(shape, 1). Throws SamplerError on a non-positive scale.
double draw_inverse_gamma(double shape, double scale, Rng& rng);

/// Inverse-gamma full conditional IG(shape, scale).
struct InvGammaParams {
  double shape = 0.0;
  double scale = 0.0;
};

/// tau_a^2 | mu_a, s_tau, sigma2, omega2.
InvGammaParams tau2_conditional(const VectorXd& mu, double s_tau, double sigma2, double omega2);
/// omega2 | all leaf effects, tau, s_omega, sigma2.
InvGammaParams omega2_conditional(const std::vector<Tree>& trees, double s_omega, double sigma2);
/// sigma2 | residuals, leaf effects, gamma, s_sigma, given the state's fit.
InvGammaParams sigma2_conditional(const Dataset& data, const ModelState& state, double c);
/// Auxiliary s | r2 ~ IG(1, 1 + 1/r2).
InvGammaParams auxiliary_conditional(double r2);
/// Posterior mean of gamma given y - f: (Z'Z + I/c)^-1 Z'(y - f).
VectorXd conditional_gamma_mean(const ProjectedMetric& metric, const VectorXd& y_minus_f);

enum class MoveKind { Grow = 0, Prune = 1, Change = 2 };

struct MoveProposal {
  MoveKind kind = MoveKind::Grow;
  Tree tree;
  double log_prior_ratio = 0.0;
  double log_proposal_ratio = 0.0;
};

struct MoveStats {
  std::array<long, 3> proposed{};
  std::array<long, 3> accepted{};

  double rate(MoveKind k) const {
    const auto i = static_cast<size_t>(k);
    return proposed[i] == 0 ? 0.0 : static_cast<double>(accepted[i]) / static_cast<double>(proposed[i]);
  }
};

/// One MCMC chain. Owns its state exclusively.
class Sampler {
 public:
  Sampler(const Dataset& data, const SplitGrid& grid, const Hyperparameters& hyper);
  Sampler(const Sampler&) = delete;
  Sampler& operator=(const Sampler&) = delete;

  /// Full backfitting sweep: every tree (MH move, leaf effects, tau), then gamma,
  /// sigma2, omega2 and their auxiliaries.
  void sweep();

  /// MH move for tree a against residual `resid`; returns true if accepted.
  bool propose_and_accept(int a, const Residual& resid);
  /// Draws a candidate move for `tree`; std::nullopt when the drawn move has no
  /// legal target (counted as a rejection).
  std::optional<MoveProposal> propose(const Tree& tree, MoveKind kind);
  MoveKind draw_move_kind();

  void gibbs_leaf_effects(int a, const Residual& resid);
  void gibbs_tree_scale(int a);
  void gibbs_gamma();
  void gibbs_sigma2();
  void gibbs_omega2();

  Residual partial_residual(int a) const;
  /// Recomputes the cached fit and its projection from the trees.
  void refresh_fit();

  const ModelState& state() const { return state_; }
  ModelState& state() { return state_; }
  const MoveStats& move_stats() const { return stats_; }
  const TreePrior& prior() const { return prior_; }
  const ProjectedMetric& metric() const { return metric_; }
  const PrefixTable& table() const { return table_; }
  const DesignBuilder& designs() const { return builder_; }
  const TreeDesign& design(int a) const { return designs_[static_cast<size_t>(a)]; }
  const SplitGrid& grid() const { return grid_; }
  const Dataset& data() const { return *data_; }
  Rng& rng() { return rng_; }
  long iteration() const { return iteration_; }

  /// Replaces tree a (structure and effects) and refreshes its cached design.
  void set_tree(int a, Tree tree);

 private:
  void check_finite(int a) const;

  const Dataset* data_;
  SplitGrid grid_;
  Hyperparameters hyper_;
  PrefixTable table_;
  ProjectedMetric metric_;
  DesignBuilder builder_;
  TreePrior prior_;
  Rng rng_;
  ModelState state_;
  std::vector<TreeDesign> designs_;
  VectorXd wy_;
  VectorXd wfit_;
  MoveStats stats_;
  long iteration_ = 0;
};

struct ChainResult {
  std::vector<EnsembleDraw> ensembles;
  std::vector<double> sigma2;
  std::vector<double> omega2;
  MatrixXd gamma;  // draws x p
  MoveStats stats;
  ExposureKernel kernel;
  double x0 = 0.0;
  int T = 0;
};

/// burn_in + iterations sweeps, keeping every thin-th post-burn-in sweep as
/// centered trees. Deterministic given the seed.
ChainResult run_chain(const Dataset& data, const SplitGrid& grid, const Hyperparameters& hyper);

}  // namespace treedlnm
