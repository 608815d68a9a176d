#include "treedlnm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace treedlnm {

double p_split(int depth, double alpha, double beta) { return alpha * std::pow(1.0 + depth, -beta); }

// ---------------------------------------------------------------------------
// Tree prior

TreePrior::TreePrior(const SplitGrid& grid, const PrefixTable& table, const Hyperparameters& hyper,
                     double empty_threshold)
    : grid_(&grid),
      table_(&table),
      alpha_(hyper.alpha),
      beta_(hyper.beta),
      max_depth_(hyper.max_depth),
      empty_threshold_(empty_threshold) {}

std::vector<RuleChoice> TreePrior::rule_prior(const Region& region, int depth) const {
  std::vector<RuleChoice> out;
  if (max_depth_ && depth >= *max_depth_) return out;
  const double wx = grid_->s_x() > 0 ? 0.5 / grid_->s_x() : 0.0;
  const double wt = grid_->s_t() > 0 ? 0.5 / grid_->s_t() : 0.0;
  double total = 0.0;
  auto consider = [&](SplitRule rule, double weight) {
    const auto [left, right] = split_region(region, rule, grid_->time_splits);
    if (nonempty(left) && nonempty(right)) {
      out.push_back({rule, weight});
      total += weight;
    }
  };
  for (int j = region.x_lo_bin; j < region.x_hi_bin; ++j) consider({Axis::Exposure, j}, wx);
  for (int k = 0; k < grid_->s_t(); ++k) {
    const int cut = grid_->time_splits[static_cast<size_t>(k)];
    if (region.t_lo <= cut && cut < region.t_hi) consider({Axis::Time, k}, wt);
  }
  for (auto& choice : out) choice.prob /= total;
  return out;
}

double TreePrior::split_probability(const Region& region, int depth) const {
  if (max_depth_ && depth >= *max_depth_) return 0.0;
  return rule_prior(region, depth).empty() ? 0.0 : p_split(depth, alpha_, beta_);
}

double TreePrior::log_prior(const Tree& tree) const {
  if (!tree.structurally_valid()) return -kInf;
  double lp = 0.0;
  for (const auto& nd : tree.nodes()) {
    if (nd.terminal()) {
      lp += std::log1p(-split_probability(nd.region, nd.depth));
      continue;
    }
    const auto opts = rule_prior(nd.region, nd.depth);
    const auto it = std::find_if(opts.begin(), opts.end(), [&](const RuleChoice& c) { return c.rule == *nd.rule; });
    if (it == opts.end()) return -kInf;
    lp += std::log(p_split(nd.depth, alpha_, beta_)) + std::log(it->prob);
  }
  return lp;
}

// ---------------------------------------------------------------------------
// Projected metric and tree designs

ProjectedMetric::ProjectedMetric(const MatrixXd& Z, double c) : c_(c) {
  const auto p = Z.cols();
  MatrixXd S = Z.transpose() * Z;
  S.diagonal().array() += 1.0 / c;
  chol_.compute(S);
  if (chol_.info() != Eigen::Success) throw DataError("covariate cross-product is not positive definite");
  W_ = chol_.matrixL().solve(Z.transpose());
  const VectorXd diag = chol_.matrixLLT().diagonal();
  log_det_ = -static_cast<double>(p) * std::log(c) - 2.0 * diag.array().log().sum();
}

DesignBuilder::DesignBuilder(const PrefixTable& table, const ProjectedMetric& metric)
    : table_(&table), projected_(metric.W() * table.matrix()) {}

TreeDesign DesignBuilder::build(const Tree& tree) const {
  const auto leaves = tree.terminal_nodes();
  const auto B = static_cast<Eigen::Index>(leaves.size());
  TreeDesign d;
  d.U.resize(table_->n(), B);
  d.WU.resize(projected_.rows(), B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Region& region = tree.node(leaves[static_cast<size_t>(b)]).region;
    table_->fill_column(region, d.U.col(b));
    const auto c = table_->corners(region);
    d.WU.col(b) = (projected_.col(c[0].column) - projected_.col(c[1].column)) -
                  (projected_.col(c[2].column) - projected_.col(c[3].column));
  }
  d.G.noalias() = d.U.transpose() * d.U;
  d.G.noalias() -= d.WU.transpose() * d.WU;
  return d;
}

namespace {

Eigen::LLT<MatrixXd> leaf_precision(const TreeDesign& design, double leaf_var) {
  MatrixXd A = design.G;
  A.diagonal().array() += 1.0 / leaf_var;
  Eigen::LLT<MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw SamplerError("leaf-effect precision matrix is not positive definite");
  return llt;
}

VectorXd projected_cross(const TreeDesign& design, const Residual& resid) {
  VectorXd b = design.U.transpose() * resid.r;
  b.noalias() -= design.WU.transpose() * resid.wr;
  return b;
}

}  // namespace

double log_marginal_tree_terms(const TreeDesign& design, const Residual& resid, double sigma2, double leaf_var) {
  if (!resid.r.allFinite()) throw SamplerError("partial residual is not finite");
  const auto B = design.G.rows();
  const auto llt = leaf_precision(design, leaf_var);
  const VectorXd b = projected_cross(design, resid);
  const VectorXd half = llt.matrixL().solve(b);
  const double log_det = static_cast<double>(B) * std::log(leaf_var) +
                         2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * log_det + 0.5 * half.squaredNorm() / sigma2;
}

double log_marginal(const TreeDesign& design, const Residual& resid, double sigma2, double leaf_var,
                    const ProjectedMetric& metric) {
  const double n = static_cast<double>(resid.r.size());
  const double rmr = resid.r.squaredNorm() - resid.wr.squaredNorm();
  return -0.5 * n * std::log(2.0 * std::numbers::pi * sigma2) + 0.5 * metric.log_det() - 0.5 * rmr / sigma2 +
         log_marginal_tree_terms(design, resid, sigma2, leaf_var);
}

VectorXd draw_leaf_effects(const TreeDesign& design, const Residual& resid, double sigma2, double leaf_var, Rng& rng) {
  const auto llt = leaf_precision(design, leaf_var);
  const VectorXd mean = llt.solve(projected_cross(design, resid));
  std::normal_distribution<double> normal;
  VectorXd z(mean.size());
  for (Eigen::Index b = 0; b < z.size(); ++b) z[b] = normal(rng);
  return mean + std::sqrt(sigma2) * llt.matrixU().solve(z);
}

double draw_inverse_gamma(double shape, double scale, Rng& rng) {
  if (!(scale > 0.0) || !std::isfinite(scale) || !(shape > 0.0)) {
    std::ostringstream msg;
    msg << "inverse-gamma draw with invalid parameters (shape " << shape << ", scale " << scale << ")";
    throw SamplerError(msg.str());
  }
  std::gamma_distribution<double> gamma(shape, 1.0);
  return scale / gamma(rng);
}

InvGammaParams tau2_conditional(const VectorXd& mu, double s_tau, double sigma2, double omega2) {
  const double B = static_cast<double>(mu.size());
  return {0.5 * (B + 1.0), 1.0 / s_tau + mu.squaredNorm() / (2.0 * sigma2 * omega2)};
}

InvGammaParams omega2_conditional(const std::vector<Tree>& trees, double s_omega, double sigma2) {
  double term = 0.0, leaves = 0.0;
  for (const auto& tree : trees) {
    term += tree.leaf_effects.squaredNorm() / tree.tau2;
    leaves += static_cast<double>(tree.leaf_effects.size());
  }
  return {0.5 * (leaves + 1.0), 1.0 / s_omega + term / (2.0 * sigma2)};
}

InvGammaParams sigma2_conditional(const Dataset& data, const ModelState& state, double c) {
  const VectorXd resid = data.y - state.fit - data.Z * state.gamma;
  double leaf_term = 0.0, leaves = 0.0;
  for (const auto& tree : state.trees) {
    leaf_term += tree.leaf_effects.squaredNorm() / (state.omega2 * tree.tau2);
    leaves += static_cast<double>(tree.leaf_effects.size());
  }
  const double n = data.n(), p = data.p();
  return {0.5 * (n + leaves + p + 1.0),
          1.0 / state.s_sigma + 0.5 * (resid.squaredNorm() + leaf_term + state.gamma.squaredNorm() / c)};
}

InvGammaParams auxiliary_conditional(double r2) { return {1.0, 1.0 + 1.0 / r2}; }

VectorXd conditional_gamma_mean(const ProjectedMetric& metric, const VectorXd& y_minus_f) {
  return metric.chol().matrixU().solve(metric.W() * y_minus_f);
}

// ---------------------------------------------------------------------------
// Sampler

namespace {

const Dataset& checked(const Dataset& data, const SplitGrid& grid, const Hyperparameters& hyper) {
  const auto problems = validate(data, grid, hyper);
  if (problems.empty()) return data;
  std::string msg = "invalid inputs:";
  bool config = false;
  for (const auto& p : problems) {
    msg += "\n  " + p;
    config = config || p.rfind("hyper:", 0) == 0;
  }
  if (config) throw ConfigError(msg);
  throw DataError(msg);
}

double empty_threshold(const Weighting& w) { return w.kind == Weighting::Kind::Hard ? 0.5 : 1e-10; }

}  // namespace

Sampler::Sampler(const Dataset& data, const SplitGrid& grid, const Hyperparameters& hyper)
    : data_(&checked(data, grid, hyper)),
      grid_(grid),
      hyper_(hyper),
      table_(data, grid_, Weighting::from(hyper)),
      metric_(data.Z, hyper.c),
      builder_(table_, metric_),
      prior_(grid_, table_, hyper_, empty_threshold(Weighting::from(hyper))),
      rng_(hyper.mcmc.seed) {
  const double var_y = sample_variance(data.y);
  state_.sigma2 = var_y > 0.0 ? var_y : 1.0;
  state_.gamma = VectorXd::Zero(data.p());
  state_.fit = VectorXd::Zero(data.n());
  for (int a = 0; a < hyper.n_trees; ++a) {
    state_.trees.emplace_back(grid_, data.T());
    designs_.push_back(builder_.build(state_.trees.back()));
  }
  wy_ = metric_.W() * data.y;
  wfit_ = VectorXd::Zero(data.p());
}

void Sampler::set_tree(int a, Tree tree) {
  state_.trees[static_cast<size_t>(a)] = std::move(tree);
  designs_[static_cast<size_t>(a)] = builder_.build(state_.trees[static_cast<size_t>(a)]);
  refresh_fit();
}

void Sampler::refresh_fit() {
  state_.fit.setZero();
  wfit_.setZero();
  for (size_t a = 0; a < state_.trees.size(); ++a) {
    state_.fit.noalias() += designs_[a].U * state_.trees[a].leaf_effects;
    wfit_.noalias() += designs_[a].WU * state_.trees[a].leaf_effects;
  }
}

Residual Sampler::partial_residual(int a) const {
  const auto& d = designs_[static_cast<size_t>(a)];
  const auto& mu = state_.trees[static_cast<size_t>(a)].leaf_effects;
  Residual r;
  r.r = data_->y - state_.fit;
  r.r.noalias() += d.U * mu;
  r.wr = wy_ - wfit_;
  r.wr.noalias() += d.WU * mu;
  return r;
}

MoveKind Sampler::draw_move_kind() {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng_);
  const auto& mp = hyper_.move_probs;
  if (u < mp.grow) return MoveKind::Grow;
  if (u < mp.grow + mp.prune) return MoveKind::Prune;
  return MoveKind::Change;
}

namespace {

template <typename T>
const T& pick_uniform(const std::vector<T>& items, Rng& rng) {
  std::uniform_int_distribution<size_t> dist(0, items.size() - 1);
  return items[dist(rng)];
}

const RuleChoice& pick_rule(const std::vector<RuleChoice>& opts, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (const auto& c : opts) {
    acc += c.prob;
    if (u < acc) return c;
  }
  return opts.back();
}

double rule_probability(const std::vector<RuleChoice>& opts, SplitRule rule) {
  const auto it = std::find_if(opts.begin(), opts.end(), [&](const RuleChoice& c) { return c.rule == rule; });
  return it == opts.end() ? 0.0 : it->prob;
}

}  // namespace

std::optional<MoveProposal> Sampler::propose(const Tree& tree, MoveKind kind) {
  const auto& mp = hyper_.move_probs;
  const double alpha = hyper_.alpha, beta = hyper_.beta;
  MoveProposal out;
  out.kind = kind;

  switch (kind) {
    case MoveKind::Grow: {
      const auto leaves = tree.terminal_nodes();
      const int leaf = pick_uniform(leaves, rng_);
      const TreeNode& nd = tree.node(leaf);
      const auto opts = prior_.rule_prior(nd.region, nd.depth);
      if (opts.empty()) return std::nullopt;
      const RuleChoice choice = pick_rule(opts, rng_);
      out.tree = tree.grown(leaf, choice.rule);
      const auto [left, right] = split_region(nd.region, choice.rule, grid_.time_splits);
      const double pd = p_split(nd.depth, alpha, beta);
      const double pl = prior_.split_probability(left, nd.depth + 1);
      const double pr = prior_.split_probability(right, nd.depth + 1);
      out.log_prior_ratio =
          std::log(pd) + std::log(choice.prob) + std::log1p(-pl) + std::log1p(-pr) - std::log1p(-pd);
      const double nogs_after = static_cast<double>(out.tree.nog_nodes().size());
      out.log_proposal_ratio = (std::log(mp.prune) - std::log(nogs_after)) -
                               (std::log(mp.grow) - std::log(static_cast<double>(leaves.size())) + std::log(choice.prob));
      return out;
    }
    case MoveKind::Prune: {
      const auto nogs = tree.nog_nodes();
      if (nogs.empty()) return std::nullopt;
      const int id = pick_uniform(nogs, rng_);
      const TreeNode& nd = tree.node(id);
      const double prob = rule_probability(prior_.rule_prior(nd.region, nd.depth), *nd.rule);
      if (prob <= 0.0) return std::nullopt;
      const double pd = p_split(nd.depth, alpha, beta);
      const double pl = prior_.split_probability(tree.node(nd.left).region, nd.depth + 1);
      const double pr = prior_.split_probability(tree.node(nd.right).region, nd.depth + 1);
      out.tree = tree.pruned(id);
      out.log_prior_ratio = std::log1p(-pd) - (std::log(pd) + std::log(prob) + std::log1p(-pl) + std::log1p(-pr));
      const double leaves_after = static_cast<double>(out.tree.num_leaves());
      out.log_proposal_ratio = (std::log(mp.grow) - std::log(leaves_after) + std::log(prob)) -
                               (std::log(mp.prune) - std::log(static_cast<double>(nogs.size())));
      return out;
    }
    case MoveKind::Change: {
      const auto internal = tree.internal_nodes();
      if (internal.empty()) return std::nullopt;
      const int id = pick_uniform(internal, rng_);
      const TreeNode& nd = tree.node(id);
      const auto opts = prior_.rule_prior(nd.region, nd.depth);
      if (opts.empty()) return std::nullopt;
      const RuleChoice choice = pick_rule(opts, rng_);
      if (choice.rule == *nd.rule) {
        out.tree = tree;
        return out;
      }
      out.tree = tree.changed(id, choice.rule);
      const double lp_new = prior_.log_prior(out.tree);
      if (!std::isfinite(lp_new)) return std::nullopt;
      const double current = rule_probability(opts, *nd.rule);
      if (current <= 0.0) return std::nullopt;
      out.log_prior_ratio = lp_new - prior_.log_prior(tree);
      out.log_proposal_ratio = std::log(current) - std::log(choice.prob);
      return out;
    }
  }
  return std::nullopt;
}

bool Sampler::propose_and_accept(int a, const Residual& resid) {
  auto& tree = state_.trees[static_cast<size_t>(a)];
  const MoveKind kind = draw_move_kind();
  ++stats_.proposed[static_cast<size_t>(kind)];
  auto proposal = propose(tree, kind);
  if (!proposal) return false;

  const double leaf_var = state_.omega2 * tree.tau2;
  TreeDesign candidate = builder_.build(proposal->tree);
  const double log_ratio = log_marginal_tree_terms(candidate, resid, state_.sigma2, leaf_var) -
                           log_marginal_tree_terms(designs_[static_cast<size_t>(a)], resid, state_.sigma2, leaf_var) +
                           proposal->log_prior_ratio + proposal->log_proposal_ratio;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (std::log(unif(rng_)) >= log_ratio) return false;

  proposal->tree.tau2 = tree.tau2;
  proposal->tree.s_tau = tree.s_tau;
  tree = std::move(proposal->tree);
  designs_[static_cast<size_t>(a)] = std::move(candidate);
  ++stats_.accepted[static_cast<size_t>(kind)];
  return true;
}

void Sampler::gibbs_leaf_effects(int a, const Residual& resid) {
  auto& tree = state_.trees[static_cast<size_t>(a)];
  const auto& d = designs_[static_cast<size_t>(a)];
  tree.leaf_effects = draw_leaf_effects(d, resid, state_.sigma2, state_.omega2 * tree.tau2, rng_);
  state_.fit = data_->y - resid.r;
  state_.fit.noalias() += d.U * tree.leaf_effects;
  wfit_ = wy_ - resid.wr;
  wfit_.noalias() += d.WU * tree.leaf_effects;
}

void Sampler::gibbs_tree_scale(int a) {
  auto& tree = state_.trees[static_cast<size_t>(a)];
  const auto t = tau2_conditional(tree.leaf_effects, tree.s_tau, state_.sigma2, state_.omega2);
  tree.tau2 = draw_inverse_gamma(t.shape, t.scale, rng_);
  const auto s = auxiliary_conditional(tree.tau2);
  tree.s_tau = draw_inverse_gamma(s.shape, s.scale, rng_);
}

void Sampler::gibbs_gamma() {
  std::normal_distribution<double> normal;
  VectorXd z(data_->p());
  for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = normal(rng_);
  const VectorXd rhs = (wy_ - wfit_) + std::sqrt(state_.sigma2) * z;
  state_.gamma = metric_.chol().matrixU().solve(rhs);
}

void Sampler::gibbs_sigma2() {
  const auto g = sigma2_conditional(*data_, state_, metric_.c());
  state_.sigma2 = draw_inverse_gamma(g.shape, g.scale, rng_);
  const auto s = auxiliary_conditional(state_.sigma2);
  state_.s_sigma = draw_inverse_gamma(s.shape, s.scale, rng_);
}

void Sampler::gibbs_omega2() {
  const auto g = omega2_conditional(state_.trees, state_.s_omega, state_.sigma2);
  state_.omega2 = draw_inverse_gamma(g.shape, g.scale, rng_);
  const auto s = auxiliary_conditional(state_.omega2);
  state_.s_omega = draw_inverse_gamma(s.shape, s.scale, rng_);
}

void Sampler::check_finite(int a) const {
  const auto& tree = state_.trees[static_cast<size_t>(a)];
  if (tree.leaf_effects.allFinite() && std::isfinite(tree.tau2) && std::isfinite(state_.sigma2) &&
      std::isfinite(state_.omega2) && tree.tau2 > 0.0) {
    return;
  }
  std::ostringstream msg;
  msg << "non-finite sampler state at iteration " << iteration_ << ", tree " << a << ": sigma2=" << state_.sigma2
      << " omega2=" << state_.omega2 << " tau2=" << tree.tau2 << " leaves=" << tree.leaf_effects.size();
  throw SamplerError(msg.str());
}

void Sampler::sweep() {
  for (int a = 0; a < static_cast<int>(state_.trees.size()); ++a) {
    try {
      const Residual resid = partial_residual(a);
      propose_and_accept(a, resid);
      gibbs_leaf_effects(a, resid);
      if (hyper_.update_variances) gibbs_tree_scale(a);
    } catch (const SamplerError& e) {
      std::ostringstream msg;
      msg << e.what() << " (iteration " << iteration_ << ", tree " << a << ")";
      throw SamplerError(msg.str());
    }
    check_finite(a);
  }
  refresh_fit();
  gibbs_gamma();
  if (hyper_.update_variances) {
    gibbs_sigma2();
    gibbs_omega2();
  }
  if (!state_.gamma.allFinite() || !std::isfinite(state_.sigma2)) {
    std::ostringstream msg;
    msg << "non-finite global parameters at iteration " << iteration_;
    throw SamplerError(msg.str());
  }
  ++iteration_;
}

ChainResult run_chain(const Dataset& data, const SplitGrid& grid, const Hyperparameters& hyper) {
  Sampler sampler(data, grid, hyper);
  ChainResult out;
  out.kernel = ExposureKernel{hyper.sigma_x};
  out.x0 = hyper.x0;
  out.T = data.T();
  const auto& mc = hyper.mcmc;
  std::vector<VectorXd> gammas;
  for (int it = 0; it < mc.burn_in + mc.iterations; ++it) {
    sampler.sweep();
    if (it < mc.burn_in || (it - mc.burn_in + 1) % mc.thin != 0) continue;
    const auto& st = sampler.state();
    EnsembleDraw draw;
    draw.reserve(st.trees.size());
    for (const auto& tree : st.trees) draw.push_back(center_tree(tree, grid, data.T(), hyper.x0, out.kernel));
    out.ensembles.push_back(std::move(draw));
    out.sigma2.push_back(st.sigma2);
    out.omega2.push_back(st.omega2);
    gammas.push_back(st.gamma);
  }
  out.gamma.resize(static_cast<Eigen::Index>(gammas.size()), data.p());
  for (size_t d = 0; d < gammas.size(); ++d) out.gamma.row(static_cast<Eigen::Index>(d)) = gammas[d].transpose();
  out.stats = sampler.move_stats();
  return out;
}

}  // namespace treedlnm
