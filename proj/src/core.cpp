#include "treedlnm/core.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>
#include <sstream>

namespace treedlnm {

Rectangle Region::rectangle(const SplitGrid& grid) const {
  Rectangle r;
  r.x_lo = x_lo_bin == 0 ? -kInf : grid.exposure_splits.at(static_cast<size_t>(x_lo_bin - 1));
  r.x_hi = x_hi_bin == grid.s_x() ? kInf : grid.exposure_splits.at(static_cast<size_t>(x_hi_bin));
  r.t_lo = t_lo;
  r.t_hi = t_hi;
  return r;
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw DataError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * std::clamp(pct, 0.0, 100.0) / 100.0;
  const auto lo = static_cast<size_t>(std::floor(h));
  const size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<int> SplitGrid::all_time_cuts(int T) {
  std::vector<int> cuts;
  for (int t = 1; t < T; ++t) cuts.push_back(t);
  return cuts;
}

namespace {

std::vector<double> flatten(const MatrixXd& X) { return {X.data(), X.data() + X.size()}; }

std::vector<double> keep_interior(std::vector<double> splits, double lo, double hi) {
  std::sort(splits.begin(), splits.end());
  splits.erase(std::unique(splits.begin(), splits.end()), splits.end());
  std::erase_if(splits, [&](double s) { return !(s > lo && s < hi); });
  return splits;
}

}  // namespace

SplitGrid SplitGrid::evenly_spaced(const MatrixXd& X, int count, double lo_pct, double hi_pct) {
  auto values = flatten(X);
  const double lo = percentile(values, lo_pct);
  const double hi = percentile(values, hi_pct);
  std::vector<double> splits;
  for (int j = 0; j < count; ++j) {
    splits.push_back(count == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * j / (count - 1.0));
  }
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  return {keep_interior(std::move(splits), *mn, *mx), all_time_cuts(static_cast<int>(X.cols()))};
}

SplitGrid SplitGrid::quantile_spaced(const MatrixXd& X, int count, double lo_pct, double hi_pct) {
  auto values = flatten(X);
  std::sort(values.begin(), values.end());
  std::vector<double> splits;
  for (int j = 0; j < count; ++j) {
    const double pct = count == 1 ? 0.5 * (lo_pct + hi_pct) : lo_pct + (hi_pct - lo_pct) * j / (count - 1.0);
    splits.push_back(percentile(values, pct));
  }
  return {keep_interior(std::move(splits), values.front(), values.back()),
          all_time_cuts(static_cast<int>(X.cols()))};
}

bool SplitGrid::insert_exposure_split(double value, const MatrixXd& X) {
  if (X.size() == 0 || !(value > X.minCoeff() && value < X.maxCoeff())) return false;
  const auto it = std::lower_bound(exposure_splits.begin(), exposure_splits.end(), value);
  if (it != exposure_splits.end() && *it == value) return false;
  exposure_splits.insert(it, value);
  return true;
}

// ---------------------------------------------------------------------------
// Tree

Tree::Tree(const SplitGrid& grid, int T)
    : leaf_effects(VectorXd::Zero(1)), time_cuts_(std::make_shared<const std::vector<int>>(grid.time_splits)) {
  TreeNode root;
  root.region = Region{0, grid.s_x(), 1, T};
  nodes_.push_back(root);
}

std::vector<int> Tree::terminal_nodes() const {
  std::vector<int> out;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const auto& nd = nodes_[static_cast<size_t>(id)];
    if (nd.terminal()) {
      out.push_back(id);
    } else {
      stack.push_back(nd.right);
      stack.push_back(nd.left);
    }
  }
  return out;
}

std::vector<int> Tree::internal_nodes() const {
  std::vector<int> out;
  for (int id = 0; id < size(); ++id) {
    if (!nodes_[static_cast<size_t>(id)].terminal()) out.push_back(id);
  }
  return out;
}

std::vector<int> Tree::nog_nodes() const {
  std::vector<int> out;
  for (int id = 0; id < size(); ++id) {
    const auto& nd = nodes_[static_cast<size_t>(id)];
    if (!nd.terminal() && node(nd.left).terminal() && node(nd.right).terminal()) out.push_back(id);
  }
  return out;
}

std::pair<Region, Region> split_region(const Region& parent, SplitRule rule, const std::vector<int>& time_cuts) {
  Region left = parent;
  Region right = parent;
  if (rule.axis == Axis::Exposure) {
    left.x_hi_bin = rule.index;
    right.x_lo_bin = rule.index + 1;
  } else {
    const int cut = time_cuts.at(static_cast<size_t>(rule.index));
    left.t_hi = cut;
    right.t_lo = cut + 1;
  }
  return {left, right};
}

void Tree::split_region(const Region& parent, SplitRule rule, Region& left, Region& right) const {
  std::tie(left, right) = treedlnm::split_region(parent, rule, *time_cuts_);
}

bool Tree::rule_inside(const Region& region, SplitRule rule) const {
  if (rule.axis == Axis::Exposure) return region.x_lo_bin <= rule.index && rule.index < region.x_hi_bin;
  if (rule.index < 0 || rule.index >= static_cast<int>(time_cuts_->size())) return false;
  const int cut = (*time_cuts_)[static_cast<size_t>(rule.index)];
  return region.t_lo <= cut && cut < region.t_hi;
}

Region Tree::derive_region(int leaf_id) const {
  if (leaf_id < 0 || leaf_id >= size() || !nodes_[static_cast<size_t>(leaf_id)].terminal()) {
    throw std::out_of_range("derive_region: node " + std::to_string(leaf_id) + " is not a terminal node");
  }
  std::vector<int> path;
  for (int id = leaf_id; id != -1; id = nodes_[static_cast<size_t>(id)].parent) path.push_back(id);
  std::reverse(path.begin(), path.end());
  Region region = nodes_[0].region;
  for (size_t k = 0; k + 1 < path.size(); ++k) {
    const auto& nd = nodes_[static_cast<size_t>(path[k])];
    Region left, right;
    split_region(region, *nd.rule, left, right);
    region = (nd.left == path[k + 1]) ? left : right;
  }
  return region;
}

void Tree::recompute_regions(int id) {
  auto& nd = nodes_[static_cast<size_t>(id)];
  if (nd.terminal()) return;
  Region left, right;
  split_region(nd.region, *nd.rule, left, right);
  nodes_[static_cast<size_t>(nd.left)].region = left;
  nodes_[static_cast<size_t>(nd.right)].region = right;
  const int l = nd.left, r = nd.right;
  recompute_regions(l);
  recompute_regions(r);
}

namespace {

// Rebuilds `nodes` in depth-first preorder from the root, dropping unreachable
// entries, and carries per-node leaf effects (NaN for internal nodes) along.
void compact(std::vector<TreeNode>& nodes, std::vector<double>& effect_by_node, VectorXd& leaf_effects) {
  std::vector<TreeNode> out;
  std::vector<double> effects;
  std::vector<std::pair<int, int>> stack{{0, -1}};  // (old id, new parent id)
  while (!stack.empty()) {
    const auto [old_id, new_parent] = stack.back();
    stack.pop_back();
    TreeNode nd = nodes[static_cast<size_t>(old_id)];
    const int new_id = static_cast<int>(out.size());
    if (!nd.terminal()) {
      stack.push_back({nd.right, new_id});
      stack.push_back({nd.left, new_id});
    }
    nd.parent = new_parent;
    nd.left = nd.right = -1;
    out.push_back(nd);
    effects.push_back(effect_by_node[static_cast<size_t>(old_id)]);
  }
  // Preorder emits the left subtree before the right one.
  for (int id = 1; id < static_cast<int>(out.size()); ++id) {
    auto& par = out[static_cast<size_t>(out[static_cast<size_t>(id)].parent)];
    if (par.left == -1) par.left = id; else par.right = id;
  }
  nodes = std::move(out);
  effect_by_node = std::move(effects);
  std::vector<double> leaves;
  for (size_t id = 0; id < nodes.size(); ++id) {
    if (nodes[id].terminal()) leaves.push_back(effect_by_node[id]);
  }
  leaf_effects = Eigen::Map<VectorXd>(leaves.data(), static_cast<Eigen::Index>(leaves.size()));
}

std::vector<double> effects_by_node(const Tree& tree) {
  std::vector<double> out(static_cast<size_t>(tree.size()), std::nan(""));
  const auto leaves = tree.terminal_nodes();
  for (size_t b = 0; b < leaves.size(); ++b) {
    out[static_cast<size_t>(leaves[b])] =
        static_cast<Eigen::Index>(b) < tree.leaf_effects.size() ? tree.leaf_effects[static_cast<Eigen::Index>(b)] : 0.0;
  }
  return out;
}

}  // namespace

Tree Tree::grown(int leaf_id, SplitRule rule) const {
  if (leaf_id < 0 || leaf_id >= size() || !node(leaf_id).terminal()) {
    throw std::out_of_range("grow target is not a terminal node");
  }
  Tree out = *this;
  auto effects = effects_by_node(*this);
  const double inherited = effects[static_cast<size_t>(leaf_id)];
  auto& parent = out.nodes_[static_cast<size_t>(leaf_id)];
  parent.rule = rule;
  TreeNode left, right;
  left.parent = right.parent = leaf_id;
  left.depth = right.depth = parent.depth + 1;
  out.split_region(parent.region, rule, left.region, right.region);
  parent.left = out.size();
  parent.right = out.size() + 1;
  out.nodes_.push_back(left);
  out.nodes_.push_back(right);
  effects[static_cast<size_t>(leaf_id)] = std::nan("");
  effects.push_back(inherited);
  effects.push_back(inherited);
  compact(out.nodes_, effects, out.leaf_effects);
  return out;
}

Tree Tree::pruned(int node_id) const {
  if (node_id < 0 || node_id >= size() || node(node_id).terminal() || !node(node(node_id).left).terminal() ||
      !node(node(node_id).right).terminal()) {
    throw std::out_of_range("prune target is not a node with two terminal children");
  }
  Tree out = *this;
  auto effects = effects_by_node(*this);
  auto& nd = out.nodes_[static_cast<size_t>(node_id)];
  effects[static_cast<size_t>(node_id)] =
      0.5 * (effects[static_cast<size_t>(nd.left)] + effects[static_cast<size_t>(nd.right)]);
  nd.rule.reset();
  nd.left = nd.right = -1;
  compact(out.nodes_, effects, out.leaf_effects);
  return out;
}

Tree Tree::changed(int node_id, SplitRule rule) const {
  if (node_id < 0 || node_id >= size() || node(node_id).terminal()) {
    throw std::out_of_range("change target is not an internal node");
  }
  Tree out = *this;
  out.nodes_[static_cast<size_t>(node_id)].rule = rule;
  out.recompute_regions(node_id);
  return out;
}

bool Tree::structurally_valid() const {
  for (const auto& nd : nodes_) {
    if (!nd.terminal() && !rule_inside(nd.region, *nd.rule)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

double sample_variance(const VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

double default_covariate_scale(const VectorXd& y, double scale) {
  const double var = sample_variance(y);
  return scale * (var > 0.0 ? var : 1.0);
}

double half_sd_bandwidth(const MatrixXd& X) {
  const Eigen::Map<const VectorXd> flat(X.data(), X.size());
  return 0.5 * std::sqrt(sample_variance(flat));
}

std::vector<std::string> validate(const Dataset& data, const SplitGrid& grid, const Hyperparameters& hyper) {
  std::vector<std::string> out;
  auto fail = [&](const std::string& msg) { out.push_back(msg); };
  const int n = data.n(), T = data.T(), p = data.p();
  if (n < 1) fail("dataset: n must be at least 1");
  if (T < 2) fail("dataset: T must be at least 2");
  if (p < 1) fail("dataset: covariate matrix needs at least one column (intercept)");
  if (data.X.rows() != n) fail("dataset: exposure matrix has " + std::to_string(data.X.rows()) + " rows, expected " + std::to_string(n));
  if (data.Z.rows() != n) fail("dataset: covariate matrix has " + std::to_string(data.Z.rows()) + " rows, expected " + std::to_string(n));
  if (!data.y.allFinite()) fail("dataset: outcome has missing or non-finite values");
  if (!data.X.allFinite()) fail("dataset: exposure matrix has missing or non-finite values");
  if (!data.Z.allFinite()) fail("dataset: covariate matrix has missing or non-finite values");
  if (data.se) {
    if (data.se->rows() != data.X.rows() || data.se->cols() != data.X.cols()) {
      fail("dataset: standard-error matrix shape does not match exposures");
    } else if (!(data.se->array() > 0.0).all()) {
      fail("dataset: standard errors must be positive");
    }
  }
  if (!data.draws.empty()) {
    if (data.draws.size() < 2) fail("dataset: at least 2 exposure draws are required");
    for (size_t k = 0; k < data.draws.size(); ++k) {
      if (data.draws[k].rows() != data.X.rows() || data.draws[k].cols() != data.X.cols()) {
        fail("dataset: exposure draw " + std::to_string(k) + " shape does not match exposures");
      }
    }
  }

  const auto& xs = grid.exposure_splits;
  for (size_t j = 1; j < xs.size(); ++j) {
    if (!(xs[j] > xs[j - 1])) {
      fail("grid: exposure splits not strictly increasing");
      break;
    }
  }
  if (data.X.size() > 0) {
    const double mn = data.X.minCoeff(), mx = data.X.maxCoeff();
    for (double s : xs) {
      if (!(s > mn && s < mx)) {
        std::ostringstream msg;
        msg << "grid: exposure split out of range (" << s << " not inside (" << mn << ", " << mx << "))";
        fail(msg.str());
      }
    }
  }
  const auto& ts = grid.time_splits;
  for (size_t k = 0; k < ts.size(); ++k) {
    if (ts[k] < 1 || ts[k] > T - 1) fail("grid: time split " + std::to_string(ts[k]) + " out of range [1, T-1]");
    if (k > 0 && ts[k] <= ts[k - 1]) fail("grid: time splits not strictly increasing");
  }

  const auto& mp = hyper.move_probs;
  if (mp.grow < 0 || mp.prune < 0 || mp.change < 0) fail("hyper: move probabilities must be nonnegative");
  if (std::abs(mp.grow + mp.prune + mp.change - 1.0) > 1e-9) fail("hyper: move probabilities do not sum to 1");
  if (hyper.n_trees < 0) fail("hyper: number of trees must be nonnegative");
  if (!(hyper.alpha > 0.0 && hyper.alpha < 1.0)) fail("hyper: alpha must lie in (0, 1)");
  if (!(hyper.beta >= 0.0)) fail("hyper: beta must be nonnegative");
  if (!(hyper.c > 0.0)) fail("hyper: c must be positive");
  if (!(hyper.sigma_x >= 0.0)) fail("hyper: sigma_x must be nonnegative");
  if (hyper.max_depth && *hyper.max_depth < 0) fail("hyper: max_depth must be nonnegative");
  if (hyper.mcmc.burn_in < 0 || hyper.mcmc.iterations < 0) fail("hyper: burn-in and iterations must be nonnegative");
  if (hyper.mcmc.thin < 1) fail("hyper: thin must be at least 1");
  if (hyper.uncertainty == UncertaintyMode::PerCellSE && !data.se) fail("hyper: per-cell-SE mode needs standard errors");
  if (hyper.uncertainty == UncertaintyMode::EmpiricalCdf && data.draws.size() < 2) {
    fail("hyper: empirical-CDF mode needs at least 2 exposure draws");
  }
  return out;
}

}  // namespace treedlnm
