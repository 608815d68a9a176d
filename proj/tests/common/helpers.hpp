#pragma once

#include <random>

#include "treedlnm/core.hpp"
#include "treedlnm/sampler.hpp"

namespace treedlnm::testing {

/// Log-normal-ish exposures, an intercept plus `p - 1` normal covariates, and a
/// noisy outcome.
inline Dataset random_dataset(int n, int T, int p, Rng& rng) {
  std::normal_distribution<double> normal;
  Dataset d;
  d.X.resize(n, T);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < T; ++t) d.X(i, t) = 1.9 + 0.4 * normal(rng);
  }
  d.Z.resize(n, p);
  d.Z.col(0).setOnes();
  for (int i = 0; i < n; ++i) {
    for (int j = 1; j < p; ++j) d.Z(i, j) = normal(rng);
  }
  d.y.resize(n);
  for (int i = 0; i < n; ++i) d.y[i] = normal(rng);
  return d;
}

/// Grows `splits` random structurally valid rules onto a root-only tree and fills
/// the leaf effects with standard normals.
inline Tree random_tree(const SplitGrid& grid, int T, int splits, Rng& rng) {
  Tree tree(grid, T);
  std::normal_distribution<double> normal;
  for (int attempt = 0, done = 0; done < splits && attempt < 50 * (splits + 1); ++attempt) {
    const auto leaves = tree.terminal_nodes();
    const int leaf = leaves[std::uniform_int_distribution<size_t>(0, leaves.size() - 1)(rng)];
    const bool exposure = grid.s_x() > 0 && (grid.s_t() == 0 || std::bernoulli_distribution(0.5)(rng));
    SplitRule rule{exposure ? Axis::Exposure : Axis::Time, 0};
    const int count = exposure ? grid.s_x() : grid.s_t();
    if (count == 0) continue;
    rule.index = std::uniform_int_distribution<int>(0, count - 1)(rng);
    if (!tree.rule_inside(tree.node(leaf).region, rule)) continue;
    tree = tree.grown(leaf, rule);
    ++done;
  }
  tree.leaf_effects.resize(tree.num_leaves());
  for (Eigen::Index b = 0; b < tree.leaf_effects.size(); ++b) tree.leaf_effects[b] = normal(rng);
  return tree;
}

inline Hyperparameters quick_hyper(int trees, int burn_in, int iterations, int thin, std::uint64_t seed) {
  Hyperparameters h;
  h.n_trees = trees;
  h.mcmc = {burn_in, iterations, thin, seed};
  return h;
}

}  // namespace treedlnm::testing
