#pragma once

// Best total stability over every set of condensed-tree clusters in which no cluster is an
// ancestor of another. Stabilities are recomputed from the raw nodes. Exponential in the number
// of clusters.

#include <cstddef>
#include <vector>

#include "popdyn/hdbscan.hpp"

namespace oracle {

struct AntichainResult {
  double best = 0.0;
  std::vector<double> stability;  // indexed by cluster id - n_points
};

inline AntichainResult best_antichain(const popdyn::CondensedTree& tree) {
  const std::size_t n = tree.n_points, k = tree.n_clusters;
  std::vector<double> birth(k, 0.0);
  std::vector<std::size_t> parent(k, 0);
  for (const auto& e : tree.nodes) {
    if (e.child >= n) {
      birth[e.child - n] = e.lambda;
      parent[e.child - n] = e.parent - n;
    }
  }
  AntichainResult r;
  r.stability.assign(k, 0.0);
  for (const auto& e : tree.nodes)
    r.stability[e.parent - n] += (e.lambda - birth[e.parent - n]) * static_cast<double>(e.child_size);

  auto is_ancestor = [&](std::size_t a, std::size_t c) {
    while (c != 0) {
      c = parent[c];
      if (c == a) return true;
    }
    return false;
  };
  for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
    bool ok = true;
    double total = 0.0;
    for (std::size_t a = 0; a < k && ok; ++a) {
      if (!(mask >> a & 1)) continue;
      total += r.stability[a];
      for (std::size_t b = 0; b < k && ok; ++b)
        if (a != b && (mask >> b & 1) && is_ancestor(a, b)) ok = false;
    }
    if (ok && total > r.best) r.best = total;
  }
  return r;
}

}  // namespace oracle
