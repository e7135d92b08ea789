#pragma once

// HDBSCAN over a precomputed distance matrix, plus the iterative noise re-clustering driver.
//
// Conventions:
//  - core distance of i = distance to its min_samples-th nearest *other* point (self excluded;
//    the reference Python library counts the point itself, so its min_samples is ours + 1);
//  - lambda = 1 / distance, capped at 1e3 / (smallest positive distance) for zero-length merges;
//  - the root may be selected as a cluster. When it is, only points still attached to it at its
//    final event are members; points eroded from it earlier are noise;
//  - every tie is resolved towards the smallest index.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "popdyn/error.hpp"
#include "popdyn/metrics.hpp"

namespace popdyn {

inline constexpr int kNoise = -1;

struct ClusterConfig {
  std::size_t min_samples = 2;
  std::size_t min_cluster_size = 2;

  void validate() const {
    if (min_samples < 1) throw ValidationError("min_samples must be >= 1");
    if (min_cluster_size < 2) throw ValidationError("min_cluster_size must be >= 2");
  }
};

/// Read-only view of a DistanceMatrix, optionally restricted to a subset of its points.
class DistanceView {
 public:
  DistanceView(const DistanceMatrix& d) : d_(&d), index_(d.size()) {  // NOLINT(implicit)
    std::iota(index_.begin(), index_.end(), std::size_t{0});
  }
  DistanceView(const DistanceMatrix& d, std::vector<std::size_t> index) : d_(&d), index_(std::move(index)) {}

  std::size_t size() const noexcept { return index_.size(); }
  double operator()(std::size_t i, std::size_t j) const noexcept { return (*d_)(index_[i], index_[j]); }
  std::size_t original_index(std::size_t i) const noexcept { return index_[i]; }

 private:
  const DistanceMatrix* d_;
  std::vector<std::size_t> index_;
};

struct MstEdge {
  std::size_t u = 0;
  std::size_t v = 0;
  double weight = 0.0;
};

struct CondensedNode {
  std::size_t parent = 0;      // cluster id (>= n_points)
  std::size_t child = 0;       // point id (< n_points) or cluster id
  double lambda = 0.0;         // 1 / distance at which the child leaves the parent
  std::size_t child_size = 0;  // 1 for points
};

struct CondensedTree {
  std::size_t n_points = 0;
  std::size_t n_clusters = 0;  // cluster ids are n_points .. n_points + n_clusters - 1; root is n_points
  std::vector<CondensedNode> nodes;

  std::size_t root() const noexcept { return n_points; }
  bool is_cluster(std::size_t id) const noexcept { return id >= n_points; }

  // Lambda at which each cluster was born (0 for the root), indexed by id - n_points.
  std::vector<double> birth_lambdas() const {
    std::vector<double> birth(n_clusters, 0.0);
    for (const auto& e : nodes)
      if (is_cluster(e.child)) birth[e.child - n_points] = e.lambda;
    return birth;
  }

  // Parent cluster id of every cluster; the root maps to itself.
  std::vector<std::size_t> cluster_parents() const {
    std::vector<std::size_t> parent(n_clusters, root());
    for (const auto& e : nodes)
      if (is_cluster(e.child)) parent[e.child - n_points] = e.parent;
    return parent;
  }

  // Sum over points leaving a cluster (directly or inside a child cluster) of lambda - birth.
  std::vector<double> stabilities() const {
    const auto birth = birth_lambdas();
    std::vector<double> s(n_clusters, 0.0);
    for (const auto& e : nodes) {
      const std::size_t c = e.parent - n_points;
      s[c] += (e.lambda - birth[c]) * static_cast<double>(e.child_size);
    }
    return s;
  }
};

struct ClusterInfo {
  int label = kNoise;
  std::size_t size = 0;
  double stability = 0.0;
  int round = 0;
};

struct ClusterLabeling {
  std::vector<int> labels;  // cluster label per point, or kNoise
  std::vector<int> rounds;  // round in which the point's cluster appeared; -1 for noise
  std::vector<ClusterInfo> clusters;
  int rounds_run = 1;
  bool converged = true;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t noise_count() const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoise));
  }
  double noise_rate() const noexcept {
    return labels.empty() ? 0.0 : static_cast<double>(noise_count()) / static_cast<double>(labels.size());
  }
};

// ---------------------------------------------------------------------------

inline std::vector<double> core_distances(const DistanceView& d, std::size_t min_samples) {
  const std::size_t n = d.size();
  if (min_samples < 1) throw ValidationError("min_samples must be >= 1");
  if (n <= min_samples)
    throw ValidationError("core distances need more than min_samples=" + std::to_string(min_samples) +
                          " points, got " + std::to_string(n));
  std::vector<double> cores(n);
  std::vector<double> others;
  others.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    others.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others.push_back(d(i, j));
    std::nth_element(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(min_samples - 1), others.end());
    cores[i] = others[min_samples - 1];
  }
  return cores;
}

inline DistanceMatrix mutual_reachability(const DistanceView& d, const std::vector<double>& cores) {
  const std::size_t n = d.size();
  if (cores.size() != n) throw ValidationError("core distance count does not match the matrix");
  DistanceMatrix m(n, "mutual_reachability");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m.set(i, j, std::max({cores[i], cores[j], d(i, j)}));
  return m;
}

namespace detail {

// Strict total order on edges: weight, then smaller endpoint, then larger endpoint.
inline auto edge_key(double w, std::size_t a, std::size_t b) {
  return std::make_tuple(w, std::min(a, b), std::max(a, b));
}

}  // namespace detail

/// Prim's algorithm on the dense matrix. Under the (weight, min index, max index) edge order the
/// spanning tree is unique, so ties always resolve to the lowest index pair.
/// Edges are returned sorted by that order, with u < v.
inline std::vector<MstEdge> build_mst(const DistanceMatrix& m) {
  const std::size_t n = m.size();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);
  std::vector<bool> in_tree(n, false);
  std::vector<double> best_w(n, detail::kInf);
  std::vector<std::size_t> best_from(n, 0);
  in_tree[0] = true;
  for (std::size_t v = 1; v < n; ++v) best_w[v] = m(0, v);
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t pick = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      if (pick == n || detail::edge_key(best_w[v], best_from[v], v) <
                           detail::edge_key(best_w[pick], best_from[pick], pick))
        pick = v;
    }
    in_tree[pick] = true;
    edges.push_back({std::min(pick, best_from[pick]), std::max(pick, best_from[pick]), best_w[pick]});
    for (std::size_t v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      if (detail::edge_key(m(pick, v), pick, v) < detail::edge_key(best_w[v], best_from[v], v)) {
        best_w[v] = m(pick, v);
        best_from[v] = pick;
      }
    }
  }
  std::sort(edges.begin(), edges.end(), [](const MstEdge& a, const MstEdge& b) {
    return detail::edge_key(a.weight, a.u, a.v) < detail::edge_key(b.weight, b.u, b.v);
  });
  return edges;
}

inline double default_lambda_cap(double smallest_positive_distance) {
  return smallest_positive_distance > 0.0 && std::isfinite(smallest_positive_distance)
             ? 1e3 / smallest_positive_distance
             : 1e3;
}

/// Single-linkage hierarchy from the MST, re-read with min_cluster_size: a split that leaves a side
/// smaller than min_cluster_size is an erosion of the parent, not a birth of two clusters.
inline CondensedTree condense(const std::vector<MstEdge>& edges, std::size_t n, std::size_t min_cluster_size,
                              double lambda_cap = 0.0) {
  if (n == 0) throw ValidationError("cannot condense an empty hierarchy");
  if (edges.size() + 1 != n) throw ValidationError("spanning tree must have n - 1 edges");
  if (lambda_cap <= 0.0) {
    double smallest = detail::kInf;
    for (const auto& e : edges)
      if (e.weight > 0.0) smallest = std::min(smallest, e.weight);
    lambda_cap = default_lambda_cap(smallest);
  }
  auto to_lambda = [lambda_cap](double dist) { return dist > 0.0 ? std::min(1.0 / dist, lambda_cap) : lambda_cap; };

  CondensedTree tree;
  tree.n_points = n;
  tree.n_clusters = 1;
  if (n == 1) {
    tree.nodes.push_back({n, 0, lambda_cap, 1});
    return tree;
  }

  // Single-linkage tree: node n + k merges the two components joined by sorted edge k.
  const std::size_t total = 2 * n - 1;
  std::vector<std::size_t> left(total, 0), right(total, 0), size(total, 1);
  std::vector<double> dist(total, 0.0);
  std::vector<std::size_t> uf(total);
  std::iota(uf.begin(), uf.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (uf[x] != x) {
      uf[x] = uf[uf[x]];
      x = uf[x];
    }
    return x;
  };
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const std::size_t node = n + k;
    const std::size_t a = find(edges[k].u), b = find(edges[k].v);
    left[node] = a;
    right[node] = b;
    dist[node] = edges[k].weight;
    size[node] = size[a] + size[b];
    uf[a] = node;
    uf[b] = node;
  }

  auto emit_leaves = [&](std::size_t sub, std::size_t parent_label, double lambda) {
    std::vector<std::size_t> stack{sub};
    while (!stack.empty()) {
      const std::size_t x = stack.back();
      stack.pop_back();
      if (x < n) {
        tree.nodes.push_back({parent_label, x, lambda, 1});
      } else {
        stack.push_back(right[x]);
        stack.push_back(left[x]);
      }
    }
  };

  std::vector<std::size_t> relabel(total, 0);
  const std::size_t slt_root = total - 1;
  relabel[slt_root] = n;
  std::size_t next_label = n + 1;
  std::deque<std::size_t> queue{slt_root};
  while (!queue.empty()) {
    const std::size_t node = queue.front();
    queue.pop_front();
    if (node < n) continue;
    const std::size_t l = left[node], r = right[node];
    const double lambda = to_lambda(dist[node]);
    const std::size_t label = relabel[node];
    const bool big_l = size[l] >= min_cluster_size, big_r = size[r] >= min_cluster_size;
    if (big_l && big_r) {
      for (std::size_t c : {l, r}) {
        relabel[c] = next_label++;
        tree.nodes.push_back({label, relabel[c], lambda, size[c]});
        queue.push_back(c);
      }
    } else {
      for (std::size_t c : {l, r}) {
        const bool big = c == l ? big_l : big_r;
        if (big) {
          relabel[c] = label;
          queue.push_back(c);
        } else {
          emit_leaves(c, label, lambda);
        }
      }
    }
  }
  tree.n_clusters = next_label - n;
  return tree;
}

/// Indices (relative to the root, i.e. id - n_points) of the clusters chosen by excess of mass:
/// a cluster is kept iff its stability is at least the best total its descendants can offer.
inline std::vector<std::size_t> select_clusters(const CondensedTree& tree) {
  const auto stab = tree.stabilities();
  const auto parent = tree.cluster_parents();
  const std::size_t k = tree.n_clusters;
  std::vector<std::vector<std::size_t>> children(k);
  for (std::size_t c = 1; c < k; ++c) children[parent[c] - tree.n_points].push_back(c);

  std::vector<double> best(k, 0.0);
  std::vector<bool> chosen(k, false);
  for (std::size_t c = k; c-- > 0;) {
    double below = 0.0;
    for (std::size_t ch : children[c]) below += best[ch];
    if (!children[c].empty() && below > stab[c]) {
      best[c] = below;
    } else {
      best[c] = stab[c];
      chosen[c] = true;
      std::vector<std::size_t> stack(children[c].begin(), children[c].end());
      while (!stack.empty()) {
        const std::size_t x = stack.back();
        stack.pop_back();
        chosen[x] = false;
        stack.insert(stack.end(), children[x].begin(), children[x].end());
      }
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < k; ++c)
    if (chosen[c]) out.push_back(c);
  return out;
}

/// Flat clustering from the condensed tree. Labels are numbered by each cluster's smallest member.
inline ClusterLabeling extract_flat(const CondensedTree& tree) {
  const std::size_t n = tree.n_points;
  const auto stab = tree.stabilities();
  const auto parent = tree.cluster_parents();
  const auto selected = select_clusters(tree);
  std::vector<bool> is_selected(tree.n_clusters, false);
  for (std::size_t c : selected) is_selected[c] = true;

  double root_final_lambda = 0.0;
  std::vector<std::size_t> departs_from(n, 0);
  std::vector<double> departs_at(n, 0.0);
  for (const auto& e : tree.nodes) {
    if (e.parent == tree.root()) root_final_lambda = std::max(root_final_lambda, e.lambda);
    if (!tree.is_cluster(e.child)) {
      departs_from[e.child] = e.parent - n;
      departs_at[e.child] = e.lambda;
    }
  }

  std::vector<std::size_t> owner(n, tree.n_clusters);  // relative cluster index or n_clusters for noise
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t c = departs_from[p];
    while (!is_selected[c] && c != 0) c = parent[c] - n;
    if (!is_selected[c]) continue;
    if (c == 0 && departs_at[p] < root_final_lambda) continue;
    owner[p] = c;
  }

  std::vector<std::size_t> first_member(tree.n_clusters, n);
  std::vector<std::size_t> count(tree.n_clusters, 0);
  for (std::size_t p = 0; p < n; ++p) {
    if (owner[p] == tree.n_clusters) continue;
    first_member[owner[p]] = std::min(first_member[owner[p]], p);
    ++count[owner[p]];
  }
  std::vector<std::size_t> order;
  for (std::size_t c : selected)
    if (count[c] > 0) order.push_back(c);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return first_member[a] < first_member[b]; });
  std::vector<int> label_of(tree.n_clusters, kNoise);

  ClusterLabeling out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    label_of[order[i]] = static_cast<int>(i);
    out.clusters.push_back({static_cast<int>(i), count[order[i]], stab[order[i]], 0});
  }
  out.labels.assign(n, kNoise);
  out.rounds.assign(n, -1);
  for (std::size_t p = 0; p < n; ++p) {
    if (owner[p] == tree.n_clusters) continue;
    out.labels[p] = label_of[owner[p]];
    out.rounds[p] = 0;
  }
  return out;
}

inline double smallest_positive(const DistanceView& d) {
  double s = detail::kInf;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j)
      if (d(i, j) > 0.0) s = std::min(s, d(i, j));
  return s;
}

/// One HDBSCAN pass. When the view holds no more than min_samples points, min_samples is clamped
/// to size - 1 so that small inputs (two identical series) still form a cluster.
inline ClusterLabeling cluster(const DistanceView& d, const ClusterConfig& cfg) {
  cfg.validate();
  const std::size_t n = d.size();
  if (n < cfg.min_cluster_size)
    throw ValidationError("need at least min_cluster_size=" + std::to_string(cfg.min_cluster_size) +
                          " points, got " + std::to_string(n));
  const std::size_t ms = std::min(cfg.min_samples, n - 1);
  const auto cores = core_distances(d, ms);
  const auto mr = mutual_reachability(d, cores);
  const auto edges = build_mst(mr);
  const auto tree = condense(edges, n, cfg.min_cluster_size, default_lambda_cap(smallest_positive(d)));
  return extract_flat(tree);
}

inline constexpr double kDefaultNoiseThreshold = 0.05;
inline constexpr int kDefaultMaxRounds = 20;

/// Re-clusters the noise of the previous round until noise <= threshold * n (whole corpus), a round
/// finds nothing new, fewer than min_cluster_size points remain, or max_rounds passes have run.
/// Earlier assignments are never touched; labels of round r follow those of round r - 1.
inline ClusterLabeling iterative_cluster(const DistanceMatrix& d, const ClusterConfig& cfg,
                                         double noise_threshold = kDefaultNoiseThreshold,
                                         int max_rounds = kDefaultMaxRounds) {
  if (!(noise_threshold > 0.0 && noise_threshold < 1.0))
    throw ValidationError("noise threshold must lie in (0, 1)");
  if (max_rounds < 1) throw ValidationError("max_rounds must be >= 1");
  const std::size_t n = d.size();
  ClusterLabeling result = cluster(DistanceView(d), cfg);
  const double limit = noise_threshold * static_cast<double>(n);

  int round = 1;
  while (static_cast<double>(result.noise_count()) > limit && round < max_rounds) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < n; ++i)
      if (result.labels[i] == kNoise) active.push_back(i);
    if (active.size() < cfg.min_cluster_size) break;
    const DistanceView sub(d, active);
    const ClusterLabeling step = cluster(sub, cfg);
    if (step.clusters.empty()) break;
    const int offset = static_cast<int>(result.clusters.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
      if (step.labels[k] == kNoise) continue;
      result.labels[active[k]] = offset + step.labels[k];
      result.rounds[active[k]] = round;
    }
    for (auto info : step.clusters) {
      info.label += offset;
      info.round = round;
      result.clusters.push_back(info);
    }
    ++round;
  }
  result.rounds_run = round;
  result.converged = static_cast<double>(result.noise_count()) <= limit;
  return result;
}

}  // namespace popdyn
