#pragma once

// Minimum spanning tree weight by enumerating every labelled tree through its Pruefer sequence.
// n^(n-2) trees: keep n <= 8.

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

inline std::vector<std::pair<std::size_t, std::size_t>> pruefer_decode(const std::vector<std::size_t>& seq,
                                                                       std::size_t n) {
  std::vector<std::size_t> degree(n, 1);
  for (auto x : seq) ++degree[x];
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (auto x : seq) {
    for (std::size_t leaf = 0; leaf < n; ++leaf) {
      if (degree[leaf] == 1) {
        edges.emplace_back(leaf, x);
        --degree[leaf];
        --degree[x];
        break;
      }
    }
  }
  std::size_t u = n, v = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (degree[i] != 1) continue;
    (u == n ? u : v) = i;
  }
  edges.emplace_back(u, v);
  return edges;
}

inline double mst_weight_bruteforce(const std::function<double(std::size_t, std::size_t)>& w, std::size_t n) {
  if (n < 2) return 0.0;
  if (n == 2) return w(0, 1);
  std::vector<std::size_t> seq(n - 2, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    double total = 0.0;
    for (auto [a, b] : pruefer_decode(seq, n)) total += w(a, b);
    if (total < best) best = total;
    std::size_t k = 0;
    while (k < seq.size() && ++seq[k] == n) seq[k++] = 0;
    if (k == seq.size()) break;
  }
  return best;
}

}  // namespace oracle
