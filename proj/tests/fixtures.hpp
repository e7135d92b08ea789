#pragma once

// Shared synthetic fixtures for clustering tests.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "oracles/random.hpp"
#include "popdyn/metrics.hpp"

namespace fixtures {

inline popdyn::DistanceMatrix euclidean(const std::vector<std::vector<double>>& pts) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < pts.size(); ++i) ids.push_back(std::to_string(i));
  return popdyn::pairwise_euclidean(pts, ids, 1);
}

// Random planar points in a few loose clumps, so matrices carry some structure.
inline std::vector<std::vector<double>> clumpy_points(oracle::Rng& rng, std::size_t n) {
  const auto clumps = static_cast<std::size_t>(rng.integer(1, 3));
  std::vector<std::vector<double>> centres;
  for (std::size_t c = 0; c < clumps; ++c) centres.push_back({rng.uniform(0, 20), rng.uniform(0, 20)});
  std::vector<std::vector<double>> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = centres[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(clumps) - 1))];
    const double spread = rng.uniform(0.3, 3.0);
    pts.push_back({c[0] + spread * rng.normal(), c[1] + spread * rng.normal()});
  }
  return pts;
}

// Nested densities: every centre carries Gaussian layers whose spread grows by `ratio` per layer.
// A pass of HDBSCAN keeps the dense cores and erodes the wide layers around them into noise.
inline std::vector<std::vector<double>> layered_points(oracle::Rng& rng, std::size_t n, std::size_t centres = 5,
                                                       std::size_t layers = 3, double ratio = 8.0) {
  std::vector<std::vector<double>> pts;
  const std::size_t per_group = n / (centres * layers);
  for (std::size_t layer = 0; layer < layers; ++layer) {
    const double spread = std::pow(ratio, static_cast<double>(layer));
    for (std::size_t c = 0; c < centres; ++c) {
      const bool last = layer + 1 == layers && c + 1 == centres;
      const std::size_t count = last ? n - pts.size() : per_group;
      const double cx = 1e4 * static_cast<double>(c);
      for (std::size_t k = 0; k < count; ++k) pts.push_back({cx + spread * rng.normal(), spread * rng.normal()});
    }
  }
  return pts;
}

}  // namespace fixtures
