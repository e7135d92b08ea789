#pragma once

// Tweet vector: intensity, mean slope, key instants, boost increases and a 4-d embedding of the
// distance matrix.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popdyn/autoencoder.hpp"
#include "popdyn/error.hpp"
#include "popdyn/metrics.hpp"
#include "popdyn/pca.hpp"
#include "popdyn/series.hpp"
#include "popdyn/tvd.hpp"

namespace popdyn {

// ---------------------------------------------------------------------------
// Boosts

inline std::vector<double> derivative_estimate(const GriddedSeries& g) {
  if (g.n_points() < 2) throw ValidationError("series '" + g.id + "' needs 2 grid points for a derivative");
  std::vector<double> d(g.n_points() - 1);
  for (std::size_t i = 0; i + 1 < g.n_points(); ++i) d[i] = (g.values[i + 1] - g.values[i]) / g.step;
  return d;
}

struct SignCode {
  std::vector<int> symbols;  // +1, 0, -1; symbol k is the variation between derivative samples k and k+1

  // Zeros removed and runs of equal symbols merged.
  std::vector<int> compressed() const {
    std::vector<int> out;
    for (int s : symbols)
      if (s != 0 && (out.empty() || out.back() != s)) out.push_back(s);
    return out;
  }
};

inline constexpr double kSignNoiseFraction = 1e-3;

/// Signs of the successive differences of a denoised derivative. Differences smaller than
/// 1e-3 of the largest absolute difference count as numerical noise.
inline SignCode boost_encode(std::span<const double> denoised) {
  SignCode code;
  if (denoised.size() < 2) return code;
  std::vector<double> diff(denoised.size() - 1);
  double largest = 0.0;
  for (std::size_t i = 0; i + 1 < denoised.size(); ++i) {
    diff[i] = denoised[i + 1] - denoised[i];
    largest = std::max(largest, std::abs(diff[i]));
  }
  const double floor = kSignNoiseFraction * largest;
  code.symbols.reserve(diff.size());
  for (double v : diff) code.symbols.push_back(largest == 0.0 || std::abs(v) < floor ? 0 : (v > 0.0 ? 1 : -1));
  return code;
}

struct Boost {
  std::size_t start_index = 0;  // grid indices
  std::size_t end_index = 0;
  double raw_increase = 0.0;  // likes gained between start and end
};

struct BoostProfile {
  std::vector<Boost> boosts;
  std::size_t count() const noexcept { return boosts.size(); }
};

/// A boost opens on +1 and closes on the next -1. A leading -1 means the curve starts inside a
/// boost; a trailing +1 means it ends inside one. Symbol k sits on grid point k + 1.
inline BoostProfile boost_extract(const GriddedSeries& g, const SignCode& code) {
  if (g.n_points() < 2 || code.symbols.size() + 2 != g.n_points())
    throw ValidationError("sign code of series '" + g.id + "' does not match its grid");
  BoostProfile out;
  auto push = [&](std::size_t start, std::size_t end) {
    const double inc = g.values[end] - g.values[start];
    if (inc > 0.0) out.boosts.push_back({start, end, inc});
  };
  const auto first = std::find_if(code.symbols.begin(), code.symbols.end(), [](int s) { return s != 0; });
  bool open = first != code.symbols.end() && *first == -1;
  std::size_t start = 0;
  for (std::size_t k = 0; k < code.symbols.size(); ++k) {
    const int s = code.symbols[k];
    if (s == 1 && !open) {
      open = true;
      start = k + 1;
    } else if (s == -1 && open) {
      push(start, k + 1);
      open = false;
    }
  }
  if (open) push(start, g.n_points() - 1);
  return out;
}

enum class DerivativeScale { raw, relative };

struct BoostConfig {
  double lambda = 0.0;
  // relative: derivative divided by the series maximum before denoising, so one lambda fits
  // curves whose amplitudes differ by orders of magnitude.
  DerivativeScale scale = DerivativeScale::relative;
};

inline std::vector<double> boost_signal(const GriddedSeries& g, DerivativeScale scale) {
  auto d = derivative_estimate(g);
  if (scale == DerivativeScale::relative) {
    const double mx = g.values.empty() ? 0.0 : *std::max_element(g.values.begin(), g.values.end());
    if (mx > 0.0)
      for (double& v : d) v /= mx;
  }
  return d;
}

inline BoostProfile extract_boosts(const GriddedSeries& g, const BoostConfig& cfg) {
  const auto denoised = tv_denoise(boost_signal(g, cfg.scale), cfg.lambda);
  return boost_extract(g, boost_encode(denoised));
}

struct LambdaSelection {
  double lambda = 0.0;
  std::size_t max_boosts = 0;  // corpus maximum at the returned lambda
  bool cap_reached = true;
  std::string warning;
};

struct LambdaSearch {
  std::size_t grid_points = 61;
  double low_ratio = 1e-6;         // grid spans [low_ratio * upper, high_ratio * upper]
  double high_ratio = 1.0;
  double bisection_ratio = 1.01;   // stop once hi / lo is within 1%
};

/// Smallest lambda on a log grid for which no series has more than `cap` boosts, refined by
/// log-scale bisection. The grid's upper end is the lambda above which every denoised signal is
/// constant: 2 max_k |sum_{i<=k} (O_i - mean O)|.
inline LambdaSelection select_lambda(std::span<const GriddedSeries> corpus, std::size_t cap,
                                     DerivativeScale scale = DerivativeScale::relative, const LambdaSearch& search = {}) {
  if (corpus.empty()) throw ValidationError("lambda selection needs a non-empty corpus");
  std::vector<std::vector<double>> signals;
  signals.reserve(corpus.size());
  double upper = 0.0;
  for (const auto& g : corpus) {
    signals.push_back(boost_signal(g, scale));
    const auto& o = signals.back();
    const double mean = std::accumulate(o.begin(), o.end(), 0.0) / static_cast<double>(o.size());
    double run = 0.0;
    for (double v : o) {
      run += v - mean;
      upper = std::max(upper, 2.0 * std::abs(run));
    }
  }
  if (!(upper > 0.0)) upper = 1.0;
  if (!(search.high_ratio > search.low_ratio) || !(search.low_ratio > 0.0))
    throw ValidationError("lambda search needs 0 < low_ratio < high_ratio");
  const double lo_end = upper * search.low_ratio;
  upper *= search.high_ratio;

  auto max_count = [&](double lambda) {
    std::size_t worst = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto code = boost_encode(tv_denoise(signals[i], lambda));
      worst = std::max(worst, boost_extract(corpus[i], code).count());
    }
    return worst;
  };

  const std::size_t points = std::max<std::size_t>(2, search.grid_points);
  auto grid = [&](std::size_t k) {
    return lo_end * std::pow(upper / lo_end, static_cast<double>(k) / static_cast<double>(points - 1));
  };

  LambdaSelection sel;
  std::optional<std::size_t> found;
  for (std::size_t k = 0; k < points; ++k) {
    if (max_count(grid(k)) <= cap) {
      found = k;
      break;
    }
  }
  if (!found) {
    sel.lambda = upper;
    sel.max_boosts = max_count(upper);
    sel.cap_reached = false;
    sel.warning = "boost cap " + std::to_string(cap) + " unreachable; using the largest lambda";
    return sel;
  }
  double hi = grid(*found);
  if (*found > 0) {
    double lo = grid(*found - 1);
    while (hi / lo > search.bisection_ratio) {
      const double mid = std::sqrt(lo * hi);
      if (max_count(mid) <= cap)
        hi = mid;
      else
        lo = mid;
    }
  }
  sel.lambda = hi;
  sel.max_boosts = max_count(hi);
  return sel;
}

// ---------------------------------------------------------------------------
// Key instants

inline constexpr std::array<double, 9> kKeyPercents{10, 20, 30, 40, 50, 60, 70, 80, 90};
inline constexpr std::array<double, 3> kDefaultTriplet{10, 50, 90};

struct KeyInstantSelection {
  std::array<double, 3> chosen = kDefaultTriplet;  // what the pipeline uses
  std::array<double, 3> least_correlated = kDefaultTriplet;
  double triplet_score = 0.0;     // sum of absolute pairwise correlations of least_correlated
  double pca_top3_ratio = 0.0;    // cumulative explained variance of the first 3 components
  bool degenerate = false;        // some t_p has zero variance across the corpus
};

inline std::vector<std::vector<double>> correlation_matrix(const std::vector<std::vector<double>>& rows,
                                                           bool& degenerate) {
  const std::size_t n = rows.size(), f = rows.front().size();
  std::vector<double> mean(f, 0.0), sd(f, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < f; ++j) mean[j] += r[j] / static_cast<double>(n);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < f; ++j) sd[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
  degenerate = false;
  for (std::size_t j = 0; j < f; ++j) {
    sd[j] = std::sqrt(sd[j]);
    if (!(sd[j] > 0.0)) degenerate = true;
  }
  std::vector<std::vector<double>> c(f, std::vector<double>(f, 1.0));
  if (degenerate) return c;
  for (std::size_t a = 0; a < f; ++a)
    for (std::size_t b = a + 1; b < f; ++b) {
      double s = 0.0;
      for (const auto& r : rows) s += (r[a] - mean[a]) * (r[b] - mean[b]);
      c[a][b] = c[b][a] = s / (sd[a] * sd[b]);
    }
  return c;
}

/// Diagnostic only: the pipeline keeps (t10, t50, t90). Ties within 1e-9 favour (10, 50, 90),
/// then the lexicographically smallest triplet.
inline KeyInstantSelection select_key_instants(std::span<const WindowedSeries> corpus) {
  if (corpus.size() < 3) throw ValidationError("key instant selection needs at least 3 series");
  std::vector<std::vector<double>> rows;
  rows.reserve(corpus.size());
  for (const auto& w : corpus) rows.push_back(key_instants(w, kKeyPercents));

  KeyInstantSelection sel;
  sel.pca_top3_ratio = pca_fit(rows).cumulative_ratio(3);
  bool degenerate = false;
  const auto corr = correlation_matrix(rows, degenerate);
  sel.degenerate = degenerate;
  if (degenerate) {
    sel.triplet_score = std::numeric_limits<double>::quiet_NaN();
    return sel;
  }
  auto score = [&](std::size_t a, std::size_t b, std::size_t c) {
    return std::abs(corr[a][b]) + std::abs(corr[a][c]) + std::abs(corr[b][c]);
  };
  constexpr std::size_t d10 = 0, d50 = 4, d90 = 8;
  double best = score(d10, d50, d90);
  std::array<std::size_t, 3> arg{d10, d50, d90};
  for (std::size_t a = 0; a < 9; ++a)
    for (std::size_t b = a + 1; b < 9; ++b)
      for (std::size_t c = b + 1; c < 9; ++c) {
        const double s = score(a, b, c);
        if (s < best - 1e-9) {
          best = s;
          arg = {a, b, c};
        }
      }
  sel.triplet_score = best;
  sel.least_correlated = {kKeyPercents[arg[0]], kKeyPercents[arg[1]], kKeyPercents[arg[2]]};
  return sel;
}

// ---------------------------------------------------------------------------
// Distance-matrix embedding

enum class SimilarityKernel { linear, exponential };

struct EmbedConfig {
  std::size_t hidden = kDefaultHidden;
  std::size_t latent = kDefaultLatent;
  int epochs = kDefaultEpochs;
  double step_size = kDefaultStepSize;
  std::uint64_t seed = 0;
  SimilarityKernel kernel = SimilarityKernel::linear;
};

struct Embedding {
  std::vector<std::vector<double>> rows;  // n x latent
  std::vector<double> loss_trace;
  std::string warning;
};

/// linear: s = 1 - d / d_max. exponential: s = exp(-d / mean off-diagonal distance).
inline std::vector<std::vector<double>> similarity_rows(const DistanceMatrix& d, SimilarityKernel kernel) {
  const std::size_t n = d.size();
  const double dmax = d.max();
  double scale = dmax;
  if (kernel == SimilarityKernel::exponential && n > 1) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) sum += d(i, j);
    scale = sum / static_cast<double>(n * (n - 1) / 2);
  }
  std::vector<std::vector<double>> s(n, std::vector<double>(n, 1.0));
  if (!(scale > 0.0)) return s;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      s[i][j] = kernel == SimilarityKernel::linear ? 1.0 - d(i, j) / scale : std::exp(-d(i, j) / scale);
  return s;
}

/// Trains an autoencoder on the similarity rows of `d` and returns every row's latent code.
/// A matrix of zeros (identical corpus) short-circuits to a zero embedding with a warning.
inline Embedding embed_distance_matrix(const DistanceMatrix& d, const EmbedConfig& cfg) {
  const std::size_t n = d.size();
  Embedding e;
  if (!(d.max() > 0.0)) {
    e.rows.assign(n, std::vector<double>(cfg.latent, 0.0));
    e.warning = "all pairwise distances are zero; embedding set to zero";
    return e;
  }
  const auto rows = similarity_rows(d, cfg.kernel);
  auto model = ae_init(n, cfg.seed, cfg.hidden, cfg.latent);
  auto trained = ae_train(std::move(model), rows, cfg.epochs, cfg.step_size);
  e.loss_trace = std::move(trained.loss_trace);
  e.rows.reserve(n);
  for (const auto& r : rows) e.rows.push_back(ae_encode(trained.model, r));
  return e;
}

// ---------------------------------------------------------------------------
// Tweet vector

struct TweetVector {
  std::string id;
  double n_max_likes = 0.0;
  double slope_mean = 0.0;  // likes per second over the window
  double t10 = 0.0, t50 = 0.0, t90 = 0.0;
  double boost1 = 0.0, boost2 = 0.0, boost3 = 0.0;
  std::array<double, 4> embedding{};

  static constexpr std::size_t kSize = 12;
  static constexpr std::array<const char*, kSize> kNames{"n_max_likes", "slope_mean", "t10", "t50",
                                                         "t90",         "boost1",     "boost2", "boost3",
                                                         "d1",          "d2",         "d3",     "d4"};

  std::array<double, kSize> components() const {
    return {n_max_likes, slope_mean, t10, t50, t90, boost1, boost2, boost3,
            embedding[0], embedding[1], embedding[2], embedding[3]};
  }
};

inline std::vector<TweetVector> assemble(std::span<const WindowedSeries> windows, std::span<const BoostProfile> boosts,
                                         std::span<const std::array<double, 3>> instants, const Embedding& embedding) {
  const std::size_t n = windows.size();
  if (boosts.size() != n || instants.size() != n || embedding.rows.size() != n)
    throw ValidationError("tweet vector inputs are not aligned (" + std::to_string(n) + " windows, " +
                          std::to_string(boosts.size()) + " boost profiles, " + std::to_string(instants.size()) +
                          " instant triplets, " + std::to_string(embedding.rows.size()) + " embeddings)");
  std::vector<TweetVector> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& w = windows[i];
    auto& v = out[i];
    v.id = w.id;
    v.n_max_likes = w.n_max_likes;
    const double duration = w.samples.back().t - w.samples.front().t;
    v.slope_mean = duration > 0.0 ? (w.samples.back().likes - w.samples.front().likes) / duration : 0.0;
    v.t10 = instants[i][0];
    v.t50 = instants[i][1];
    v.t90 = instants[i][2];
    auto sorted = boosts[i].boosts;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Boost& a, const Boost& b) { return a.start_index < b.start_index; });
    double* slots[3] = {&v.boost1, &v.boost2, &v.boost3};
    for (std::size_t k = 0; k < 3 && k < sorted.size(); ++k) *slots[k] = sorted[k].raw_increase;
    const auto& e = embedding.rows[i];
    if (e.size() != 4) throw ValidationError("embedding rows must have 4 components");
    std::copy(e.begin(), e.end(), v.embedding.begin());
  }
  return out;
}

struct StandardizedMatrix {
  std::vector<double> mean;  // per retained component
  std::vector<double> stddev;
  std::vector<std::size_t> kept;     // indices into the original components
  std::vector<std::size_t> dropped;  // zero-variance components
  std::vector<std::vector<double>> rows;
};

/// Per-component z-scores with the sample (n - 1) standard deviation; constant components dropped.
inline StandardizedMatrix standardize(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 2) throw ValidationError("standardization needs at least 2 vectors");
  const std::size_t n = rows.size(), f = rows.front().size();
  StandardizedMatrix out;
  for (std::size_t j = 0; j < f; ++j) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[j];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (const auto& r : rows) ss += (r[j] - mean) * (r[j] - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
      out.kept.push_back(j);
      out.mean.push_back(mean);
      out.stddev.push_back(sd);
    } else {
      out.dropped.push_back(j);
    }
  }
  if (out.kept.empty()) throw ValidationError("degenerate corpus: every component is constant");
  out.rows.assign(n, std::vector<double>(out.kept.size()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < out.kept.size(); ++k)
      out.rows[i][k] = (rows[i][out.kept[k]] - out.mean[k]) / out.stddev[k];
  return out;
}

inline StandardizedMatrix standardize(std::span<const TweetVector> vectors) {
  std::vector<std::vector<double>> rows;
  rows.reserve(vectors.size());
  for (const auto& v : vectors) {
    const auto c = v.components();
    rows.emplace_back(c.begin(), c.end());
  }
  return standardize(rows);
}

}  // namespace popdyn
