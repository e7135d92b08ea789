#pragma once

// Distances between popularity curves: constrained DTW, FastDTW, L1 and tanh-weighted L1.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "popdyn/error.hpp"
#include "popdyn/format.hpp"
#include "popdyn/series.hpp"

namespace popdyn {

class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n, std::string metric_tag = {})
      : n_(n), data_(n * n, 0.0), metric_tag_(std::move(metric_tag)) {}

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * n_ + j]; }
  void set(std::size_t i, std::size_t j, double v) noexcept {
    data_[i * n_ + j] = v;
    data_[j * n_ + i] = v;
  }
  std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * n_, n_}; }
  const std::vector<double>& data() const noexcept { return data_; }

  const std::string& metric_tag() const noexcept { return metric_tag_; }
  void set_metric_tag(std::string tag) { metric_tag_ = std::move(tag); }
  // Wall-clock time spent filling the matrix.
  double seconds() const noexcept { return seconds_; }
  void set_seconds(double s) noexcept { seconds_ = s; }

  double max() const noexcept { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }

  // Elementwise transform; keeps the zero diagonal.
  template <class Fn>
  DistanceMatrix transformed(Fn&& fn) const {
    DistanceMatrix out(n_, metric_tag_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) out.set(i, j, fn((*this)(i, j)));
    return out;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
  std::string metric_tag_;
  double seconds_ = 0.0;
};

// ---------------------------------------------------------------------------
// DTW

struct DtwConfig {
  // Sakoe-Chiba half width R: cells with |i - j| > R are excluded. nullopt = unbounded.
  std::optional<std::size_t> window;

  static DtwConfig unbounded() { return {}; }
  static DtwConfig band(std::size_t r) {
    if (r < 1) throw ValidationError("DTW warping window must be >= 1");
    return DtwConfig{r};
  }
  // R = ceil(fraction * longer length), at least 1.
  static DtwConfig fraction_of_longer(double fraction, std::size_t len_a, std::size_t len_b) {
    const auto longer = static_cast<double>(std::max(len_a, len_b));
    return band(std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * longer))));
  }
};

inline constexpr double kDefaultWindowFraction = 0.10;

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Row-wise corridor [lo[i], hi[i]] of admissible cells, with a cost matrix stored row by row.
struct Corridor {
  std::vector<std::size_t> lo, hi;

  static Corridor full(std::size_t n, std::size_t m) {
    return Corridor{std::vector<std::size_t>(n, 0), std::vector<std::size_t>(n, m - 1)};
  }
};

struct DtwResult {
  double distance = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> path;
};

inline DtwResult dtw_in_corridor(std::span<const double> a, std::span<const double> b, const Corridor& c,
                                 bool want_path) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> offset(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) offset[i + 1] = offset[i] + (c.hi[i] - c.lo[i] + 1);
  std::vector<double> cost(offset[n], kInf);
  auto at = [&](std::size_t i, std::size_t j) -> double {
    if (j < c.lo[i] || j > c.hi[i]) return kInf;
    return cost[offset[i] + (j - c.lo[i])];
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = c.lo[i]; j <= c.hi[i]; ++j) {
      const double d = std::abs(a[i] - b[j]);
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = kInf;
        if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
        if (i > 0) best = std::min(best, at(i - 1, j));
        if (j > c.lo[i]) best = std::min(best, cost[offset[i] + (j - 1 - c.lo[i])]);
      }
      cost[offset[i] + (j - c.lo[i])] = d + best;
    }
  }
  DtwResult r;
  r.distance = at(n - 1, m - 1);
  if (want_path && std::isfinite(r.distance)) {
    std::size_t i = n - 1, j = m - 1;
    r.path.emplace_back(i, j);
    while (i > 0 || j > 0) {
      if (i == 0) {
        --j;
      } else if (j == 0) {
        --i;
      } else {
        const double diag = at(i - 1, j - 1), up = at(i - 1, j), left = at(i, j - 1);
        if (diag <= up && diag <= left) {
          --i;
          --j;
        } else if (up <= left) {
          --i;
        } else {
          --j;
        }
      }
      r.path.emplace_back(i, j);
    }
    std::reverse(r.path.begin(), r.path.end());
  }
  return r;
}

inline void check_dtw_inputs(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("DTW requires non-empty series");
}

inline Corridor band_corridor(std::size_t n, std::size_t m, std::size_t r) {
  Corridor c;
  c.lo.resize(n);
  c.hi.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.lo[i] = i > r ? i - r : 0;
    c.hi[i] = std::min(m - 1, i + r);
  }
  return c;
}

}  // namespace detail

/// Exact DTW with absolute-difference point cost, boundary/monotonicity/continuity
/// constraints and an optional Sakoe-Chiba window. Out-of-window cells cost +inf.
inline double dtw_distance(std::span<const double> a, std::span<const double> b, const DtwConfig& cfg = {}) {
  detail::check_dtw_inputs(a, b);
  const std::size_t n = a.size(), m = b.size();
  if (!cfg.window) return detail::dtw_in_corridor(a, b, detail::Corridor::full(n, m), false).distance;
  const std::size_t r = *cfg.window;
  if (r < 1) throw ValidationError("DTW warping window must be >= 1");
  const std::size_t gap = n > m ? n - m : m - n;
  if (gap > r)
    throw ValidationError("DTW window R=" + std::to_string(r) + " cannot align lengths " + std::to_string(n) +
                          " and " + std::to_string(m));
  return detail::dtw_in_corridor(a, b, detail::band_corridor(n, m, r), false).distance;
}

namespace detail {

inline std::vector<double> halve(std::span<const double> x) {
  std::vector<double> out(x.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (x[2 * i] + x[2 * i + 1]);
  return out;
}

// Projects a coarse warping path onto the finer grid, widened by `radius` coarse cells.
inline Corridor expand_path(const std::vector<std::pair<std::size_t, std::size_t>>& path, std::size_t n,
                            std::size_t m, std::size_t radius) {
  constexpr auto kEmpty = std::numeric_limits<std::size_t>::max();
  Corridor c{std::vector<std::size_t>(n, kEmpty), std::vector<std::size_t>(n, 0)};
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (auto [ci, cj] : path) {
    const auto i0 = static_cast<std::ptrdiff_t>(ci), j0 = static_cast<std::ptrdiff_t>(cj);
    const std::ptrdiff_t jlo = std::max<std::ptrdiff_t>(0, 2 * (j0 - r));
    const std::ptrdiff_t jhi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(m) - 1, 2 * (j0 + r) + 1);
    if (jlo > jhi) continue;
    for (std::ptrdiff_t di = -r; di <= r; ++di) {
      for (std::ptrdiff_t fi = 2 * (i0 + di); fi <= 2 * (i0 + di) + 1; ++fi) {
        if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(n)) continue;
        const auto row = static_cast<std::size_t>(fi);
        c.lo[row] = std::min(c.lo[row], static_cast<std::size_t>(jlo));
        c.hi[row] = std::max(c.hi[row], static_cast<std::size_t>(jhi));
      }
    }
  }
  // Rows left uncovered (odd lengths) inherit their neighbour; hi is kept non-decreasing and
  // each row must touch the previous one so that a monotone path always exists.
  c.lo[0] = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (c.lo[i] == kEmpty) {
      c.lo[i] = c.lo[i - 1];
      c.hi[i] = c.hi[i - 1];
    }
    c.hi[i] = std::max(c.hi[i], c.hi[i - 1]);
    c.lo[i] = std::min(c.lo[i], c.hi[i - 1] + 1);
  }
  c.hi[n - 1] = m - 1;
  for (std::size_t i = 0; i < n; ++i) c.lo[i] = std::min(c.lo[i], c.hi[i]);
  return c;
}

inline DtwResult fastdtw_impl(std::span<const double> a, std::span<const double> b, std::size_t radius) {
  const std::size_t min_size = radius + 2;
  if (a.size() < min_size || b.size() < min_size)
    return dtw_in_corridor(a, b, Corridor::full(a.size(), b.size()), true);
  const auto a2 = halve(a), b2 = halve(b);
  const DtwResult coarse = fastdtw_impl(a2, b2, radius);
  return dtw_in_corridor(a, b, expand_path(coarse.path, a.size(), b.size(), radius), true);
}

}  // namespace detail

/// Multiresolution DTW approximation: coarsen by pairwise averaging, solve, then refine inside
/// the projected path widened by `radius`. Exact whenever radius >= max(len a, len b).
inline double fastdtw_distance(std::span<const double> a, std::span<const double> b, std::size_t radius) {
  detail::check_dtw_inputs(a, b);
  return detail::fastdtw_impl(a, b, radius).distance;
}

// ---------------------------------------------------------------------------
// L1 and weighted L1

inline double l1_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("L1 distance needs series on the same grid");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

inline void check_same_grid(const GriddedSeries& a, const GriddedSeries& b) {
  if (a.n_points() != b.n_points() || std::abs(a.step - b.step) > 1e-12 * std::max(1.0, std::abs(a.step)))
    throw ValidationError("series '" + a.id + "' and '" + b.id + "' are not on the same grid");
}

inline double l1_distance(const GriddedSeries& a, const GriddedSeries& b) {
  check_same_grid(a, b);
  return l1_distance(std::span<const double>(a.values), std::span<const double>(b.values));
}

/// f(t) = (1 - eps) (tanh(beta - alpha t) + 1) / 2 + eps, decreasing from f(0) = 0.99 to the floor eps.
struct PenaltyWeights {
  double epsilon = 0.05;
  double alpha = 0.0;  // 1/seconds
  double beta = 0.0;
  double reference_t = 0.0;  // median t_max of the corpus

  double operator()(double t) const noexcept {
    return (1.0 - epsilon) * (0.5 * (std::tanh(beta - alpha * t) + 1.0)) + epsilon;
  }

  std::vector<double> on_grid(double step, std::size_t n) const {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = (*this)(static_cast<double>(i) * step);
    return w;
  }
};

inline constexpr double kPenaltyAtZero = 0.99;
inline constexpr double kPenaltyAtReference = 0.7;
inline constexpr double kDefaultPenaltyFloor = 0.05;

// Solves f(0) = 0.99 and f(reference_t) = 0.7 in closed form.
inline PenaltyWeights fit_penalty(double median_t_max, double epsilon = kDefaultPenaltyFloor) {
  if (!(median_t_max > 0.0)) throw ValidationError("penalty reference time must be positive");
  if (!(epsilon >= 0.0) || epsilon >= kPenaltyAtReference)
    throw ValidationError("penalty floor epsilon must lie in [0, 0.7)");
  auto inverse = [epsilon](double target) { return std::atanh(2.0 * (target - epsilon) / (1.0 - epsilon) - 1.0); };
  PenaltyWeights w;
  w.epsilon = epsilon;
  w.beta = inverse(kPenaltyAtZero);
  w.alpha = (w.beta - inverse(kPenaltyAtReference)) / median_t_max;
  w.reference_t = median_t_max;
  return w;
}

inline PenaltyWeights fit_penalty(const Corpus& corpus, double epsilon = kDefaultPenaltyFloor) {
  return fit_penalty(corpus.median_t_max, epsilon);
}

// Sum of w_i |a_i - b_i|: the weight multiplies the integrand point by point.
inline double weighted_l1_distance(std::span<const double> a, std::span<const double> b,
                                   std::span<const double> weights) {
  if (a.size() != b.size() || a.size() != weights.size())
    throw ValidationError("weighted L1 distance needs series and weights on the same grid");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += weights[i] * std::abs(a[i] - b[i]);
  return s;
}

inline double weighted_l1_distance(const GriddedSeries& a, const GriddedSeries& b, const PenaltyWeights& w) {
  check_same_grid(a, b);
  const auto weights = w.on_grid(a.step, a.n_points());
  return weighted_l1_distance(a.values, b.values, weights);
}

// ---------------------------------------------------------------------------
// Pairwise matrices

/// Fills a symmetric matrix with fn(i, j) for i < j, one evaluation per unordered pair.
/// Rows are shared between `threads` workers; the result does not depend on scheduling.
/// A failing pair is re-thrown as a StageError naming both ids (lowest failing row wins).
template <class Fn>
DistanceMatrix pairwise_matrix(std::span<const std::string> ids, std::string metric_tag, Fn&& fn,
                               unsigned threads = 0) {
  const std::size_t n = ids.size();
  DistanceMatrix out(n, std::move(metric_tag));
  const auto start = std::chrono::steady_clock::now();
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));

  std::vector<std::exception_ptr> failures(n);
  std::vector<std::size_t> failed_col(n, 0);
  std::atomic<std::size_t> next_row{0};
  auto worker = [&] {
    for (std::size_t i = next_row++; i < n; i = next_row++) {
      std::size_t j = i + 1;
      try {
        for (; j < n; ++j) out.set(i, j, fn(i, j));
      } catch (...) {
        failures[i] = std::current_exception();
        failed_col[i] = j;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!failures[i]) continue;
    try {
      std::rethrow_exception(failures[i]);
    } catch (const std::exception& e) {
      throw StageError("distance", "pair (" + ids[i] + ", " + ids[failed_col[i]] + "): " + e.what());
    }
  }
  out.set_seconds(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return out;
}

inline std::vector<std::string> ids_of(const Corpus& c) {
  std::vector<std::string> ids;
  ids.reserve(c.size());
  for (const auto& g : c.series) ids.push_back(g.id);
  return ids;
}

inline std::vector<std::string> ids_of(std::span<const WindowedSeries> ws) {
  std::vector<std::string> ids;
  ids.reserve(ws.size());
  for (const auto& w : ws) ids.push_back(w.id);
  return ids;
}

inline DistanceMatrix pairwise_l1(const Corpus& c, unsigned threads = 0) {
  const auto ids = ids_of(c);
  return pairwise_matrix(
      ids, "l1", [&](std::size_t i, std::size_t j) { return l1_distance(c.series[i], c.series[j]); }, threads);
}

inline DistanceMatrix pairwise_weighted_l1(const Corpus& c, const PenaltyWeights& w, unsigned threads = 0) {
  const auto ids = ids_of(c);
  const auto weights = w.on_grid(c.step, c.n_points);
  return pairwise_matrix(
      ids, "weighted_l1",
      [&](std::size_t i, std::size_t j) {
        check_same_grid(c.series[i], c.series[j]);
        return weighted_l1_distance(c.series[i].values, c.series[j].values, weights);
      },
      threads);
}

inline std::vector<double> sample_values(const WindowedSeries& w) {
  std::vector<double> v(w.samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = w.samples[i].likes;
  return v;
}

/// Exact DTW over windowed (pre-grid) samples. With `window` unset the band is chosen per pair as
/// max(ceil(fraction * longer), |len a - len b|) so unequal record counts stay comparable.
inline DistanceMatrix pairwise_dtw(std::span<const WindowedSeries> ws, std::optional<std::size_t> window,
                                   double fraction = kDefaultWindowFraction, unsigned threads = 0) {
  const auto ids = ids_of(ws);
  std::vector<std::vector<double>> values;
  values.reserve(ws.size());
  for (const auto& w : ws) values.push_back(sample_values(w));
  return pairwise_matrix(
      ids, "dtw",
      [&](std::size_t i, std::size_t j) {
        const auto& a = values[i];
        const auto& b = values[j];
        DtwConfig cfg;
        if (window) {
          cfg = DtwConfig::band(*window);
        } else {
          const std::size_t gap = a.size() > b.size() ? a.size() - b.size() : b.size() - a.size();
          cfg = DtwConfig::band(std::max(DtwConfig::fraction_of_longer(fraction, a.size(), b.size()).window.value(),
                                         gap));
        }
        return dtw_distance(a, b, cfg);
      },
      threads);
}

inline DistanceMatrix pairwise_fastdtw(std::span<const WindowedSeries> ws, std::size_t radius,
                                       unsigned threads = 0) {
  const auto ids = ids_of(ws);
  std::vector<std::vector<double>> values;
  values.reserve(ws.size());
  for (const auto& w : ws) values.push_back(sample_values(w));
  return pairwise_matrix(
      ids, "fastdtw", [&](std::size_t i, std::size_t j) { return fastdtw_distance(values[i], values[j], radius); },
      threads);
}

inline DistanceMatrix pairwise_euclidean(const std::vector<std::vector<double>>& rows, std::span<const std::string> ids,
                                         unsigned threads = 0) {
  return pairwise_matrix(
      ids, "euclidean",
      [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
          const double d = rows[i][k] - rows[j][k];
          s += d * d;
        }
        return std::sqrt(s);
      },
      threads);
}

// ---------------------------------------------------------------------------
// Serialization: u64 n, then n*n f64 row-major, all little-endian.

namespace detail {

inline void put_u64_le(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int k = 0; k < 8; ++k) buf[k] = static_cast<char>((v >> (8 * k)) & 0xffu);
  out.write(buf, 8);
}

inline std::uint64_t get_u64_le(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw ValidationError("truncated binary stream");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(buf[k]) << (8 * k);
  return v;
}

inline void put_f64_le(std::ostream& out, double x) { put_u64_le(out, std::bit_cast<std::uint64_t>(x)); }
inline double get_f64_le(std::istream& in) { return std::bit_cast<double>(get_u64_le(in)); }

}  // namespace detail

inline void write_binary(std::ostream& out, const DistanceMatrix& d) {
  detail::put_u64_le(out, d.size());
  for (double x : d.data()) detail::put_f64_le(out, x);
}

inline DistanceMatrix read_binary(std::istream& in, std::string metric_tag = {}) {
  const std::uint64_t n = detail::get_u64_le(in);
  if (n > (1u << 20)) throw ValidationError("implausible matrix size in binary header");
  DistanceMatrix d(static_cast<std::size_t>(n), std::move(metric_tag));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double x = detail::get_f64_le(in);
      if (j >= i) d.set(i, j, x);
    }
  return d;
}

inline void write_csv(std::ostream& out, const DistanceMatrix& d, std::span<const std::string> ids) {
  out << "id";
  for (const auto& id : ids) out << ',' << id;
  out << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << ids[i];
    for (std::size_t j = 0; j < d.size(); ++j) out << ',' << format_double(d(i, j));
    out << '\n';
  }
}

inline nlohmann::json sidecar_json(const DistanceMatrix& d) {
  return {{"metric", d.metric_tag()}, {"n", d.size()}, {"seconds", d.seconds()}};
}

}  // namespace popdyn
