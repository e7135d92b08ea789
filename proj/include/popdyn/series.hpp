#pragma once

// Popularity curves: ingestion, dynamics window, uniform regridding, corpus alignment.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "popdyn/error.hpp"

namespace popdyn {

struct Sample {
  double t = 0.0;      // seconds since first record
  double likes = 0.0;  // cumulative like count
};

struct LikeSeries {
  std::string id;
  std::vector<Sample> samples;
};

struct WindowedSeries {
  std::string id;
  std::vector<Sample> samples;  // truncated to t <= t_max
  double t10 = 0.0;
  double t95 = 0.0;
  double delta_t = 0.0;
  double t_max = 0.0;
  double n_max_likes = 0.0;  // maximum of the original, untruncated series
  bool clipped = false;      // t_max lies beyond the last recorded sample
};

struct GriddedSeries {
  std::string id;
  double step = 0.0;
  std::vector<double> values;  // values[i] is the curve at t = i * step
  double t_max = 0.0;
  double n_max_likes = 0.0;

  std::size_t n_points() const noexcept { return values.size(); }
};

enum class AlignMode { pad, truncate };

struct Corpus {
  std::vector<GriddedSeries> series;
  double step = 0.0;
  std::size_t n_points = 0;
  double median_t_max = 0.0;

  std::size_t size() const noexcept { return series.size(); }
};

inline constexpr double kDefaultGridStep = 300.0;

namespace detail {

inline void validate_series(const LikeSeries& s) {
  if (s.samples.size() < 2)
    throw ValidationError("series '" + s.id + "' has fewer than 2 samples");
  for (std::size_t i = 1; i < s.samples.size(); ++i) {
    if (!(s.samples[i].t > s.samples[i - 1].t))
      throw ValidationError("series '" + s.id + "' has non-increasing timestamps");
    if (s.samples[i].likes < s.samples[i - 1].likes)
      throw ValidationError("series '" + s.id + "' has decreasing like count (" +
                            std::to_string(static_cast<long long>(s.samples[i - 1].likes)) + " -> " +
                            std::to_string(static_cast<long long>(s.samples[i].likes)) + ")");
  }
}

// Groups raw records by id (first-appearance order), sorts by time, rebases to t = 0.
class SeriesCollector {
 public:
  void add(std::string id, double t, double likes) {
    auto [it, inserted] = index_.try_emplace(id, series_.size());
    if (inserted) series_.push_back(LikeSeries{std::move(id), {}});
    series_[it->second].samples.push_back({t, likes});
  }

  std::vector<LikeSeries> finish() && {
    for (auto& s : series_) {
      std::stable_sort(s.samples.begin(), s.samples.end(),
                       [](const Sample& a, const Sample& b) { return a.t < b.t; });
      validate_series(s);
      const double t0 = s.samples.front().t;
      for (auto& p : s.samples) p.t -= t0;
    }
    return std::move(series_);
  }

 private:
  std::vector<LikeSeries> series_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline double parse_likes(const nlohmann::json& v, std::size_t line) {
  if (v.is_number_unsigned() || v.is_number_integer()) {
    const auto x = v.get<long long>();
    if (x < 0) throw ParseError(line, "\"likes\" must be non-negative");
    return static_cast<double>(x);
  }
  if (v.is_number_float()) {
    const double x = v.get<double>();
    if (!(x >= 0.0) || std::floor(x) != x) throw ParseError(line, "\"likes\" must be a non-negative integer");
    return x;
  }
  throw ParseError(line, "\"likes\" must be an integer");
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_csv_row(std::string_view row, std::size_t line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < row.size(); ++i) {
    const char c = row[i];
    if (quoted) {
      if (c == '"' && i + 1 < row.size() && row[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw ParseError(line, "unterminated quote");
  out.emplace_back(trim(cur));
  return out;
}

inline double parse_number(const std::string& s, std::size_t line, const char* field) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError(line, std::string("field '") + field + "' is not a number");
  }
  if (used != s.size() || !std::isfinite(x))
    throw ParseError(line, std::string("field '") + field + "' is not a number");
  return x;
}

// Earliest time at which the piecewise-linear curve reaches `target`.
inline std::optional<double> time_reaching(std::span<const double> times, std::span<const double> values,
                                           double target) {
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k] >= target) {
      if (k == 0) return times[0];
      const double y0 = values[k - 1], y1 = values[k];
      const double frac = (target - y0) / (y1 - y0);
      return times[k - 1] + frac * (times[k] - times[k - 1]);
    }
  }
  return std::nullopt;
}

inline std::vector<double> key_instants_impl(std::span<const double> times, std::span<const double> values,
                                             double reference_max, std::span<const double> percents,
                                             const std::string& id) {
  if (!(reference_max > 0.0)) throw ValidationError("inert series '" + id + "': maximum like count is 0");
  std::vector<double> out;
  out.reserve(percents.size());
  for (double p : percents) {
    if (!(p > 0.0 && p <= 100.0)) throw ValidationError("percent must lie in (0, 100]");
    const auto t = time_reaching(times, values, p / 100.0 * reference_max);
    if (!t)
      throw ValidationError("series '" + id + "' never reaches " + std::to_string(p) + "% of its maximum");
    out.push_back(*t);
  }
  return out;
}

inline std::vector<double> linear_resample(std::span<const Sample> samples, double step, std::size_t n) {
  std::vector<double> values(n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * step;
    while (k + 1 < samples.size() && samples[k + 1].t <= t) ++k;
    if (k + 1 >= samples.size() || t <= samples[k].t) {
      values[i] = samples[k].likes;
      continue;
    }
    const Sample& a = samples[k];
    const Sample& b = samples[k + 1];
    values[i] = a.likes + (t - a.t) / (b.t - a.t) * (b.likes - a.likes);
  }
  // Interpolation can round a hair below the previous value; keep the curve monotone.
  for (std::size_t i = 1; i < n; ++i) values[i] = std::max(values[i], values[i - 1]);
  return values;
}

inline std::size_t grid_length(double span, double step) {
  return static_cast<std::size_t>(std::floor(span / step + 1e-9)) + 1;
}

}  // namespace detail

/// Reads JSONL records `{"id": string, "t": number, "likes": integer}`. Lines for one id
/// may be interleaved with other ids; blank lines are skipped.
inline std::vector<LikeSeries> ingest_jsonl(std::istream& in) {
  detail::SeriesCollector collector;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(lineno, "expected a JSON object");
    if (!obj.contains("id") || !obj["id"].is_string()) throw ParseError(lineno, "missing string field \"id\"");
    if (!obj.contains("t") || !obj["t"].is_number()) throw ParseError(lineno, "missing numeric field \"t\"");
    if (!obj.contains("likes")) throw ParseError(lineno, "missing field \"likes\"");
    const double t = obj["t"].get<double>();
    if (!std::isfinite(t)) throw ParseError(lineno, "\"t\" must be finite");
    collector.add(obj["id"].get<std::string>(), t, detail::parse_likes(obj["likes"], lineno));
  }
  return std::move(collector).finish();
}

/// CSV alternative with header `id,t,likes`.
inline std::vector<LikeSeries> ingest_csv(std::istream& in) {
  detail::SeriesCollector collector;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_row(line, lineno);
    if (!header_seen) {
      if (fields.size() != 3 || fields[0] != "id" || fields[1] != "t" || fields[2] != "likes")
        throw ParseError(lineno, "expected header 'id,t,likes'");
      header_seen = true;
      continue;
    }
    if (fields.size() != 3) throw ParseError(lineno, "expected 3 fields");
    const double t = detail::parse_number(fields[1], lineno, "t");
    const double likes = detail::parse_number(fields[2], lineno, "likes");
    if (likes < 0.0 || std::floor(likes) != likes)
      throw ParseError(lineno, "field 'likes' must be a non-negative integer");
    collector.add(std::move(fields[0]), t, likes);
  }
  return std::move(collector).finish();
}

/// Dispatches on extension: `.csv` is read as CSV, anything else as JSONL.
inline std::vector<LikeSeries> ingest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open input file '" + path + "'");
  const bool csv = path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
  return csv ? ingest_csv(in) : ingest_jsonl(in);
}

/// Keeps the part of the curve carrying the dynamics: [0, t10 + 1.2 (t95 - t10)].
/// t_max is never extrapolated; when it exceeds the record the window is marked `clipped`.
inline WindowedSeries extract_window(const LikeSeries& s) {
  detail::validate_series(s);
  const std::size_t n = s.samples.size();
  std::vector<double> times(n), values(n);
  for (std::size_t i = 0; i < n; ++i) {
    times[i] = s.samples[i].t;
    values[i] = s.samples[i].likes;
  }
  const double max_likes = *std::max_element(values.begin(), values.end());
  if (!(max_likes > 0.0)) throw ValidationError("inert series '" + s.id + "': maximum like count is 0");

  WindowedSeries w;
  w.id = s.id;
  w.n_max_likes = max_likes;
  w.t10 = *detail::time_reaching(times, values, 0.10 * max_likes);
  w.t95 = *detail::time_reaching(times, values, 0.95 * max_likes);
  w.delta_t = w.t95 - w.t10;
  w.t_max = w.t10 + 1.2 * w.delta_t;
  w.clipped = w.t_max > times.back();
  for (const auto& p : s.samples) {
    if (p.t <= w.t_max) w.samples.push_back(p);
  }
  return w;
}

/// Linear interpolation of the windowed samples at t = 0, step, 2 step, ... up to the last sample.
inline GriddedSeries regrid(const WindowedSeries& w, double step) {
  if (!(step > 0.0)) throw ValidationError("grid step must be positive");
  if (w.samples.empty()) throw ValidationError("series '" + w.id + "' has no samples");
  const std::size_t n = detail::grid_length(w.samples.back().t, step);
  return GriddedSeries{w.id, step, detail::linear_resample(w.samples, step, n), w.t_max, w.n_max_likes};
}

/// Grids the whole recorded history of `s` while keeping the window metadata of `w`.
/// Used by the truncate alignment, which cuts every curve at the corpus-wide maximum t_max.
inline GriddedSeries regrid_full(const LikeSeries& s, const WindowedSeries& w, double step) {
  if (!(step > 0.0)) throw ValidationError("grid step must be positive");
  detail::validate_series(s);
  const std::size_t n = detail::grid_length(s.samples.back().t, step);
  return GriddedSeries{s.id, step, detail::linear_resample(s.samples, step, n), w.t_max, w.n_max_likes};
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ValidationError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Brings every series onto one grid length. `pad` repeats each last value up to the longest
/// series; `truncate` cuts or pads to the length implied by the largest t_max in the corpus.
inline Corpus align_corpus(std::vector<GriddedSeries> series, AlignMode mode = AlignMode::pad) {
  if (series.empty()) throw ValidationError("cannot align an empty corpus");
  const double step = series.front().step;
  std::size_t longest = 0;
  double max_t_max = 0.0;
  std::vector<double> t_maxes;
  t_maxes.reserve(series.size());
  for (const auto& g : series) {
    if (std::abs(g.step - step) > 1e-12 * std::max(1.0, std::abs(step)))
      throw ValidationError("series '" + g.id + "' uses a different grid step");
    if (g.values.empty()) throw ValidationError("series '" + g.id + "' is empty");
    longest = std::max(longest, g.values.size());
    max_t_max = std::max(max_t_max, g.t_max);
    t_maxes.push_back(g.t_max);
  }
  const std::size_t target = mode == AlignMode::pad ? longest : detail::grid_length(max_t_max, step);
  for (auto& g : series) g.values.resize(target, g.values.back());

  Corpus c;
  c.step = step;
  c.n_points = target;
  c.median_t_max = median(std::move(t_maxes));
  c.series = std::move(series);
  if (!(c.median_t_max > 0.0)) throw ValidationError("median t_max of the corpus is not positive");
  return c;
}

/// t_p for each percent p: earliest time the curve reaches p% of the original maximum.
inline std::vector<double> key_instants(const WindowedSeries& w, std::span<const double> percents) {
  std::vector<double> times(w.samples.size()), values(w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    times[i] = w.samples[i].t;
    values[i] = w.samples[i].likes;
  }
  return detail::key_instants_impl(times, values, w.n_max_likes, percents, w.id);
}

inline std::vector<double> key_instants(const GriddedSeries& g, std::span<const double> percents) {
  std::vector<double> times(g.values.size());
  for (std::size_t i = 0; i < times.size(); ++i) times[i] = static_cast<double>(i) * g.step;
  const double mx = g.values.empty() ? 0.0 : *std::max_element(g.values.begin(), g.values.end());
  return detail::key_instants_impl(times, g.values, mx, percents, g.id);
}

}  // namespace popdyn
