#pragma once

// Seeded synthetic popularity corpus: four curve families with well-separated like scales.
// Draws use raw 64-bit engine output so files are identical across standard libraries.

#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "popdyn/error.hpp"
#include "popdyn/format.hpp"
#include "popdyn/series.hpp"

namespace popdyn {

enum class Profile { single_burst, double_boost, slow_viral, near_inert };

inline constexpr std::array<Profile, 4> kAllProfiles{Profile::single_burst, Profile::double_boost,
                                                     Profile::slow_viral, Profile::near_inert};

inline std::string profile_name(Profile p) {
  switch (p) {
    case Profile::single_burst: return "single-burst";
    case Profile::double_boost: return "double-boost";
    case Profile::slow_viral: return "slow-viral";
    case Profile::near_inert: return "near-inert";
  }
  return "unknown";
}

inline Profile parse_profile(const std::string& name) {
  for (Profile p : kAllProfiles)
    if (profile_name(p) == name) return p;
  throw ValidationError("unknown profile '" + name + "' (expected single-burst, double-boost, slow-viral or near-inert)");
}

struct SynthConfig {
  std::size_t n = 200;
  std::uint64_t seed = 0;
  std::vector<Profile> profiles{kAllProfiles.begin(), kAllProfiles.end()};  // assigned round-robin
  double duration = 4.0 * 86400.0;  // observation length, seconds
  double interval = 600.0;          // nominal sampling interval
  double jitter = 60.0;             // uniform +- jitter on each interval
  double epoch = 1.6e9;             // first record time of the earliest post
};

struct SynthSeries {
  LikeSeries series;  // absolute epoch timestamps
  Profile profile = Profile::single_burst;
};

namespace detail {

class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * (static_cast<double>(engine_() >> 11) * 0x1.0p-53);
  }
  double normal() {
    const double u1 = uniform(0x1.0p-53, 1.0), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::mt19937_64 engine_;
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Cumulative share of the final like count reached at time t, for one drawn curve.
struct Shape {
  Profile profile = Profile::single_burst;
  double a = 0, b = 0, c = 0, d = 0, e = 0;
  std::vector<double> like_times;  // near-inert: explicit like instants

  double operator()(double t) const {
    switch (profile) {
      case Profile::single_burst: return 1.0 - std::exp(-t / a);
      case Profile::double_boost: {
        // weight a on a step at b (width c), the rest on a step at d (width e), zero at t = 0.
        auto step = [t](double centre, double width) {
          const double lo = logistic(-centre / width);
          return (logistic((t - centre) / width) - lo) / (1.0 - lo);
        };
        return a * step(b, c) + (1.0 - a) * step(d, e);
      }
      case Profile::slow_viral: {
        const double lo = logistic(-b / c);
        return (logistic((t - b) / c) - lo) / (1.0 - lo);
      }
      case Profile::near_inert: {
        double k = 0;
        for (double lt : like_times) k += lt <= t ? 1.0 : 0.0;
        return like_times.empty() ? 0.0 : k / static_cast<double>(like_times.size());
      }
    }
    return 0.0;
  }
};

}  // namespace detail

/// Scales: single-burst 50-100 likes, double-boost 1000-2000, slow-viral 10^4-2x10^4,
/// near-inert 0-5 (a draw of 0 is an inert post that ingestion will set aside).
inline std::vector<SynthSeries> generate_synthetic(const SynthConfig& cfg) {
  if (cfg.n < 1) throw ValidationError("synthetic corpus needs n >= 1");
  if (cfg.profiles.empty()) throw ValidationError("synthetic corpus needs at least one profile");
  if (!(cfg.interval > cfg.jitter && cfg.jitter >= 0.0 && cfg.duration > cfg.interval))
    throw ValidationError("synthetic sampling needs duration > interval > jitter >= 0");
  detail::SynthRng rng(cfg.seed);
  constexpr double hour = 3600.0;
  std::vector<SynthSeries> out;
  out.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    SynthSeries s;
    s.profile = cfg.profiles[i % cfg.profiles.size()];
    s.series.id = "post" + std::to_string(i);
    detail::Shape shape;
    shape.profile = s.profile;
    double scale = 0.0;
    switch (s.profile) {
      case Profile::single_burst:
        shape.a = rng.uniform(0.5, 2.0) * hour;
        scale = rng.uniform(50, 100);
        break;
      case Profile::double_boost:
        shape.a = rng.uniform(0.4, 0.6);
        shape.b = rng.uniform(1.0, 3.0) * hour;
        shape.c = rng.uniform(10.0, 20.0) * 60.0;
        shape.d = shape.b + rng.uniform(18.0, 30.0) * hour;
        shape.e = rng.uniform(10.0, 20.0) * 60.0;
        scale = rng.uniform(1000, 2000);
        break;
      case Profile::slow_viral:
        shape.b = rng.uniform(30.0, 40.0) * hour;
        shape.c = rng.uniform(4.0, 6.0) * hour;
        scale = rng.uniform(1e4, 2e4);
        break;
      case Profile::near_inert: {
        const auto likes = static_cast<int>(rng.uniform(0.0, 6.0));
        for (int k = 0; k < likes; ++k) shape.like_times.push_back(-6.0 * hour * std::log(rng.uniform(0x1.0p-53, 1.0)));
        scale = static_cast<double>(likes);
        break;
      }
    }
    const double start = cfg.epoch + rng.uniform(0.0, 86400.0);
    double t = 0.0, previous = 0.0;
    while (t <= cfg.duration) {
      double y = std::round(scale * shape(t));
      if (s.profile != Profile::near_inert) y = std::round(scale * shape(t) * (1.0 + 0.02 * rng.normal()));
      y = std::max(previous, std::max(0.0, y));
      s.series.samples.push_back({start + t, y});
      previous = y;
      t += cfg.interval + rng.uniform(-cfg.jitter, cfg.jitter);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_jsonl(std::ostream& out, const std::vector<SynthSeries>& corpus) {
  for (const auto& s : corpus)
    for (const auto& p : s.series.samples)
      out << R"({"id":")" << s.series.id << R"(","t":)" << format_double(p.t) << R"(,"likes":)"
          << format_double(p.likes) << "}\n";
}

inline void write_profile_labels(std::ostream& out, const std::vector<SynthSeries>& corpus) {
  out << "id,profile\n";
  for (const auto& s : corpus) out << s.series.id << ',' << profile_name(s.profile) << '\n';
}

}  // namespace popdyn
