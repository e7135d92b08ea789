#pragma once

// End-to-end runs: corpus preparation, the naive (distance matrix) and vector (tweet vector)
// clustering strategies, the DTW record-count diagnostic, reports and SVG panels.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "popdyn/error.hpp"
#include "popdyn/features.hpp"
#include "popdyn/format.hpp"
#include "popdyn/hdbscan.hpp"
#include "popdyn/metrics.hpp"
#include "popdyn/series.hpp"
#include "popdyn/svg.hpp"

namespace popdyn {

namespace fs = std::filesystem;

inline constexpr int kInertLabel = -2;

enum class Metric { l1, weighted_l1, dtw, fastdtw };
enum class PanelOrder { size, max_likes };

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::l1: return "l1";
    case Metric::weighted_l1: return "weighted_l1";
    case Metric::dtw: return "dtw";
    case Metric::fastdtw: return "fastdtw";
  }
  return "";
}
inline std::string to_string(AlignMode m) { return m == AlignMode::pad ? "pad" : "truncate"; }
inline std::string to_string(PanelOrder o) { return o == PanelOrder::size ? "size" : "max_likes"; }
inline std::string to_string(SimilarityKernel k) { return k == SimilarityKernel::linear ? "linear" : "exponential"; }
inline std::string to_string(DerivativeScale s) { return s == DerivativeScale::raw ? "raw" : "relative"; }

namespace detail {

template <class E, std::size_t N>
E parse_choice(const std::string& value, const std::array<E, N>& options, const char* field) {
  std::string known;
  for (E e : options) {
    if (to_string(e) == value) return e;
    known += (known.empty() ? "" : ", ") + to_string(e);
  }
  throw ValidationError(std::string(field) + ": unknown value '" + value + "' (expected one of " + known + ")");
}

}  // namespace detail

inline Metric parse_metric(const std::string& s) {
  return detail::parse_choice(s, std::array{Metric::l1, Metric::weighted_l1, Metric::dtw, Metric::fastdtw}, "metric");
}
inline AlignMode parse_align(const std::string& s) {
  return detail::parse_choice(s, std::array{AlignMode::pad, AlignMode::truncate}, "align");
}
inline PanelOrder parse_panel_order(const std::string& s) {
  return detail::parse_choice(s, std::array{PanelOrder::size, PanelOrder::max_likes}, "panel_order");
}
inline SimilarityKernel parse_kernel(const std::string& s) {
  return detail::parse_choice(s, std::array{SimilarityKernel::linear, SimilarityKernel::exponential},
                              "similarity_kernel");
}
inline DerivativeScale parse_derivative_scale(const std::string& s) {
  return detail::parse_choice(s, std::array{DerivativeScale::raw, DerivativeScale::relative}, "derivative_scale");
}

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  std::string input;
  double grid_step = kDefaultGridStep;
  AlignMode align = AlignMode::pad;
  Metric metric = Metric::l1;
  std::size_t dtw_window = 0;  // 0: max(10% of the longer series, length gap) per pair
  std::size_t fastdtw_radius = 1;
  double penalty_epsilon = kDefaultPenaltyFloor;
  std::size_t min_samples = 2;
  std::size_t min_cluster_size = 2;
  double noise_threshold = kDefaultNoiseThreshold;
  int max_rounds = kDefaultMaxRounds;
  std::size_t boost_cap = 6;
  std::uint64_t ae_seed = 0;
  int ae_epochs = kDefaultEpochs;
  double ae_step_size = kDefaultStepSize;
  std::size_t ae_hidden = kDefaultHidden;
  SimilarityKernel similarity_kernel = SimilarityKernel::linear;
  DerivativeScale derivative_scale = DerivativeScale::relative;
  bool standardize = true;
  std::string out_dir = "out";
  PanelOrder panel_order = PanelOrder::size;
  std::size_t plot_clusters = 18;  // 0: every cluster
  unsigned threads = 0;            // 0: hardware concurrency; does not affect results

  void validate() const {
    if (!(grid_step > 0.0)) throw ValidationError("grid_step must be positive");
    if (!(penalty_epsilon >= 0.0 && penalty_epsilon < kPenaltyAtReference))
      throw ValidationError("penalty_epsilon must lie in [0, 0.7)");
    ClusterConfig{min_samples, min_cluster_size}.validate();
    if (!(noise_threshold > 0.0 && noise_threshold < 1.0)) throw ValidationError("noise_threshold must lie in (0, 1)");
    if (max_rounds < 1) throw ValidationError("max_rounds must be >= 1");
    if (ae_epochs < 0) throw ValidationError("ae_epochs must be >= 0");
    if (!(ae_step_size >= 0.0)) throw ValidationError("ae_step_size must be >= 0");
    if (ae_hidden < 1) throw ValidationError("ae_hidden must be >= 1");
    if (out_dir.empty()) throw ValidationError("out_dir must not be empty");
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"input", c.input},
          {"grid_step", c.grid_step},
          {"align", to_string(c.align)},
          {"metric", to_string(c.metric)},
          {"dtw_window", c.dtw_window},
          {"fastdtw_radius", c.fastdtw_radius},
          {"penalty_epsilon", c.penalty_epsilon},
          {"min_samples", c.min_samples},
          {"min_cluster_size", c.min_cluster_size},
          {"noise_threshold", c.noise_threshold},
          {"max_rounds", c.max_rounds},
          {"boost_cap", c.boost_cap},
          {"ae_seed", c.ae_seed},
          {"ae_epochs", c.ae_epochs},
          {"ae_step_size", c.ae_step_size},
          {"ae_hidden", c.ae_hidden},
          {"similarity_kernel", to_string(c.similarity_kernel)},
          {"derivative_scale", to_string(c.derivative_scale)},
          {"standardize", c.standardize},
          {"out_dir", c.out_dir},
          {"panel_order", to_string(c.panel_order)},
          {"plot_clusters", c.plot_clusters}};
}

/// Overrides the fields present in `j`; unknown keys are rejected.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "input") c.input = v.get<std::string>();
      else if (key == "grid_step") c.grid_step = v.get<double>();
      else if (key == "align") c.align = parse_align(v.get<std::string>());
      else if (key == "metric") c.metric = parse_metric(v.get<std::string>());
      else if (key == "dtw_window") c.dtw_window = v.get<std::size_t>();
      else if (key == "fastdtw_radius") c.fastdtw_radius = v.get<std::size_t>();
      else if (key == "penalty_epsilon") c.penalty_epsilon = v.get<double>();
      else if (key == "min_samples") c.min_samples = v.get<std::size_t>();
      else if (key == "min_cluster_size") c.min_cluster_size = v.get<std::size_t>();
      else if (key == "noise_threshold") c.noise_threshold = v.get<double>();
      else if (key == "max_rounds") c.max_rounds = v.get<int>();
      else if (key == "boost_cap") c.boost_cap = v.get<std::size_t>();
      else if (key == "ae_seed") c.ae_seed = v.get<std::uint64_t>();
      else if (key == "ae_epochs") c.ae_epochs = v.get<int>();
      else if (key == "ae_step_size") c.ae_step_size = v.get<double>();
      else if (key == "ae_hidden") c.ae_hidden = v.get<std::size_t>();
      else if (key == "similarity_kernel") c.similarity_kernel = parse_kernel(v.get<std::string>());
      else if (key == "derivative_scale") c.derivative_scale = parse_derivative_scale(v.get<std::string>());
      else if (key == "standardize") c.standardize = v.get<bool>();
      else if (key == "out_dir") c.out_dir = v.get<std::string>();
      else if (key == "panel_order") c.panel_order = parse_panel_order(v.get<std::string>());
      else if (key == "plot_clusters") c.plot_clusters = v.get<std::size_t>();
      else if (key == "threads") c.threads = v.get<unsigned>();
      else throw ValidationError("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  RunConfig c;
  try {
    apply_json(c, nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Small statistics

/// Adjusted Rand index between two labelings of the same points (any integer labels; noise is
/// treated as one more group). Returns 1 when both partitions are trivial and identical.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ValidationError("labelings differ in length");
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [k, v] : joint) index += pairs(v);
  for (const auto& [k, v] : ra) sa += pairs(v);
  for (const auto& [k, v] : rb) sb += pairs(v);
  const double expected = sa * sb / pairs(n);
  const double top = 0.5 * (sa + sb);
  if (top == expected) return 1.0;
  return (index - expected) / (top - expected);
}

/// Fraction of point pairs on which two labelings disagree about co-membership (1 - Rand index).
inline double pair_disagreement(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ValidationError("labelings differ in length");
  if (a.size() < 2) return 0.0;
  std::size_t differ = 0, total = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      ++total;
      if ((a[i] == a[j]) != (b[i] == b[j])) ++differ;
    }
  return static_cast<double>(differ) / static_cast<double>(total);
}

/// ARI against reference labels restricted to the members of the k largest clusters
/// (size ties broken by smaller label).
inline double top_cluster_agreement(std::span<const int> labels, std::span<const int> reference, std::size_t k) {
  if (labels.size() != reference.size()) throw ValidationError("labelings differ in length");
  std::map<int, std::size_t> sizes;
  for (int l : labels)
    if (l >= 0) ++sizes[l];
  std::vector<std::pair<std::size_t, int>> order;
  for (const auto& [l, s] : sizes) order.push_back({s, l});
  std::sort(order.begin(), order.end(), [](auto x, auto y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });
  order.resize(std::min(order.size(), k));
  std::vector<int> a, b;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (const auto& [s, l] : order)
      if (labels[i] == l) {
        a.push_back(labels[i]);
        b.push_back(reference[i]);
      }
  return adjusted_rand_index(a, b);
}

inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation; nullopt when either variable is constant.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("spearman: inputs differ in length");
  if (x.size() < 2) return std::nullopt;
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (!(sxx > 0.0 && syy > 0.0)) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Corpus preparation

struct PreparedCorpus {
  std::vector<std::string> input_ids;  // every ingested id, input order
  std::vector<std::string> inert_ids;
  std::vector<LikeSeries> raw;         // non-inert series, same order as windows
  std::vector<WindowedSeries> windows;
  std::vector<GriddedSeries> window_grids;  // each window on the grid, before alignment
  Corpus corpus;

  std::size_t size() const noexcept { return windows.size(); }
};

class StageTimer {
 public:
  template <class Fn>
  auto run(const std::string& stage, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto finish = [&] {
      seconds_[stage] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        finish();
      } else {
        auto out = fn();
        finish();
        return out;
      }
    } catch (const ValidationError&) {
      throw;
    } catch (const ParseError&) {
      throw;
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e.what());
    }
  }
  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : seconds_) j[k] = v;
    return j;
  }
  double seconds(const std::string& stage) const {
    const auto it = seconds_.find(stage);
    return it == seconds_.end() ? 0.0 : it->second;
  }

 private:
  std::map<std::string, double> seconds_;
};

/// Windows, grids and aligns the non-inert series. Inert ids are kept aside. Times are rebased to
/// the first record, as ingestion does, so in-memory series may carry absolute timestamps.
inline PreparedCorpus prepare_corpus(const std::vector<LikeSeries>& series, const RunConfig& cfg) {
  PreparedCorpus p;
  for (LikeSeries s : series) {
    detail::validate_series(s);
    const double t0 = s.samples.front().t;
    for (auto& x : s.samples) x.t -= t0;
    p.input_ids.push_back(s.id);
    const bool inert = std::all_of(s.samples.begin(), s.samples.end(), [](const Sample& x) { return x.likes == 0.0; });
    if (inert) {
      p.inert_ids.push_back(s.id);
      continue;
    }
    p.raw.push_back(s);
    p.windows.push_back(extract_window(s));
    p.window_grids.push_back(regrid(p.windows.back(), cfg.grid_step));
  }
  if (p.windows.empty()) throw ValidationError("no series with at least one like; nothing to cluster");
  if (cfg.align == AlignMode::pad) {
    p.corpus = align_corpus(p.window_grids, AlignMode::pad);
  } else {
    std::vector<GriddedSeries> full;
    full.reserve(p.raw.size());
    for (std::size_t i = 0; i < p.raw.size(); ++i) full.push_back(regrid_full(p.raw[i], p.windows[i], cfg.grid_step));
    p.corpus = align_corpus(std::move(full), AlignMode::truncate);
  }
  return p;
}

inline PreparedCorpus load_corpus(const RunConfig& cfg) {
  if (cfg.input.empty()) throw ValidationError("no input file given (--input)");
  return prepare_corpus(ingest_file(cfg.input), cfg);
}

struct MetricInfo {
  std::optional<PenaltyWeights> penalty;
};

inline DistanceMatrix compute_distances(const PreparedCorpus& p, const RunConfig& cfg, Metric metric,
                                        MetricInfo* info = nullptr) {
  switch (metric) {
    case Metric::l1: return pairwise_l1(p.corpus, cfg.threads);
    case Metric::weighted_l1: {
      const auto w = fit_penalty(p.corpus, cfg.penalty_epsilon);
      if (info) info->penalty = w;
      return pairwise_weighted_l1(p.corpus, w, cfg.threads);
    }
    case Metric::dtw:
      return pairwise_dtw(p.windows, cfg.dtw_window ? std::optional<std::size_t>(cfg.dtw_window) : std::nullopt,
                          kDefaultWindowFraction, cfg.threads);
    case Metric::fastdtw: return pairwise_fastdtw(p.windows, cfg.fastdtw_radius, cfg.threads);
  }
  throw ValidationError("unknown metric");
}

// ---------------------------------------------------------------------------
// Boosts for a whole corpus

struct CorpusBoosts {
  LambdaSelection selection;
  std::vector<BoostProfile> profiles;  // aligned with PreparedCorpus::windows
};

inline CorpusBoosts corpus_boosts(const PreparedCorpus& p, const RunConfig& cfg) {
  // Windows with fewer than 3 grid points carry no derivative variation and get no boosts.
  std::vector<GriddedSeries> usable;
  for (const auto& g : p.window_grids)
    if (g.n_points() >= 3) usable.push_back(g);
  CorpusBoosts out;
  if (!usable.empty()) out.selection = select_lambda(usable, cfg.boost_cap, cfg.derivative_scale);
  out.profiles.reserve(p.size());
  for (const auto& g : p.window_grids)
    out.profiles.push_back(g.n_points() >= 3 ? extract_boosts(g, {out.selection.lambda, cfg.derivative_scale})
                                             : BoostProfile{});
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct ClusterRow {
  int label = kNoise;
  std::size_t size = 0;
  int round = 0;
  double stability = 0.0;
  double mean_max_likes = 0.0;
  double mean_l1 = 0.0;       // mean pairwise L1 distance between members, on the aligned grid
  double mean_boosts = 0.0;   // mean boost count of members
};

struct StrategySummary {
  std::string strategy;
  std::size_t n_tweets = 0;  // clustered series (inert excluded)
  std::size_t n_inert = 0;
  std::size_t n_clusters = 0;
  double noise_rate = 0.0;
  double mean_cluster_size = 0.0;
  double cluster_size_std = 0.0;  // population standard deviation
  std::size_t largest_cluster = 0;
  int rounds_run = 1;
  bool converged = true;
  std::vector<ClusterRow> clusters;
};

inline nlohmann::json to_json(const StrategySummary& s) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : s.clusters)
    clusters.push_back({{"label", c.label},
                        {"size", c.size},
                        {"round", c.round},
                        {"stability", c.stability},
                        {"mean_max_likes", c.mean_max_likes},
                        {"mean_l1", c.mean_l1},
                        {"mean_boosts", c.mean_boosts}});
  return {{"n_tweets", s.n_tweets},
          {"n_inert", s.n_inert},
          {"n_clusters", s.n_clusters},
          {"noise_rate", s.noise_rate},
          {"mean_cluster_size", s.mean_cluster_size},
          {"cluster_size_std", s.cluster_size_std},
          {"largest_cluster", s.largest_cluster},
          {"rounds_run", s.rounds_run},
          {"converged", s.converged},
          {"clusters", clusters}};
}

inline StrategySummary summarize(const std::string& strategy, const ClusterLabeling& lab, const PreparedCorpus& p,
                                 const std::vector<BoostProfile>& boosts) {
  StrategySummary s;
  s.strategy = strategy;
  s.n_tweets = lab.size();
  s.n_inert = p.inert_ids.size();
  s.n_clusters = lab.clusters.size();
  s.noise_rate = lab.noise_rate();
  s.rounds_run = lab.rounds_run;
  s.converged = lab.converged;
  if (!lab.clusters.empty()) {
    double sum = 0.0;
    for (const auto& c : lab.clusters) {
      sum += static_cast<double>(c.size);
      s.largest_cluster = std::max(s.largest_cluster, c.size);
    }
    s.mean_cluster_size = sum / static_cast<double>(lab.clusters.size());
    double ss = 0.0;
    for (const auto& c : lab.clusters)
      ss += (static_cast<double>(c.size) - s.mean_cluster_size) * (static_cast<double>(c.size) - s.mean_cluster_size);
    s.cluster_size_std = std::sqrt(ss / static_cast<double>(lab.clusters.size()));
  }
  std::vector<std::vector<std::size_t>> members(lab.clusters.size());
  for (std::size_t i = 0; i < lab.size(); ++i)
    if (lab.labels[i] >= 0) members[static_cast<std::size_t>(lab.labels[i])].push_back(i);
  for (std::size_t k = 0; k < lab.clusters.size(); ++k) {
    ClusterRow row;
    row.label = lab.clusters[k].label;
    row.size = lab.clusters[k].size;
    row.round = lab.clusters[k].round;
    row.stability = lab.clusters[k].stability;
    const auto& m = members[k];
    double likes = 0.0, nb = 0.0, l1 = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < m.size(); ++a) {
      likes += p.windows[m[a]].n_max_likes;
      nb += static_cast<double>(boosts.empty() ? 0 : boosts[m[a]].count());
      for (std::size_t b = a + 1; b < m.size(); ++b, ++pairs)
        l1 += l1_distance(p.corpus.series[m[a]], p.corpus.series[m[b]]);
    }
    const double size = static_cast<double>(m.size());
    row.mean_max_likes = size > 0 ? likes / size : 0.0;
    row.mean_boosts = size > 0 ? nb / size : 0.0;
    row.mean_l1 = pairs > 0 ? l1 / static_cast<double>(pairs) : 0.0;
    s.clusters.push_back(row);
  }
  return s;
}

inline void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("output", "cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw StageError("output", "failed while writing '" + path.string() + "'");
}

inline nlohmann::json read_json_or_empty(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(in);
    return j.is_object() ? j : nlohmann::json::object();
  } catch (const nlohmann::json::parse_error&) {
    return nlohmann::json::object();
  }
}

// Stores `section` under `key` in a JSON file shared by several commands.
inline void merge_json(const fs::path& path, const std::string& key, const nlohmann::json& section) {
  auto j = read_json_or_empty(path);
  j[key] = section;
  write_text(path, j.dump(2) + "\n");
}

inline std::string labels_csv(const PreparedCorpus& p, const ClusterLabeling& lab) {
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < p.windows.size(); ++i) row_of[p.windows[i].id] = i;
  std::ostringstream out;
  out << "id,label,round\n";
  for (const auto& id : p.input_ids) {
    const auto it = row_of.find(id);
    if (it == row_of.end())
      out << id << ',' << kInertLabel << ",-1\n";
    else
      out << id << ',' << lab.labels[it->second] << ',' << lab.rounds[it->second] << '\n';
  }
  return out.str();
}

inline std::map<std::string, int> read_labels_csv(const fs::path& path) {
  std::map<std::string, int> out;
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) continue;
    out[line.substr(0, a)] = std::stoi(line.substr(a + 1, b - a - 1));
  }
  return out;
}

// Agreement between the two strategies once both label files exist in out_dir (inert ids excluded).
inline void update_comparison(const fs::path& out_dir) {
  const auto naive = out_dir / "labels_naive.csv", vector = out_dir / "labels_vector.csv";
  if (!fs::exists(naive) || !fs::exists(vector)) return;
  const auto a = read_labels_csv(naive), b = read_labels_csv(vector);
  std::vector<int> la, lb;
  for (const auto& [id, label] : a) {
    const auto it = b.find(id);
    if (it == b.end() || label == kInertLabel || it->second == kInertLabel) continue;
    la.push_back(label);
    lb.push_back(it->second);
  }
  if (la.empty()) return;
  merge_json(out_dir / "report.json", "comparison",
             {{"n_common", la.size()}, {"ari_naive_vector", adjusted_rand_index(la, lb)}});
}

// ---------------------------------------------------------------------------
// SVG panels

inline std::vector<std::string> render_cluster_pages(const std::string& title, const ClusterLabeling& lab,
                                                     const StrategySummary& summary, const PreparedCorpus& p,
                                                     PanelOrder order, std::size_t limit) {
  std::vector<std::size_t> idx(summary.clusters.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) {
    const auto& x = summary.clusters[a];
    const auto& y = summary.clusters[b];
    if (order == PanelOrder::size) return x.size > y.size;
    return x.mean_max_likes > y.mean_max_likes;
  });
  if (limit > 0 && idx.size() > limit) idx.resize(limit);

  constexpr double pw = 300, ph = 220, margin = 10, header = 30;
  std::vector<std::string> pages;
  const double hours = static_cast<double>(p.corpus.n_points - 1) * p.corpus.step / 3600.0;
  for (std::size_t start = 0; start < idx.size(); start += 9) {
    svg::Document doc(3 * pw + 4 * margin, header + 3 * ph + 4 * margin);
    doc.text(margin, 20, title + " (page " + std::to_string(start / 9 + 1) + ")", 14);
    for (std::size_t k = start; k < std::min(idx.size(), start + 9); ++k) {
      const auto& row = summary.clusters[idx[k]];
      const std::size_t slot = k - start;
      const svg::Box frame{margin + static_cast<double>(slot % 3) * (pw + margin),
                           header + margin + static_cast<double>(slot / 3) * (ph + margin), pw, ph};
      doc.rect(frame, "#444444");
      const svg::Box plot{frame.x + 8, frame.y + 62, frame.w - 16, frame.h - 70};
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < lab.size(); ++i)
        if (lab.labels[i] == row.label) members.push_back(i);
      double ymax = 0.0;
      for (auto i : members) ymax = std::max(ymax, p.corpus.series[i].values.back());
      const std::size_t n = p.corpus.n_points;
      std::vector<double> xs(n), mean(n, 0.0);
      for (std::size_t t = 0; t < n; ++t) xs[t] = static_cast<double>(t) * p.corpus.step / 3600.0;
      for (auto i : members) {
        const auto& v = p.corpus.series[i].values;
        for (std::size_t t = 0; t < n; ++t) mean[t] += v[t] / static_cast<double>(members.size());
        doc.polyline(plot, xs, v, 0.0, hours, 0.0, ymax, "#999999", 0.8, 0.6);
      }
      doc.polyline(plot, xs, mean, 0.0, hours, 0.0, ymax, "#d62728", 2.0);
      const double tx = frame.x + 8;
      doc.text(tx, frame.y + 16, "cluster " + std::to_string(row.label) + "   n = " + std::to_string(row.size));
      doc.text(tx, frame.y + 30, "d_L1 mean = " + format_sig(row.mean_l1, 4));
      doc.text(tx, frame.y + 44, "n_boosts mean = " + format_sig(row.mean_boosts, 3));
      doc.text(frame.x + frame.w - 8, frame.y + 16, "ROUND " + std::to_string(row.round), 11, "end");
      doc.text(frame.x + frame.w - 8, frame.y + 30, "max " + format_sig(ymax, 4) + " likes", 10, "end");
      doc.text(frame.x + frame.w - 8, frame.y + 44, format_sig(hours, 3) + " h", 10, "end");
    }
    pages.push_back(doc.str());
  }
  return pages;
}

inline void write_pages(const fs::path& out_dir, const std::string& prefix, const std::vector<std::string>& pages) {
  const fs::path dir = out_dir / "plots";
  fs::create_directories(dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind(prefix + "_", 0) == 0 && entry.path().extension() == ".svg") fs::remove(entry.path());
  }
  for (std::size_t i = 0; i < pages.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%02zu.svg", prefix.c_str(), i + 1);
    write_text(dir / name, pages[i]);
  }
}

// ---------------------------------------------------------------------------
// Strategies

struct NaiveResult {
  PreparedCorpus corpus;
  DistanceMatrix distances;
  ClusterLabeling labeling;
  StrategySummary summary;
  CorpusBoosts boosts;
  nlohmann::json report;
  StageTimer timer;
};

/// Distance matrix on the preprocessed curves, then iterative HDBSCAN on it.
inline NaiveResult run_naive(const RunConfig& cfg, std::optional<PreparedCorpus> prepared = std::nullopt,
                             bool write_outputs = true) {
  cfg.validate();
  NaiveResult r;
  r.corpus = prepared ? std::move(*prepared) : r.timer.run("ingest", [&] { return load_corpus(cfg); });
  if (r.corpus.size() < cfg.min_cluster_size)
    throw ValidationError("corpus has " + std::to_string(r.corpus.size()) + " usable series, fewer than min_cluster_size");
  MetricInfo info;
  r.distances = r.timer.run("distance", [&] { return compute_distances(r.corpus, cfg, cfg.metric, &info); });
  r.labeling = r.timer.run("cluster", [&] {
    return iterative_cluster(r.distances, {cfg.min_samples, cfg.min_cluster_size}, cfg.noise_threshold, cfg.max_rounds);
  });
  r.boosts = r.timer.run("boosts", [&] { return corpus_boosts(r.corpus, cfg); });
  r.summary = summarize("naive", r.labeling, r.corpus, r.boosts.profiles);

  nlohmann::json rep = to_json(r.summary);
  rep["config"] = to_json(cfg);
  rep["metric"] = to_string(cfg.metric);
  rep["n_points"] = r.corpus.corpus.n_points;
  rep["median_t_max"] = r.corpus.corpus.median_t_max;
  rep["noise_count_round0"] = nullptr;
  if (info.penalty)
    rep["penalty"] = {{"epsilon", info.penalty->epsilon},
                      {"alpha", info.penalty->alpha},
                      {"beta", info.penalty->beta},
                      {"reference_t", info.penalty->reference_t}};
  std::size_t round0_noise = 0;
  for (std::size_t i = 0; i < r.labeling.size(); ++i)
    if (r.labeling.rounds[i] != 0) ++round0_noise;
  rep["noise_count_round0"] = round0_noise;
  nlohmann::json warnings = nlohmann::json::array();
  if (!r.labeling.converged)
    warnings.push_back("noise stayed above " + format_double(cfg.noise_threshold * 100.0) + "% after " +
                       std::to_string(r.labeling.rounds_run) + " rounds");
  if (!r.boosts.selection.warning.empty()) warnings.push_back(r.boosts.selection.warning);
  rep["warnings"] = warnings;
  r.report = rep;

  if (write_outputs) {
    r.timer.run("output", [&] {
      const fs::path out(cfg.out_dir);
      fs::create_directories(out);
      write_text(out / "labels_naive.csv", labels_csv(r.corpus, r.labeling));
      merge_json(out / "report.json", "naive", r.report);
      write_pages(out, "naive",
                  render_cluster_pages("naive strategy (" + to_string(cfg.metric) + ")", r.labeling, r.summary,
                                       r.corpus, cfg.panel_order, cfg.plot_clusters));
    });
    merge_json(fs::path(cfg.out_dir) / "timing.json", "naive", r.timer.to_json());
    update_comparison(cfg.out_dir);
  }
  return r;
}

struct VectorResult {
  PreparedCorpus corpus;
  std::vector<TweetVector> vectors;
  CorpusBoosts boosts;
  KeyInstantSelection instants;
  Embedding embedding;
  std::optional<StandardizedMatrix> standardized;
  ClusterLabeling labeling;
  ClusterLabeling alternate;  // with the standardization flag flipped
  StrategySummary summary;
  nlohmann::json report;
  StageTimer timer;
};

inline std::string vectors_csv(const std::vector<TweetVector>& vs) {
  std::ostringstream out;
  out << "id";
  for (const char* name : TweetVector::kNames) out << ',' << name;
  out << '\n';
  for (const auto& v : vs) {
    out << v.id;
    for (double x : v.components()) out << ',' << format_double(x);
    out << '\n';
  }
  return out.str();
}

inline nlohmann::json boosts_json(const PreparedCorpus& p, const CorpusBoosts& b, std::size_t cap) {
  nlohmann::json series = nlohmann::json::array();
  for (std::size_t i = 0; i < p.size(); ++i) {
    nlohmann::json list = nlohmann::json::array();
    const double step = p.window_grids[i].step;
    for (const auto& x : b.profiles[i].boosts)
      list.push_back({{"start_index", x.start_index},
                      {"end_index", x.end_index},
                      {"start_t", static_cast<double>(x.start_index) * step},
                      {"end_t", static_cast<double>(x.end_index) * step},
                      {"raw_increase", x.raw_increase}});
    series.push_back({{"id", p.windows[i].id}, {"boosts", list}});
  }
  return {{"lambda", b.selection.lambda},
          {"cap", cap},
          {"max_boosts", b.selection.max_boosts},
          {"cap_reached", b.selection.cap_reached},
          {"series", series}};
}

namespace detail {

inline ClusterLabeling cluster_vectors(const std::vector<TweetVector>& vs, bool standardize_rows, const RunConfig& cfg,
                                       std::optional<StandardizedMatrix>* kept = nullptr) {
  std::vector<std::vector<double>> rows;
  if (standardize_rows) {
    auto s = standardize(std::span<const TweetVector>(vs));
    rows = s.rows;
    if (kept) *kept = std::move(s);
  } else {
    for (const auto& v : vs) {
      const auto c = v.components();
      rows.emplace_back(c.begin(), c.end());
    }
  }
  std::vector<std::string> ids;
  for (const auto& v : vs) ids.push_back(v.id);
  const auto d = pairwise_euclidean(rows, ids, cfg.threads);
  return cluster(DistanceView(d), {cfg.min_samples, cfg.min_cluster_size});
}

}  // namespace detail

/// Tweet vectors (intensity, slope, t10/t50/t90, three boosts, 4-d embedding), optionally
/// standardized, then one HDBSCAN pass on their euclidean distances.
inline VectorResult run_vector(const RunConfig& cfg, std::optional<PreparedCorpus> prepared = std::nullopt,
                               bool write_outputs = true) {
  cfg.validate();
  VectorResult r;
  r.corpus = prepared ? std::move(*prepared) : r.timer.run("ingest", [&] { return load_corpus(cfg); });
  const auto& p = r.corpus;
  if (p.size() < std::max<std::size_t>(cfg.min_cluster_size, 2))
    throw ValidationError("corpus has " + std::to_string(p.size()) + " usable series; the vector strategy needs 2");
  if (p.size() < kDefaultLatent)
    throw ValidationError("the embedding needs at least " + std::to_string(kDefaultLatent) + " usable series");

  r.boosts = r.timer.run("boosts", [&] { return corpus_boosts(p, cfg); });
  std::vector<std::array<double, 3>> instants;
  r.timer.run("key_instants", [&] {
    for (const auto& w : p.windows) {
      const auto t = key_instants(w, kDefaultTriplet);
      instants.push_back({t[0], t[1], t[2]});
    }
    if (p.size() >= 3) r.instants = select_key_instants(p.windows);
  });
  const Metric embed_metric = cfg.metric == Metric::weighted_l1 ? Metric::weighted_l1 : Metric::l1;
  const auto distances = r.timer.run("distance", [&] { return compute_distances(p, cfg, embed_metric); });
  r.embedding = r.timer.run("embedding", [&] {
    EmbedConfig ec;
    ec.hidden = cfg.ae_hidden;
    ec.epochs = cfg.ae_epochs;
    ec.step_size = cfg.ae_step_size;
    ec.seed = cfg.ae_seed;
    ec.kernel = cfg.similarity_kernel;
    return embed_distance_matrix(distances, ec);
  });
  r.vectors = assemble(p.windows, r.boosts.profiles, instants, r.embedding);
  r.labeling = r.timer.run("cluster", [&] { return detail::cluster_vectors(r.vectors, cfg.standardize, cfg, &r.standardized); });
  std::optional<double> flip_disagreement, flip_ari;
  r.timer.run("cluster", [&] {
    try {
      r.alternate = detail::cluster_vectors(r.vectors, !cfg.standardize, cfg);
      flip_disagreement = pair_disagreement(r.labeling.labels, r.alternate.labels);
      flip_ari = adjusted_rand_index(r.labeling.labels, r.alternate.labels);
    } catch (const ValidationError&) {
      // the flipped variant can be degenerate (every component constant); nothing to compare
    }
  });
  r.summary = summarize("vector", r.labeling, p, r.boosts.profiles);

  nlohmann::json rep = to_json(r.summary);
  rep["config"] = to_json(cfg);
  rep["embedding_metric"] = to_string(embed_metric);
  rep["boost_lambda"] = r.boosts.selection.lambda;
  rep["boost_max_count"] = r.boosts.selection.max_boosts;
  rep["key_instants"] = {{"chosen", r.instants.chosen},
                         {"least_correlated", r.instants.least_correlated},
                         {"pca_top3_ratio", r.instants.pca_top3_ratio},
                         {"degenerate", r.instants.degenerate}};
  rep["embedding"] = {{"initial_loss", r.embedding.loss_trace.empty() ? 0.0 : r.embedding.loss_trace.front()},
                      {"final_loss", r.embedding.loss_trace.empty() ? 0.0 : r.embedding.loss_trace.back()},
                      {"epochs", cfg.ae_epochs}};
  nlohmann::json dropped = nlohmann::json::array();
  if (r.standardized)
    for (auto j : r.standardized->dropped) dropped.push_back(TweetVector::kNames[j]);
  rep["standardized"] = cfg.standardize;
  rep["dropped_components"] = dropped;
  rep["standardization_flip"] = {{"pair_disagreement", flip_disagreement ? nlohmann::json(*flip_disagreement) : nullptr},
                                 {"ari", flip_ari ? nlohmann::json(*flip_ari) : nullptr}};
  nlohmann::json warnings = nlohmann::json::array();
  if (!r.boosts.selection.warning.empty()) warnings.push_back(r.boosts.selection.warning);
  if (!r.embedding.warning.empty()) warnings.push_back(r.embedding.warning);
  rep["warnings"] = warnings;
  r.report = rep;

  if (write_outputs) {
    r.timer.run("output", [&] {
      const fs::path out(cfg.out_dir);
      fs::create_directories(out);
      write_text(out / "labels_vector.csv", labels_csv(p, r.labeling));
      write_text(out / "vectors.csv", vectors_csv(r.vectors));
      write_text(out / "boosts.json", boosts_json(p, r.boosts, cfg.boost_cap).dump(2) + "\n");
      merge_json(out / "report.json", "vector", r.report);
      write_pages(out, "vector",
                  render_cluster_pages("vector strategy", r.labeling, r.summary, p, cfg.panel_order, cfg.plot_clusters));
    });
    merge_json(fs::path(cfg.out_dir) / "timing.json", "vector", r.timer.to_json());
    update_comparison(cfg.out_dir);
  }
  return r;
}

// ---------------------------------------------------------------------------
// DTW record-count diagnostic

struct DtwBias {
  std::vector<std::string> ids;
  std::vector<double> records;        // windowed sample count
  std::vector<double> mean_distance;  // mean DTW distance to the other series
  std::optional<double> spearman;     // unset when undefined (equal counts, or fewer than 2 series)
  double seconds = 0.0;
};

inline DtwBias diagnose_dtw_bias(const PreparedCorpus& p, const RunConfig& cfg) {
  DtwBias b;
  const auto d = pairwise_dtw(p.windows, cfg.dtw_window ? std::optional<std::size_t>(cfg.dtw_window) : std::nullopt,
                              kDefaultWindowFraction, cfg.threads);
  b.seconds = d.seconds();
  const std::size_t n = d.size();
  for (std::size_t i = 0; i < n; ++i) {
    b.ids.push_back(p.windows[i].id);
    b.records.push_back(static_cast<double>(p.windows[i].samples.size()));
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += d(i, j);
    b.mean_distance.push_back(n > 1 ? s / static_cast<double>(n - 1) : 0.0);
  }
  b.spearman = spearman(b.records, b.mean_distance);
  return b;
}

inline std::string dtw_bias_svg(const DtwBias& b) {
  svg::Document doc(520, 400);
  const svg::Box box{60, 40, 440, 300};
  doc.rect(box, "#444444");
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!b.records.empty()) {
    x0 = *std::min_element(b.records.begin(), b.records.end());
    x1 = *std::max_element(b.records.begin(), b.records.end());
    y0 = 0.0;
    y1 = *std::max_element(b.mean_distance.begin(), b.mean_distance.end());
  }
  for (std::size_t i = 0; i < b.records.size(); ++i)
    doc.circle(svg::Document::map_x(box, b.records[i], x0, x1), svg::Document::map_y(box, b.mean_distance[i], y0, y1),
               2.5, "#1f77b4");
  doc.text(20, 24, "mean DTW distance vs. number of records", 14);
  doc.text(box.x + box.w / 2, box.y + box.h + 30, "records in window (" + format_sig(x0, 4) + " to " + format_sig(x1, 4) + ")",
           11, "middle");
  doc.text(box.x + 4, box.y + 14, "max " + format_sig(y1, 4));
  doc.text(box.x + box.w - 4, box.y + 14,
           b.spearman ? "Spearman rho = " + format_sig(*b.spearman, 3) : "Spearman rho undefined", 11, "end");
  return doc.str();
}

inline DtwBias run_diagnose_dtw(const RunConfig& cfg, bool write_outputs = true) {
  cfg.validate();
  StageTimer timer;
  const auto p = timer.run("ingest", [&] { return load_corpus(cfg); });
  const auto b = timer.run("distance", [&] { return diagnose_dtw_bias(p, cfg); });
  if (write_outputs) {
    const fs::path out(cfg.out_dir);
    std::ostringstream csv;
    csv << "id,records,mean_dtw\n";
    for (std::size_t i = 0; i < b.ids.size(); ++i)
      csv << b.ids[i] << ',' << format_double(b.records[i]) << ',' << format_double(b.mean_distance[i]) << '\n';
    write_text(out / "dtw_bias.csv", csv.str());
    nlohmann::json j = {{"n", b.ids.size()},
                        {"spearman", b.spearman ? nlohmann::json(*b.spearman) : nullptr},
                        {"defined", b.spearman.has_value()},
                        {"dtw_window", cfg.dtw_window}};
    merge_json(out / "report.json", "dtw_bias", j);
    write_text(out / "plots" / "dtw_bias.svg", dtw_bias_svg(b));
    merge_json(out / "timing.json", "dtw_bias", timer.to_json());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Text rendering of report.json

inline std::string render_report(const nlohmann::json& report) {
  static const std::vector<std::pair<std::string, std::string>> rows{
      {"n_tweets", "Number of tweets"},          {"n_clusters", "Number of clusters"},
      {"noise_rate", "Noise rate"},              {"mean_cluster_size", "Average cluster size"},
      {"cluster_size_std", "Cluster size std"},  {"largest_cluster", "Largest cluster"},
      {"rounds_run", "Rounds"}};
  std::vector<std::string> strategies;
  for (const char* s : {"naive", "vector"})
    if (report.contains(s)) strategies.push_back(s);
  if (strategies.empty() && !report.contains("dtw_bias"))
    throw ValidationError("report.json holds no strategy results; run cluster-naive or cluster-vector first");
  std::ostringstream out;
  if (!strategies.empty()) {
    out << "| |";
    for (const auto& s : strategies) out << ' ' << s << " |";
    out << "\n|---|";
    for (std::size_t k = 0; k < strategies.size(); ++k) out << "---|";
    out << '\n';
    for (const auto& [key, title] : rows) {
      out << "| " << title << " |";
      for (const auto& s : strategies) {
        const auto& v = report[s].value(key, nlohmann::json());
        if (key == "noise_rate" && v.is_number())
          out << ' ' << format_sig(100.0 * v.get<double>(), 4) << "% |";
        else if (v.is_number_float())
          out << ' ' << format_sig(v.get<double>(), 4) << " |";
        else
          out << ' ' << v.dump() << " |";
      }
      out << '\n';
    }
  }
  if (report.contains("naive")) out << "\nnaive metric: " << report["naive"].value("metric", std::string("?")) << '\n';
  if (report.contains("comparison") && report["comparison"].contains("ari_naive_vector"))
    out << "ARI between strategies: " << format_sig(report["comparison"]["ari_naive_vector"].get<double>(), 3) << '\n';
  if (report.contains("dtw_bias")) {
    const auto& d = report["dtw_bias"];
    out << "\nDTW record-count bias: Spearman rho = "
        << (d["spearman"].is_number() ? format_sig(d["spearman"].get<double>(), 3) : std::string("undefined"))
        << " over " << d.value("n", 0) << " series\n";
  }
  return out.str();
}

}  // namespace popdyn
