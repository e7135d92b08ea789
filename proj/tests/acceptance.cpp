// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "oracles/antichain.hpp"
#include "oracles/dtw_bruteforce.hpp"
#include "oracles/finite_diff.hpp"
#include "oracles/jacobi.hpp"
#include "oracles/random.hpp"
#include "oracles/tvd_check.hpp"
#include "popdyn/autoencoder.hpp"
#include "popdyn/cli.hpp"
#include "popdyn/pca.hpp"
#include "popdyn/pipeline.hpp"
#include "popdyn/synth.hpp"
#include "popdyn/tvd.hpp"

using namespace popdyn;
using V = std::vector<double>;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Symmetric matrix with i.i.d. uniform off-diagonal entries (not necessarily a metric).
DistanceMatrix random_matrix(oracle::Rng& rng, std::size_t n) {
  DistanceMatrix d(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d.set(i, j, rng.uniform(0.1, 10.0));
  return d;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("popdyn_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_synthetic(const fs::path& dir, std::size_t n, std::uint64_t seed) {
  SynthConfig sc;
  sc.n = n;
  sc.seed = seed;
  const auto corpus = generate_synthetic(sc);
  std::ofstream out(dir / "synthetic.jsonl");
  write_jsonl(out, corpus);
  return dir / "synthetic.jsonl";
}

Outcome dtw_oracle() {
  const auto start = std::chrono::steady_clock::now();
  oracle::Rng rng(1);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = rng.monotone(static_cast<std::size_t>(rng.integer(1, 6)), 5);
    const auto b = rng.monotone(static_cast<std::size_t>(rng.integer(1, 6)), 5);
    if (dtw_distance(a, b) != oracle::dtw_bruteforce(a, b)) ++mismatches;
  }
  const double s = seconds_since(start);
  return {mismatches == 0 && s < 10.0, std::to_string(mismatches) + " mismatches in 500 pairs, " + format_sig(s, 3) + " s"};
}

Outcome fastdtw_exact() {
  oracle::Rng rng(2);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = rng.monotone(static_cast<std::size_t>(rng.integer(1, 64)), 10);
    const auto b = rng.monotone(static_cast<std::size_t>(rng.integer(1, 64)), 10);
    const auto radius = std::max(a.size(), b.size()) + static_cast<std::size_t>(rng.integer(0, 3));
    if (fastdtw_distance(a, b, radius) != dtw_distance(a, b)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 100 pairs"};
}

Outcome l1_axioms() {
  oracle::Rng rng(3);
  int failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(1, 40));
    V a(n), b(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<double>(rng.integer(-1000, 1000));
      b[i] = static_cast<double>(rng.integer(-1000, 1000));
      c[i] = static_cast<double>(rng.integer(-1000, 1000));
    }
    const double ab = l1_distance(a, b), ba = l1_distance(b, a), ac = l1_distance(a, c), bc = l1_distance(b, c);
    const bool ok = ab == ba && l1_distance(a, a) == 0.0 && (ab == 0.0) == (a == b) && ac <= ab + bc;
    if (!ok) ++failures;
  }
  return {failures == 0, std::to_string(failures) + " violating triples of 1000"};
}

Outcome penalty() {
  double worst_anchor = 0.0, worst_floor = 0.0;
  bool monotone = true;
  for (double ref : {600.0, 3600.0, 86400.0, 3.0e5}) {
    const auto w = fit_penalty(ref);
    worst_anchor = std::max({worst_anchor, std::abs(w(0.0) - 0.99), std::abs(w(ref) - 0.7)});
    worst_floor = std::max(worst_floor, std::abs(w(100.0 * ref) - 0.05));
    double previous = w(0.0);
    for (int k = 1; k < 10000; ++k) {
      const double f = w(6.0 * ref * k / 9999.0);
      if (!(f <= previous)) monotone = false;
      previous = f;
    }
  }
  return {worst_anchor <= 1e-9 && worst_floor <= 1e-6 && monotone,
          "anchor error " + format_sig(worst_anchor, 3) + ", floor error " + format_sig(worst_floor, 3) +
              (monotone ? ", decreasing" : ", NOT decreasing")};
}

Outcome hdbscan_oracle() {
  const auto start = std::chrono::steady_clock::now();
  oracle::Rng rng(5);
  int failures = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(2, 12));
    const auto d = random_matrix(rng, n);
    const auto tree = condense(build_mst(mutual_reachability(d, core_distances(d, std::min<std::size_t>(2, n - 1)))), n, 2);
    const auto best = oracle::best_antichain(tree);
    const auto chosen = select_clusters(tree);
    double picked = 0.0;
    for (auto c : chosen) picked += best.stability[c];
    const auto flat = extract_flat(tree);
    const bool ok = std::abs(picked - best.best) <= 1e-12 * std::max(1.0, best.best) && flat.clusters.size() == chosen.size();
    if (!ok) ++failures;
  }
  const double s = seconds_since(start);
  return {failures == 0 && s < 60.0, std::to_string(failures) + " of 200 differ, " + format_sig(s, 3) + " s"};
}

Outcome rank_invariance() {
  oracle::Rng rng(5);
  int changed = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(2, 12));
    const auto d = random_matrix(rng, n);
    const auto cubed = d.transformed([](double x) { return x * x * x; });
    if (cluster(DistanceView(d), {2, 2}).labels != cluster(DistanceView(cubed), {2, 2}).labels) ++changed;
  }
  return {changed == 0, std::to_string(changed) + " of 50 labelings changed"};
}

Outcome iterative() {
  std::ostringstream detail;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    oracle::Rng rng(seed);
    const auto d = fixtures::euclidean(fixtures::layered_points(rng, 500));
    const auto first = cluster(DistanceView(d), {2, 2});
    const auto it = iterative_cluster(d, {2, 2});
    bool kept = true, monotone = true;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (first.labels[i] != kNoise && (it.labels[i] != first.labels[i] || it.rounds[i] != 0)) kept = false;
    for (std::size_t k = 1; k < it.clusters.size(); ++k)
      if (it.clusters[k].round < it.clusters[k - 1].round) monotone = false;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (it.labels[i] != kNoise && it.rounds[i] != it.clusters[static_cast<std::size_t>(it.labels[i])].round) monotone = false;
    ok = ok && it.noise_rate() <= 0.05 && kept && monotone;
    detail << (seed ? "; " : "") << "seed " << seed << ": noise " << format_sig(100 * first.noise_rate(), 3) << "% -> "
           << format_sig(100 * it.noise_rate(), 3) << "% in " << it.rounds_run << " rounds";
  }
  return {ok, detail.str()};
}

Outcome tvd() {
  oracle::Rng rng(8);
  double worst = 0.0;
  int objective_failures = 0;
  bool identity = true, fixed = true;
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(1, 50));
    V x(n);
    for (auto& v : x) v = rng.uniform(-20, 20);
    const double lambda = std::pow(10.0, rng.uniform(-2, 2));
    const auto r = tv_denoise(x, lambda);
    worst = std::max(worst, oracle::tvd_violation(x, r, lambda));
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double f = tv_objective(x, r, lambda);
    if (f > tv_objective(x, x, lambda) + 1e-9 || f > tv_objective(x, V(n, mean), lambda) + 1e-9) ++objective_failures;
    if (tv_denoise(x, 0.0) != x) identity = false;
    const V c(n, x[0]);
    for (double l : {1e-3, 1.0, 1e3, 1e9})
      if (tv_denoise(c, l) != c) fixed = false;
  }
  return {worst < 1e-7 && objective_failures == 0 && identity && fixed,
          "worst certificate violation " + format_sig(worst, 3) + ", " + std::to_string(objective_failures) +
              " objective failures" + (identity ? "" : ", lambda=0 changed input") + (fixed ? "" : ", constant moved")};
}

Outcome boosts() {
  // Flat, a 4-cell rise of 300 likes, flat, a 6-cell rise of 120 likes, flat.
  GriddedSeries two;
  two.id = "two_bumps";
  two.step = 300.0;
  V& v = two.values;
  v.assign(12, 0.0);
  for (int k = 1; k <= 4; ++k) v.push_back(300.0 * k / 4.0);
  v.insert(v.end(), 12, 300.0);
  for (int k = 1; k <= 6; ++k) v.push_back(300.0 + 120.0 * k / 6.0);
  v.insert(v.end(), 12, 420.0);
  two.n_max_likes = 420.0;

  const auto dir = scratch("boosts");
  RunConfig cfg;
  cfg.input = write_synthetic(dir, 200, 9).string();
  auto corpus = load_corpus(cfg);
  std::vector<GriddedSeries> grids{two};
  for (const auto& g : corpus.window_grids)
    if (g.n_points() >= 3) grids.push_back(g);
  const auto sel = select_lambda(grids, 6);
  std::size_t worst = 0;
  for (const auto& g : grids) worst = std::max(worst, extract_boosts(g, {sel.lambda, DerivativeScale::relative}).count());
  const auto p = extract_boosts(two, {sel.lambda, DerivativeScale::relative});
  const double cell = 300.0 / 4.0;  // likes gained per grid cell on the steeper rise
  const bool shape = p.count() == 2 && std::abs(p.boosts[0].raw_increase - 300.0) <= cell &&
                     std::abs(p.boosts[1].raw_increase - 120.0) <= cell;
  std::ostringstream detail;
  detail << "lambda " << format_sig(sel.lambda, 3) << ", fixture boosts " << p.count();
  for (const auto& b : p.boosts) detail << " [" << format_sig(b.raw_increase, 4) << "]";
  detail << ", corpus max " << worst << " over " << grids.size() << " series";
  fs::remove_all(dir);
  return {shape && worst <= 6 && sel.cap_reached, detail.str()};
}

Outcome pca() {
  oracle::Rng rng(10);
  double recon = 0.0, ratio = 0.0, eig = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = static_cast<std::size_t>(rng.integer(2, 10));
    std::vector<V> x(60, V(f));
    for (auto& row : x) {
      const double shared = rng.normal();
      for (std::size_t j = 0; j < f; ++j) row[j] = rng.normal() * static_cast<double>(j + 1) + shared;
    }
    const auto m = pca_fit(x);
    double total = 0.0;
    for (double r : m.explained_variance_ratio) total += r;
    ratio = std::max(ratio, std::abs(total - 1.0));
    for (const auto& row : x) {
      const auto back = m.inverse_transform(m.transform(row));
      for (std::size_t j = 0; j < f; ++j) recon = std::max(recon, std::abs(back[j] - row[j]));
    }
    const auto e = oracle::jacobi(oracle::covariance(x));
    std::vector<std::size_t> order(f);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return e.values[a] > e.values[b]; });
    for (std::size_t k = 0; k < f; ++k) {
      eig = std::max(eig, std::abs(m.explained_variance[k] - e.values[order[k]]));
      double dot = 0.0;
      for (std::size_t j = 0; j < f; ++j) dot += m.components[k][j] * e.vectors[order[k]][j];
      eig = std::max(eig, std::abs(std::abs(dot) - 1.0));
    }
  }
  return {recon < 1e-8 && ratio <= 1e-8 && eig <= 1e-6, "reconstruction " + format_sig(recon, 3) + ", ratio sum error " +
                                                             format_sig(ratio, 3) + ", oracle gap " + format_sig(eig, 3)};
}

Outcome autoencoder() {
  oracle::Rng rng(11);
  std::vector<V> rows(3, V(6));
  for (auto& r : rows)
    for (auto& x : r) x = rng.uniform(-1.0, 2.0);
  const auto m = ae_init(6, 3);
  const auto analytic = ae_loss_and_gradient(m, rows).second.flatten();
  const auto numeric = oracle::central_gradient(
      [&](const V& p) {
        auto copy = m;
        copy.unflatten(p);
        return ae_loss(copy, rows);
      },
      m.flatten());
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k)
    worst = std::max(worst, std::abs(analytic[k] - numeric[k]) /
                                std::max({std::abs(analytic[k]), std::abs(numeric[k]), 1e-6}));

  V pattern(30);
  for (std::size_t i = 0; i < pattern.size(); ++i) pattern[i] = std::cos(0.2 * static_cast<double>(i));
  const auto trained = ae_train(ae_init(30, 7), std::vector<V>(10, pattern), 200, kDefaultStepSize);
  const double ratio = trained.loss_trace.back() / trained.loss_trace.front();
  return {worst < 1e-4 && ratio < 0.1 && trained.model.n_latent == 4,
          "gradient error " + format_sig(worst, 3) + ", loss ratio after 200 epochs " + format_sig(ratio, 3) +
              ", latent " + std::to_string(trained.model.n_latent)};
}

Outcome performance() {
  const auto dir = scratch("performance");
  RunConfig cfg;
  cfg.input = write_synthetic(dir, 200, 12).string();
  const auto p = load_corpus(cfg);
  const auto l1 = compute_distances(p, cfg, Metric::l1);
  const auto dtw = compute_distances(p, cfg, Metric::dtw);
  const nlohmann::json timings = {{"n_series", p.size()},
                                  {"n_inert", p.inert_ids.size()},
                                  {"grid_points", p.corpus.n_points},
                                  {"l1_seconds", l1.seconds()},
                                  {"dtw_seconds", dtw.seconds()}};
  write_text("acceptance_timings.json", timings.dump(2) + "\n");
  fs::remove_all(dir);
  return {l1.seconds() < 5.0 && dtw.seconds() < 1800.0 && dtw.size() == p.size(),
          std::to_string(p.size()) + " series on " + std::to_string(p.corpus.n_points) + " grid points: L1 " +
              format_sig(l1.seconds(), 3) + " s, DTW " + format_sig(dtw.seconds(), 3) +
              " s (written to acceptance_timings.json)"};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = fs::relative(e.path(), dir).string();
    if (name == "timing.json" || name == "synthetic.jsonl") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files[name] = s.str();
  }
  return files;
}

Outcome determinism() {
  const auto dir = scratch("determinism");
  const auto input = write_synthetic(dir, 120, 13).string();
  const auto out = (dir / "out").string();
  auto run = [&](const char* command) {
    std::vector<const char*> argv{"popdyn", command, "--input", input.c_str(), "--out-dir", out.c_str(), "--threads", "0"};
    std::ostringstream sink;
    return run_cli(static_cast<int>(argv.size()), argv.data(), sink, sink);
  };
  int rc = run("cluster-naive") + run("cluster-vector");
  const auto first = snapshot(out);
  rc += run("cluster-naive") + run("cluster-vector");
  const auto second = snapshot(out);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    if (it == second.end() || it->second != bytes) ++differing;
  }
  fs::remove_all(dir);
  return {rc == 0 && differing == 0 && first.size() == second.size() && first.size() >= 6,
          std::to_string(first.size()) + " output files compared, " + std::to_string(differing) + " differ"};
}

Outcome recovery() {
  SynthConfig sc;
  sc.n = 400;
  sc.seed = 14;
  const auto corpus = generate_synthetic(sc);
  std::vector<LikeSeries> series;
  std::map<std::string, int> truth_of;
  for (const auto& s : corpus) {
    series.push_back(s.series);
    truth_of[s.series.id] = static_cast<int>(s.profile);
  }
  RunConfig cfg;
  auto prepared = prepare_corpus(series, cfg);
  std::vector<int> truth;
  for (const auto& w : prepared.windows) truth.push_back(truth_of[w.id]);
  const auto r = run_naive(cfg, std::move(prepared), false);
  const double ari = top_cluster_agreement(r.labeling.labels, truth, kAllProfiles.size());
  return {ari > 0.8, "top-4 cluster ARI " + format_sig(ari, 4) + " over " + std::to_string(truth.size()) +
                         " series, " + std::to_string(r.summary.n_clusters) + " clusters, noise " +
                         format_sig(100 * r.summary.noise_rate, 3) + "%"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"DTW equals exhaustive path enumeration", dtw_oracle},
      {"FastDTW exact at full radius", fastdtw_exact},
      {"L1 metric axioms", l1_axioms},
      {"penalty function anchors and shape", penalty},
      {"HDBSCAN selection equals exhaustive search", hdbscan_oracle},
      {"labels invariant under cubing distances", rank_invariance},
      {"iterative clustering on layered densities", iterative},
      {"TV denoising optimality", tvd},
      {"boost pipeline", boosts},
      {"PCA", pca},
      {"autoencoder gradients and training", autoencoder},
      {"pairwise timing at 200 series", performance},
      {"end-to-end determinism", determinism},
      {"recovery of generator profiles", recovery},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
