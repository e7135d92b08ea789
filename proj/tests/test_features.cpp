#include <catch2/catch_amalgamated.hpp>

#include "fixtures.hpp"
#include "oracles/random.hpp"
#include "popdyn/features.hpp"
#include "popdyn/hdbscan.hpp"

using namespace popdyn;
using Catch::Approx;
using V = std::vector<double>;

namespace {

GriddedSeries grid(V v, double step = 300.0, std::string id = "g") {
  GriddedSeries g;
  g.id = std::move(id);
  g.step = step;
  g.values = std::move(v);
  g.n_max_likes = g.values.empty() ? 0.0 : g.values.back();
  return g;
}

// Piecewise-linear curve: flat, then each (length, gain) segment in turn separated by flat gaps.
GriddedSeries bumps(const std::vector<std::pair<std::size_t, double>>& rises, std::size_t gap, std::string id = "b") {
  V v(gap, 0.0);
  double level = 0.0;
  for (auto [len, gain] : rises) {
    for (std::size_t k = 1; k <= len; ++k) v.push_back(level + gain * static_cast<double>(k) / static_cast<double>(len));
    level += gain;
    for (std::size_t k = 0; k < gap; ++k) v.push_back(level);
  }
  return grid(v, 300.0, std::move(id));
}

double pearson(const V& a, const V& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("derivative estimate", "[features][derivative]") {
  CHECK(derivative_estimate(grid({0, 5, 10}, 5.0)) == V{1, 1});
  CHECK(derivative_estimate(grid({3, 3, 3, 3}, 5.0)) == V{0, 0, 0});
  CHECK(derivative_estimate(grid({0, 0, 9, 9}, 3.0)) == V{0, 3, 0});
  CHECK_THROWS_AS(derivative_estimate(grid({1})), ValidationError);
}

TEST_CASE("sign code", "[features][encode]") {
  CHECK(boost_encode(V{1, 1, 3, 3, 0, 0}).symbols == std::vector<int>{0, 1, 0, -1, 0});
  CHECK(boost_encode(V{2, 2, 2}).symbols == std::vector<int>{0, 0});
  CHECK(boost_encode(V{1, 1 + 1e-5, 50}).symbols == std::vector<int>{0, 1});
  const auto plateaus = boost_encode(V{0, 0, 1, 1, 2, 2, 5});
  CHECK(std::count(plateaus.symbols.begin(), plateaus.symbols.end(), -1) == 0);
  SignCode c{{0, 1, 1, 0, -1, 0, -1, 1}};
  CHECK(c.compressed() == std::vector<int>{1, -1, 1});
}

TEST_CASE("boost extraction rules", "[features][extract]") {
  const auto g = grid({0, 0, 4, 9, 9});
  const auto one = boost_extract(g, SignCode{{1, 0, -1}});
  REQUIRE(one.count() == 1);
  CHECK(one.boosts[0].start_index == 1);
  CHECK(one.boosts[0].end_index == 3);
  CHECK(one.boosts[0].raw_increase == 9.0);

  const auto edges = boost_extract(grid({0, 5, 5, 8, 8}), SignCode{{-1, 1, -1}});
  REQUIRE(edges.count() == 2);
  CHECK(edges.boosts[0].start_index == 0);
  CHECK(edges.boosts[0].end_index == 1);
  CHECK(edges.boosts[1].start_index == 2);
  CHECK(edges.boosts[1].end_index == 3);

  const auto tail = boost_extract(grid({0, 0, 0, 2, 4}), SignCode{{0, 1, 0}});
  REQUIRE(tail.count() == 1);
  CHECK(tail.boosts[0].end_index == 4);

  CHECK(boost_extract(grid({1, 1, 1, 1}), SignCode{{0, 0}}).count() == 0);
  CHECK_THROWS_AS(boost_extract(g, SignCode{{1}}), ValidationError);
}

TEST_CASE("two-bump curve yields its two rises", "[features][extract]") {
  const auto g = bumps({{4, 300.0}, {6, 120.0}}, 12);
  const double cell = 300.0 / 4.0;
  for (double lambda : {1e-8, 1e-6, 1e-4}) {
    const auto p = extract_boosts(g, {lambda, DerivativeScale::relative});
    REQUIRE(p.count() == 2);
    CHECK(p.boosts[0].raw_increase == Approx(300.0).margin(cell));
    CHECK(p.boosts[1].raw_increase == Approx(120.0).margin(cell));
    CHECK(p.boosts[0].end_index <= p.boosts[1].start_index);
  }
}

TEST_CASE("boost intervals are disjoint and bounded by the total gain", "[features][property]") {
  oracle::Rng rng(51);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = grid(rng.monotone(static_cast<std::size_t>(rng.integer(3, 120)), 30));
    const auto p = extract_boosts(g, {std::pow(10.0, rng.uniform(-6, 0)), DerivativeScale::relative});
    double total = 0.0;
    for (std::size_t k = 0; k < p.count(); ++k) {
      CHECK(p.boosts[k].raw_increase > 0.0);
      CHECK(p.boosts[k].start_index < p.boosts[k].end_index);
      if (k > 0) CHECK(p.boosts[k - 1].end_index <= p.boosts[k].start_index);
      total += p.boosts[k].raw_increase;
    }
    CHECK(total <= g.values.back() - g.values.front() + 1e-9);
  }
}

TEST_CASE("lambda selection", "[features][lambda]") {
  const std::vector<GriddedSeries> ramps{grid({0, 1, 2, 3, 4}), grid({0, 2, 4, 6, 8})};
  const auto flat = select_lambda(ramps, 6);
  CHECK(flat.lambda == Approx(1e-6));
  CHECK(flat.cap_reached);

  std::vector<std::pair<std::size_t, double>> eight;
  for (int k = 0; k < 8; ++k) eight.push_back({2, 50.0 + 10.0 * k});
  const std::vector<GriddedSeries> spiky{bumps(eight, 6)};
  const auto sel = select_lambda(spiky, 6);
  CHECK(sel.cap_reached);
  CHECK(sel.max_boosts <= 6);
  CHECK(extract_boosts(spiky[0], {sel.lambda, DerivativeScale::relative}).count() <= 6);
  // Slightly below the returned value the cap is broken (1% bracket).
  CHECK(extract_boosts(spiky[0], {sel.lambda / 1.02, DerivativeScale::relative}).count() > 6);

  const auto low = select_lambda(spiky, std::numeric_limits<std::size_t>::max());
  CHECK(low.lambda < sel.lambda);
  CHECK(extract_boosts(spiky[0], {low.lambda, DerivativeScale::relative}).count() == 8);

  CHECK_THROWS_AS(select_lambda(std::span<const GriddedSeries>{}, 6), ValidationError);
}

TEST_CASE("an unreachable cap returns the largest lambda with a warning", "[features][lambda]") {
  // The full range always reaches the cap (a constant derivative has no boosts), so narrow it.
  const std::vector<GriddedSeries> two{bumps({{4, 300.0}, {6, 120.0}}, 12)};
  LambdaSearch narrow;
  narrow.high_ratio = 1e-3;
  const auto sel = select_lambda(two, 1, DerivativeScale::relative, narrow);
  CHECK_FALSE(sel.cap_reached);
  CHECK_FALSE(sel.warning.empty());
  CHECK(sel.max_boosts == 2);
  CHECK(select_lambda(two, 1).cap_reached);
  narrow.low_ratio = 1.0;
  CHECK_THROWS_AS(select_lambda(two, 1, DerivativeScale::relative, narrow), ValidationError);
}

TEST_CASE("key instant selection", "[features][instants]") {
  // Every t_p proportional to a common scale: all correlations are 1, so the default wins.
  std::vector<WindowedSeries> same_shape;
  for (int k = 1; k <= 6; ++k) {
    WindowedSeries w;
    w.id = std::to_string(k);
    for (int i = 0; i <= 10; ++i) w.samples.push_back({100.0 * k * i, 10.0 * i});
    w.n_max_likes = 100.0;
    same_shape.push_back(w);
  }
  const auto tied = select_key_instants(same_shape);
  CHECK(tied.least_correlated == kDefaultTriplet);
  CHECK(tied.chosen == kDefaultTriplet);
  CHECK(tied.pca_top3_ratio == Approx(1.0));

  std::vector<WindowedSeries> identical(4, same_shape[0]);
  const auto degenerate = select_key_instants(identical);
  CHECK(degenerate.degenerate);
  CHECK(degenerate.chosen == kDefaultTriplet);

  CHECK_THROWS_AS(select_key_instants(std::span<const WindowedSeries>(same_shape.data(), 2)), ValidationError);
}

TEST_CASE("key instant selection agrees with an exhaustive triplet scan", "[features][instants][property]") {
  oracle::Rng rng(52);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<WindowedSeries> corpus;
    for (int k = 0; k < 40; ++k) {
      // Independent durations for the early, middle and late thirds of the rise.
      WindowedSeries w;
      w.id = std::to_string(k);
      const double seg[3] = {rng.uniform(100, 5000), rng.uniform(100, 5000), rng.uniform(100, 5000)};
      double t = 0.0;
      w.samples.push_back({0.0, 0.0});
      for (int s = 0; s < 3; ++s)
        for (int i = 1; i <= 10; ++i) {
          t += seg[s] / 10.0;
          w.samples.push_back({t, (10.0 * s + i) * 10.0 / 3.0});
        }
      w.n_max_likes = w.samples.back().likes;
      corpus.push_back(w);
    }
    const auto sel = select_key_instants(corpus);
    std::vector<V> cols(9);
    for (const auto& w : corpus) {
      const auto t = key_instants(w, kKeyPercents);
      for (std::size_t j = 0; j < 9; ++j) cols[j].push_back(t[j]);
    }
    double best = 1e300;
    for (std::size_t a = 0; a < 9; ++a)
      for (std::size_t b = a + 1; b < 9; ++b)
        for (std::size_t c = b + 1; c < 9; ++c)
          best = std::min(best, std::abs(pearson(cols[a], cols[b])) + std::abs(pearson(cols[a], cols[c])) +
                                    std::abs(pearson(cols[b], cols[c])));
    CHECK(sel.triplet_score == Approx(best).margin(1e-9));
    const auto idx = [](double p) { return static_cast<std::size_t>(p / 10.0) - 1; };
    const auto& lc = sel.least_correlated;
    CHECK(std::abs(pearson(cols[idx(lc[0])], cols[idx(lc[1])])) + std::abs(pearson(cols[idx(lc[0])], cols[idx(lc[2])])) +
              std::abs(pearson(cols[idx(lc[1])], cols[idx(lc[2])])) ==
          Approx(best).margin(1e-9));
    CHECK(sel.chosen == kDefaultTriplet);
    CHECK(sel.pca_top3_ratio > 0.0);
    CHECK(sel.pca_top3_ratio <= 1.0 + 1e-12);
  }
}

TEST_CASE("similarity kernels", "[features][embed]") {
  const auto d = fixtures::euclidean({{0}, {1}, {4}});
  const auto lin = similarity_rows(d, SimilarityKernel::linear);
  CHECK(lin[0][0] == 1.0);
  CHECK(lin[0][2] == 0.0);
  CHECK(lin[0][1] == Approx(0.75));
  const auto ex = similarity_rows(d, SimilarityKernel::exponential);
  CHECK(ex[0][1] == Approx(std::exp(-1.0 / (8.0 / 3.0))));
}

TEST_CASE("embedding of an identical corpus", "[features][embed]") {
  const DistanceMatrix zero(5);
  const auto e = embed_distance_matrix(zero, {});
  REQUIRE(e.rows.size() == 5);
  for (const auto& r : e.rows) CHECK(r == V(4, 0.0));
  CHECK_FALSE(e.warning.empty());
}

TEST_CASE("embedding separates two similarity blocks", "[features][embed]") {
  oracle::Rng rng(53);
  std::vector<std::vector<double>> pts;
  for (int k = 0; k < 24; ++k) pts.push_back({(k < 12 ? 0.0 : 50.0) + rng.normal(), rng.normal()});
  const auto d = fixtures::euclidean(pts);
  EmbedConfig cfg;
  cfg.seed = 3;
  const auto e = embed_distance_matrix(d, cfg);
  REQUIRE(e.rows.size() == 24);
  for (const auto& r : e.rows) CHECK(r.size() == 4);
  CHECK(e.loss_trace.back() < e.loss_trace.front());
  auto dist = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += (e.rows[a][k] - e.rows[b][k]) * (e.rows[a][k] - e.rows[b][k]);
    return std::sqrt(s);
  };
  double within = 0.0, between = 1e300;
  for (std::size_t a = 0; a < 24; ++a)
    for (std::size_t b = a + 1; b < 24; ++b) {
      if ((a < 12) == (b < 12))
        within = std::max(within, dist(a, b));
      else
        between = std::min(between, dist(a, b));
    }
  CHECK(between > within);
  const auto again = embed_distance_matrix(d, cfg);
  CHECK(again.rows == e.rows);
}

TEST_CASE("tweet vector assembly", "[features][assemble]") {
  WindowedSeries w;
  w.id = "ramp";
  for (int t = 0; t <= 100; t += 10) w.samples.push_back({static_cast<double>(t), static_cast<double>(t)});
  w.n_max_likes = 100.0;
  BoostProfile p;
  p.boosts = {{5, 8, 7.0}, {1, 3, 2.0}};
  const std::vector<WindowedSeries> ws{w};
  const std::vector<BoostProfile> ps{p};
  const std::vector<std::array<double, 3>> ts{{10, 50, 90}};
  Embedding e;
  e.rows = {{0.1, 0.2, 0.3, 0.4}};
  const auto v = assemble(ws, ps, ts, e);
  REQUIRE(v.size() == 1);
  CHECK(v[0].slope_mean == Approx(1.0));
  CHECK(v[0].boost1 == 2.0);
  CHECK(v[0].boost2 == 7.0);
  CHECK(v[0].boost3 == 0.0);
  CHECK(v[0].components().size() == 12);
  CHECK(v[0].components()[11] == 0.4);
  CHECK(v[0].t10 <= v[0].t50);
  CHECK(v[0].t50 <= v[0].t90);

  const std::vector<BoostProfile> none;
  CHECK_THROWS_AS(assemble(ws, none, ts, e), ValidationError);
}

TEST_CASE("standardization", "[features][standardize]") {
  CHECK_THROWS_WITH(standardize({{1, 2, 3}, {1, 2, 3}}), Catch::Matchers::ContainsSubstring("degenerate corpus"));
  CHECK_THROWS_AS(standardize({{1, 2, 3}}), ValidationError);

  oracle::Rng rng(54);
  std::vector<std::vector<double>> rows(30, V(5));
  for (auto& r : rows) r = {rng.uniform(0, 1e5), rng.normal(), 7.0, rng.uniform(), rng.normal() * 1e-3};
  const auto s = standardize(rows);
  CHECK(s.dropped == std::vector<std::size_t>{2});
  CHECK(s.kept == std::vector<std::size_t>{0, 1, 3, 4});
  for (std::size_t k = 0; k < s.kept.size(); ++k) {
    double m = 0.0, v = 0.0;
    for (const auto& r : s.rows) m += r[k] / 30.0;
    for (const auto& r : s.rows) v += (r[k] - m) * (r[k] - m) / 29.0;
    CHECK(m == Approx(0.0).margin(1e-8));
    CHECK(v == Approx(1.0).margin(1e-8));
  }

  auto scaled = rows;
  for (auto& r : scaled) {
    r[0] = 10.0 * r[0] - 3.0;
    r[3] = 0.01 * r[3] + 100.0;
  }
  const auto s2 = standardize(scaled);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < s.kept.size(); ++k) CHECK(s2.rows[i][k] == Approx(s.rows[i][k]).margin(1e-9));
}

TEST_CASE("clusters of standardized vectors ignore per-component rescaling", "[features][standardize][property]") {
  oracle::Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> rows;
    for (int k = 0; k < 30; ++k) {
      const double c = static_cast<double>(k % 3) * 6.0;
      rows.push_back({c + rng.normal(), 1e4 * (c + rng.normal()), 1e-2 * rng.normal()});
    }
    auto scaled = rows;
    for (auto& r : scaled) {
      r[0] = 3.0 * r[0] + 1.0;
      r[1] = 1e-4 * r[1];
      r[2] = 50.0 * r[2] - 2.0;
    }
    const auto a = fixtures::euclidean(standardize(rows).rows);
    const auto b = fixtures::euclidean(standardize(scaled).rows);
    CHECK(cluster(DistanceView(a), {2, 2}).labels == cluster(DistanceView(b), {2, 2}).labels);
  }
}
