#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "windinr/osse.hpp"
#include "windinr/rng.hpp"

using namespace windinr;
using namespace windinr::osse;
using baselines::BaselineResult;
using baselines::FieldAccessor;

namespace fs = std::filesystem;

namespace {

synth::Case lattice_case(const std::string& name, std::size_t n, double (*u)(const QueryPoint&)) {
  synth::Case c;
  c.name = name;
  Rng rng(fnv1a64(name));
  for (std::size_t i = 0; i < n; ++i) {
    synth::HrSample s;
    s.p = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, 0, 1)};
    s.truth = {u(s.p), 0.5 * s.p.ry, -0.1 * s.p.h};
    c.hr.push_back(s);
  }
  return c;
}

double smooth_u(const QueryPoint& p) { return 5.0 + std::sin(3.0 * p.rx) + p.h; }

class TruthField : public FieldAccessor {
 public:
  explicit TruthField(const synth::Case& c) : t_(c, 1) {}
  Tensor predict(std::span<const QueryPoint> points) const override { return t_(points); }

 private:
  TruthInterpolator t_;
};

class OffsetField : public FieldAccessor {
 public:
  OffsetField(std::shared_ptr<const FieldAccessor> base, double du) : base_(std::move(base)), du_(du) {}
  Tensor predict(std::span<const QueryPoint> points) const override {
    Tensor t = base_->predict(points);
    for (std::size_t i = 0; i < t.rows(); ++i) t.at(i, 0) += du_;
    return t;
  }

 private:
  std::shared_ptr<const FieldAccessor> base_;
  double du_;
};

BaselineResult result(baselines::Method m, std::shared_ptr<const FieldAccessor> f, std::size_t steps = 0) {
  BaselineResult r;
  r.method = m;
  r.field = std::move(f);
  r.steps = steps;
  r.seconds = 0.25;
  return r;
}

/// no-obs is off by +1 m/s in u; corrections remove that offset once any observation arrives,
/// except full_ft which overshoots and partial_ft which throws.
RunnerFactory stub_runners() {
  return [](const synth::Case& c) -> CaseRunner {
    auto truth = std::make_shared<TruthField>(c);
    return [truth](baselines::Method m, const std::vector<correction::Observation>& obs) {
      using baselines::Method;
      auto background = std::make_shared<OffsetField>(truth, 1.0);
      if (m == Method::noobs || obs.empty()) return result(m, background);
      if (m == Method::partial_ft) throw NumericalError("stub divergence");
      if (m == Method::full_ft) return result(m, std::make_shared<OffsetField>(truth, -2.0), 20);
      if (m == Method::iso) return result(m, std::make_shared<OffsetField>(truth, 0.5), 20);
      return result(m, truth, 20);
    };
  };
}

}  // namespace

TEST_CASE("pooled and component metrics") {
  const Tensor zero({4, 3});
  const Metrics z = compute_metrics(zero, zero);
  CHECK(z.rmse == 0.0);
  CHECK(z.mae == 0.0);

  const Tensor pred = Tensor::matrix(1, 3, {3, 4, 0});
  const Metrics m = compute_metrics(pred, Tensor({1, 3}));
  CHECK(m.rmse == doctest::Approx(std::sqrt(25.0 / 3.0)).epsilon(1e-15));
  CHECK(m.rmse == doctest::Approx(2.8868).epsilon(1e-4));
  CHECK(m.component_rmse[0] == 3.0);
  CHECK(m.component_rmse[1] == 4.0);
  CHECK(m.component_rmse[2] == 0.0);

  Tensor c({5, 3});
  for (std::size_t i = 0; i < 15; ++i) c[i] = (i % 2) ? 0.7 : -0.7;
  CHECK(compute_metrics(c, Tensor({5, 3})).mae == doctest::Approx(0.7).epsilon(1e-15));

  CHECK_THROWS_AS(compute_metrics(Tensor({2, 3}), Tensor({3, 3})), std::invalid_argument);
  CHECK_THROWS_AS(compute_metrics(Tensor({0, 3}), Tensor({0, 3})), std::invalid_argument);
}

TEST_CASE("height bins report empty groups as absent") {
  const auto edges = height_edges();
  REQUIRE(edges.size() == 9);
  CHECK(edges[1] == 250.0);
  CHECK(edges.back() == 2000.0);
  const Tensor pred = Tensor::matrix(3, 3, {1, 0, 0, 2, 0, 0, 3, 0, 0});
  const std::vector<double> h = {10.0, 100.0, 1999.0};
  const Metrics m = compute_metrics(pred, Tensor({3, 3}), h, edges);
  REQUIRE(m.height_rmse.size() == 8);
  CHECK(*m.height_rmse[0] == doctest::Approx(std::sqrt(5.0 / 6.0)));
  CHECK(*m.height_rmse[7] == doctest::Approx(std::sqrt(3.0)));
  for (std::size_t b = 1; b < 7; ++b) CHECK_FALSE(m.height_rmse[b].has_value());
  CHECK(m.height_count[0] == 2);
}

TEST_CASE("improvement map sign convention") {
  const Tensor truth = Tensor::matrix(2, 3, {1, 2, 3, -1, 0, 1});
  const Tensor noobs = Tensor::matrix(2, 3, {2, 2, 3, -1, 3, 5});
  for (double d : improvement_map(noobs, noobs, truth)) CHECK(d == 0.0);
  const auto oracle = improvement_map(truth, noobs, truth);
  CHECK(oracle[0] == 1.0);
  CHECK(oracle[1] == 5.0);
  const Tensor worse = Tensor::matrix(2, 3, {4, 2, 3, -1, 0, 1});
  const auto mixed = improvement_map(worse, noobs, truth);
  CHECK(mixed[0] < 0.0);
  CHECK(mixed[1] > 0.0);
}

TEST_CASE("observation sampling") {
  const synth::Case c = lattice_case("case_0003", 1000, smooth_u);
  RandomOsseConfig cfg;
  const ObservationDraw a = sample_observations(c, cfg), b = sample_observations(c, cfg);
  CHECK(a.obs_indices == b.obs_indices);
  CHECK(a.holdout == b.holdout);
  REQUIRE(a.observations.size() == 128);
  CHECK(a.holdout.size() == 256);
  for (std::size_t i = 0; i < 128; ++i) CHECK(a.observations[i].y == b.observations[i].y);

  std::set<std::size_t> obs(a.obs_indices.begin(), a.obs_indices.end());
  CHECK(obs.size() == 128);
  for (std::size_t i : a.holdout) CHECK(obs.count(i) == 0);

  CHECK(case_seed("case_0003", 1) == (fnv1a64("case_0003") ^ 1ULL));
  RandomOsseConfig other = cfg;
  other.seed = 2;
  CHECK(sample_observations(c, other).obs_indices != a.obs_indices);

  CHECK_THROWS_AS(sample_observations(lattice_case("small", 383, smooth_u), cfg), std::invalid_argument);
  CHECK_NOTHROW(sample_observations(lattice_case("exact", 384, smooth_u), cfg));
}

TEST_CASE("observation noise has the configured standard deviation") {
  synth::Case c;
  c.name = "noise";
  c.hr.resize(100000 + 256);
  for (std::size_t i = 0; i < c.hr.size(); ++i) c.hr[i].p = {0.0, 0.0, 0.1};
  const ObservationDraw d = sample_observations(c, 100000, 256, correction::kNoiseStd, 11);
  double s1 = 0.0, s2 = 0.0, w2 = 0.0;
  for (const auto& o : d.observations) {
    s1 += o.y[0];
    s2 += o.y[0] * o.y[0];
    w2 += o.y[2] * o.y[2];
  }
  CHECK(d.observations[0].variance[0] == 0.25);
  const double n = 1e5;
  const double sd = std::sqrt((s2 - s1 * s1 / n) / (n - 1));
  CHECK(std::abs(sd - 0.5) <= 3.0 * 0.5 / std::sqrt(2.0 * n));
  CHECK(std::abs(std::sqrt(w2 / n) - 0.2) <= 3.0 * 0.2 / std::sqrt(2.0 * n));
  CHECK(std::abs(s1 / n) <= 3.0 * 0.5 / std::sqrt(n));
}

TEST_CASE("random OSSE with a perfect field and stub baselines") {
  std::vector<synth::Case> cases;
  for (int i = 0; i < 4; ++i) cases.push_back(lattice_case("case_" + std::to_string(i), 700, smooth_u));
  using baselines::Method;
  const std::vector<Method> methods = {Method::windinr, Method::iso, Method::full_ft, Method::partial_ft};
  RandomOsseConfig cfg;
  cfg.sweep = true;
  cfg.sweep_counts = {8, 64};
  cfg.heights = true;
  const RandomOsseResult r = run_random_osse(cases, stub_runners(), methods, cfg);

  REQUIRE(r.rows.size() == 4 * 5);
  REQUIRE(r.aggregate.size() == 5);
  const Aggregate& noobs = r.aggregate[0];
  CHECK(noobs.method == Method::noobs);
  CHECK_FALSE(noobs.seconds_mean.has_value());
  CHECK(noobs.improved_fraction == 0.0);
  CHECK(noobs.holdout_rmse == doctest::Approx(1.0 / std::sqrt(3.0)));

  const Aggregate& win = r.aggregate[1];
  CHECK(win.method == Method::windinr);
  CHECK(win.field_rmse == 0.0);
  CHECK(win.holdout_rmse == 0.0);
  CHECK(win.holdout_mae == 0.0);
  CHECK(win.improved_fraction == 1.0);
  CHECK(*win.seconds_mean == 0.25);
  CHECK(*win.seconds_total == 1.0);

  CHECK(r.aggregate[2].holdout_rmse < noobs.holdout_rmse);
  CHECK(r.aggregate[3].holdout_rmse > noobs.holdout_rmse);
  CHECK(r.aggregate[3].improved_fraction == 0.0);
  CHECK(r.aggregate[4].failures == 4);
  CHECK(r.aggregate[4].cases == 0);
  for (const CaseRow& row : r.rows)
    if (row.method == Method::partial_ft) CHECK(row.note.find("stub divergence") != std::string::npos);

  REQUIRE(r.sweep.size() == 2 * 5);
  CHECK(r.sweep[1].holdout_rmse == 0.0);
  CHECK(r.sweep[1].improved_fraction == 1.0);
  REQUIRE(r.heights.size() == 8 * 5);
  CHECK(*r.heights[1].rmse == 0.0);

  const RandomOsseResult again = run_random_osse(cases, stub_runners(), methods, cfg);
  CHECK(per_case_table(again).to_string() == per_case_table(r).to_string());

  const fs::path dir = fs::temp_directory_path() / "windinr_test_osse";
  fs::remove_all(dir);
  write_random_outputs(dir, r);
  const io::CsvTable agg = io::read_csv(dir / "aggregate.csv");
  CHECK(agg.rows[0][agg.column("seconds_mean")].empty());
  CHECK(fs::exists(dir / "sweep.csv"));
  CHECK(fs::exists(dir / "heights.csv"));
  fs::remove_all(dir);
}

TEST_CASE("truth interpolation") {
  const synth::Case c = lattice_case("interp", 500, smooth_u);
  const TruthInterpolator t(c);
  const auto at = t(c.hr[17].p);
  CHECK(at[0] == c.hr[17].truth.u);
  CHECK(at[1] == c.hr[17].truth.v);

  synth::Case flat = c;
  for (auto& s : flat.hr) s.truth = {3.0, -1.0, 0.25};
  const auto v = TruthInterpolator(flat)({0.1, 0.2, 0.3});
  CHECK(v[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(v[1] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(v[2] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("UAV approach geometry") {
  const UavOsseConfig cfg;
  const UavGeometry g = uav_geometry(cfg);
  CHECK(g.path_length == doctest::Approx(std::hypot(1.5, 0.7) * 3200.0));
  CHECK(g.steps == static_cast<std::size_t>((g.path_length - 500.0) / 100.0) + 1);

  for (std::size_t k = 0; k < g.steps; ++k) {
    CHECK(std::abs(g.uav_s(k, cfg) - g.helicopter_s(k, cfg) - 500.0) <= 1.0);
    const Corridor cor = corridor_grid(g, k, cfg);
    CHECK(cor.points.size() == 112);
    if (k > 0) {
      const double t = 5.0 * static_cast<double>(k);
      CHECK(g.observation_count(k, cfg) ==
            static_cast<std::size_t>(std::floor(std::min(20.0 * t, g.path_length - 500.0) / 100.0)) + 1);
    }
  }
  CHECK(g.observation_count(0, cfg) == 0);
  CHECK(g.observation_count(27, cfg) == 28);

  // corridor extent in meters
  const Corridor c0 = corridor_grid(g, 3, cfg);
  auto dist = [](const QueryPoint& a, const QueryPoint& b) {
    return std::hypot(a.rx - b.rx, a.ry - b.ry) * synth::kMetersPerUnit;
  };
  CHECK(dist(c0.points[0], c0.points[6]) == doctest::Approx(300.0));
  CHECK(dist(c0.points[3], c0.points[15 * 7 + 3]) == doctest::Approx(800.0));
  CHECK(dist(c0.points[3], g.at(g.helicopter_s(3, cfg), cfg)) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(c0.points[0].h == doctest::Approx(0.04));

  UavOsseConfig edge = cfg;
  edge.start = {-0.2, 0.0};
  edge.end = {0.95, 0.0};
  const UavGeometry ge = uav_geometry(edge);
  CHECK(corridor_grid(ge, ge.steps - 1, edge).clipped > 0);
}

TEST_CASE("UAV OSSE run") {
  const synth::Case c = lattice_case("uav", 3000, smooth_u);
  UavOsseConfig cfg;
  cfg.map_step = 5;
  cfg.map_resolution = 8;
  using baselines::Method;
  const std::vector<Method> methods = {Method::windinr, Method::full_ft, Method::iso};
  const CaseRunner runner = stub_runners()(c);
  const UavOsseResult r = run_uav_osse(c, runner, methods, cfg);

  REQUIRE(r.methods.size() == 4);
  REQUIRE(r.steps.size() == uav_geometry(cfg).steps);
  const UavStep& s0 = r.steps[0];
  CHECK(s0.observations == 0);
  for (std::size_t k = 1; k < 4; ++k) CHECK(*s0.rmse[k] == *s0.rmse[0]);
  CHECK(*r.steps[1].rmse[1] < *r.steps[1].rmse[0]);
  CHECK(r.steps[27].observations == 28);
  CHECK(r.observations.size() == r.steps.back().observations);

  REQUIRE(r.map.has_value());
  CHECK(r.map->points.size() == 64);
  REQUIRE(r.map->improvement.size() == 3);
  for (double d : r.map->improvement[0]) CHECK(d >= 0.0);

  CHECK(trajectory_table(run_uav_osse(c, runner, methods, cfg)).to_string() == trajectory_table(r).to_string());

  const std::vector<Method> with_idw = {Method::idw};
  CHECK_THROWS_AS(run_uav_osse(c, runner, with_idw, cfg), std::invalid_argument);

  const fs::path dir = fs::temp_directory_path() / "windinr_test_uav";
  fs::remove_all(dir);
  write_uav_outputs(dir, r);
  CHECK(io::read_grid(dir / "map_improvement_windinr.windgrid").shape() == Shape{8, 8});
  CHECK(io::read_csv(dir / "trajectory.csv").rows.size() == r.steps.size());
  fs::remove_all(dir);
}
