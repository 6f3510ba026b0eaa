#include "windinr/osse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "windinr/rng.hpp"

namespace windinr::osse {

namespace fs = std::filesystem;
using baselines::BaselineResult;

namespace {

std::string cell(double v) { return io::format_double(v); }
std::string cell(const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); }

std::size_t bin_of(double h, std::span<const double> edges) {
  if (edges.size() < 2 || h < edges.front() || h > edges.back()) return static_cast<std::size_t>(-1);
  const auto it = std::upper_bound(edges.begin(), edges.end(), h);
  const std::size_t b = static_cast<std::size_t>(it - edges.begin());
  return b == 0 ? static_cast<std::size_t>(-1) : std::min(b - 1, edges.size() - 2);
}

Tensor truth_of(const synth::Case& c, std::span<const std::size_t> idx) {
  Tensor t({idx.size(), 3});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& w = c.hr[idx[i]].truth;
    t.at(i, 0) = w.u;
    t.at(i, 1) = w.v;
    t.at(i, 2) = w.w;
  }
  return t;
}

Tensor rows_of(const Tensor& all, std::span<const std::size_t> idx) {
  Tensor t({idx.size(), 3});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) t.at(i, c) = all.at(idx[i], c);
  return t;
}

std::vector<QueryPoint> points_of(const synth::Case& c, std::span<const std::size_t> idx) {
  std::vector<QueryPoint> p;
  p.reserve(idx.size());
  for (std::size_t i : idx) p.push_back(c.hr[i].p);
  return p;
}

std::size_t index_of(std::span<const Method> methods, Method m) {
  return static_cast<std::size_t>(std::find(methods.begin(), methods.end(), m) - methods.begin());
}

std::vector<Method> with_noobs(std::span<const Method> methods) {
  std::vector<Method> out;
  if (std::find(methods.begin(), methods.end(), Method::noobs) == methods.end()) out.push_back(Method::noobs);
  for (Method m : methods)
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  return out;
}

}  // namespace

// -- metrics ----------------------------------------------------------------------

std::vector<double> height_edges(std::size_t bins, double top) {
  if (bins == 0 || !(top > 0.0)) throw std::invalid_argument("height bins need a positive count and top");
  std::vector<double> e(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) e[i] = top * static_cast<double>(i) / static_cast<double>(bins);
  return e;
}

Metrics compute_metrics(const Tensor& pred, const Tensor& truth, std::span<const double> heights_m,
                        std::span<const double> edges) {
  if (pred.rank() != 2 || pred.cols() != 3 || pred.shape() != truth.shape())
    throw std::invalid_argument("compute_metrics: predictions and truth must both be [n, 3]");
  const std::size_t n = pred.rows();
  if (n == 0) throw std::invalid_argument("compute_metrics: no points");
  if (!edges.empty() && heights_m.size() != n) throw std::invalid_argument("compute_metrics: one height per point");
  Metrics m;
  const std::size_t bins = edges.size() >= 2 ? edges.size() - 1 : 0;
  m.height_sse.assign(bins, 0.0);
  m.height_count.assign(bins, 0);
  std::array<double, 3> sse = {0, 0, 0};
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double point_sse = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double e = pred.at(i, c) - truth.at(i, c);
      sse[c] += e * e;
      point_sse += e * e;
      abs_sum += std::abs(e);
    }
    if (bins) {
      const std::size_t b = bin_of(heights_m[i], edges);
      if (b < bins) {
        m.height_sse[b] += point_sse;
        ++m.height_count[b];
      }
    }
  }
  const double dn = static_cast<double>(n);
  m.rmse = std::sqrt((sse[0] + sse[1] + sse[2]) / (3.0 * dn));
  m.mae = abs_sum / (3.0 * dn);
  for (std::size_t c = 0; c < 3; ++c) m.component_rmse[c] = std::sqrt(sse[c] / dn);
  for (std::size_t b = 0; b < bins; ++b)
    m.height_rmse.push_back(m.height_count[b] ? std::optional<double>(std::sqrt(
                                                    m.height_sse[b] / (3.0 * static_cast<double>(m.height_count[b]))))
                                              : std::nullopt);
  return m;
}

std::vector<double> error_norms(const Tensor& pred, const Tensor& truth) {
  if (pred.rank() != 2 || pred.cols() != 3 || pred.shape() != truth.shape())
    throw std::invalid_argument("error_norms: predictions and truth must both be [n, 3]");
  std::vector<double> e(pred.rows());
  for (std::size_t i = 0; i < e.size(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += (pred.at(i, c) - truth.at(i, c)) * (pred.at(i, c) - truth.at(i, c));
    e[i] = std::sqrt(s);
  }
  return e;
}

std::vector<double> improvement_map(const Tensor& method, const Tensor& noobs, const Tensor& truth) {
  const std::vector<double> e0 = error_norms(noobs, truth);
  const std::vector<double> em = error_norms(method, truth);
  std::vector<double> d(e0.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = e0[i] - em[i];
  return d;
}

// -- random-observation OSSE ---------------------------------------------------------

std::uint64_t case_seed(const std::string& case_name, std::uint64_t seed) { return fnv1a64(case_name) ^ seed; }

ObservationDraw sample_observations(const synth::Case& c, std::size_t n_obs, std::size_t n_holdout,
                                    const std::array<double, 3>& noise, std::uint64_t seed) {
  if (c.hr.size() < n_obs + n_holdout)
    throw std::invalid_argument("case " + c.name + " has " + std::to_string(c.hr.size()) + " points, need " +
                                std::to_string(n_obs + n_holdout));
  Rng rng(seed);
  const std::vector<std::size_t> idx = sample_without_replacement(c.hr.size(), n_obs + n_holdout, rng);
  ObservationDraw d;
  d.obs_indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_obs));
  d.holdout.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_obs), idx.end());
  d.observations.reserve(n_obs);
  for (std::size_t i : d.obs_indices) {
    const auto& s = c.hr[i];
    Observation o;
    o.p = s.p;
    const std::array<double, 3> t = {s.truth.u, s.truth.v, s.truth.w};
    for (std::size_t k = 0; k < 3; ++k) {
      o.y[k] = t[k] + noise[k] * standard_normal(rng);
      o.variance[k] = noise[k] * noise[k];
    }
    d.observations.push_back(o);
  }
  return d;
}

ObservationDraw sample_observations(const synth::Case& c, const RandomOsseConfig& config) {
  return sample_observations(c, config.n_obs, config.n_holdout, config.noise, case_seed(c.name, config.seed));
}

RunnerFactory model_runners(const synth::TerrainGrid& terrain, const model::WindModel& model,
                            const prior::PriorStats& adaptive, const prior::PriorStats* isotropic,
                            const baselines::BaselineConfig& config) {
  return [&terrain, &model, &adaptive, isotropic, config](const synth::Case& c) -> CaseRunner {
    auto setup = std::make_shared<baselines::CaseSetup>(
        baselines::make_setup(model, model::make_inputs(terrain, c), adaptive, isotropic));
    return [setup, config](Method m, const std::vector<Observation>& obs) {
      return baselines::run_method(m, *setup, obs, config);
    };
  };
}

std::vector<Aggregate> aggregate_rows(const std::vector<CaseRow>& rows, std::span<const Method> methods) {
  std::vector<Aggregate> out;
  for (Method m : methods) {
    Aggregate a;
    a.method = m;
    std::size_t improved = 0, compared = 0;
    double total = 0.0;
    bool timed = false;
    for (const CaseRow& r : rows) {
      if (r.method != m) continue;
      if (!r.ok) {
        ++a.failures;
        continue;
      }
      ++a.cases;
      a.field_rmse += r.field.rmse;
      a.field_mae += r.field.mae;
      a.holdout_rmse += r.holdout.rmse;
      a.holdout_mae += r.holdout.mae;
      for (std::size_t c = 0; c < 3; ++c) a.component_rmse[c] += r.holdout.component_rmse[c];
      if (r.seconds) {
        total += *r.seconds;
        timed = true;
      }
      if (m == Method::noobs) continue;
      for (const CaseRow& b : rows) {
        if (b.method != Method::noobs || b.case_name != r.case_name || !b.ok) continue;
        ++compared;
        if (r.holdout.rmse < b.holdout.rmse) ++improved;
      }
    }
    if (a.cases) {
      const double n = static_cast<double>(a.cases);
      a.field_rmse /= n;
      a.field_mae /= n;
      a.holdout_rmse /= n;
      a.holdout_mae /= n;
      for (double& v : a.component_rmse) v /= n;
      if (timed) {
        a.seconds_total = total;
        a.seconds_mean = total / n;
      }
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      a.field_rmse = a.field_mae = a.holdout_rmse = a.holdout_mae = nan;
      a.component_rmse = {nan, nan, nan};
    }
    a.improved_fraction = compared ? static_cast<double>(improved) / static_cast<double>(compared) : 0.0;
    out.push_back(a);
  }
  return out;
}

namespace {

struct SweepCell {
  bool ok = false;
  double rmse = 0.0, mae = 0.0;
};

}  // namespace

RandomOsseResult run_random_osse(const std::vector<synth::Case>& cases, const RunnerFactory& runners,
                                 std::span<const Method> requested, const RandomOsseConfig& config) {
  const std::vector<Method> methods = with_noobs(requested);
  const std::size_t nm = methods.size(), nc = cases.size();
  const std::size_t ns = config.sweep ? config.sweep_counts.size() : 0;
  const std::span<const double> edges =
      config.heights ? std::span<const double>(config.height_edges) : std::span<const double>();

  RandomOsseResult result;
  result.rows.resize(nc * nm);
  std::vector<SweepCell> sweep(nc * ns * nm);

  const long long n_cases = static_cast<long long>(nc);
#pragma omp parallel for schedule(dynamic, 1) if (!config.serial)
  for (long long ci = 0; ci < n_cases; ++ci) {
    const synth::Case& c = cases[static_cast<std::size_t>(ci)];
    CaseRow* rows = &result.rows[static_cast<std::size_t>(ci) * nm];
    for (std::size_t k = 0; k < nm; ++k) {
      rows[k].case_name = c.name;
      rows[k].method = methods[k];
    }
    CaseRunner run;
    ObservationDraw draw;
    try {
      run = runners(c);
      draw = sample_observations(c, config);
    } catch (const std::exception& e) {
      for (std::size_t k = 0; k < nm; ++k) rows[k].note = e.what();
      continue;
    }
    std::vector<QueryPoint> all(c.hr.size());
    std::vector<double> heights(c.hr.size());
    std::vector<std::size_t> every(c.hr.size());
    std::iota(every.begin(), every.end(), std::size_t{0});
    for (std::size_t i = 0; i < c.hr.size(); ++i) {
      all[i] = c.hr[i].p;
      heights[i] = c.hr[i].p.h * synth::kTopMeters;
    }
    const Tensor truth = truth_of(c, every);
    const Tensor holdout_truth = truth_of(c, draw.holdout);

    for (std::size_t k = 0; k < nm; ++k) {
      CaseRow& row = rows[k];
      try {
        const BaselineResult r = run(methods[k], draw.observations);
        const Tensor pred = r.field->predict(all);
        row.field = compute_metrics(pred, truth, edges.empty() ? std::span<const double>() : heights, edges);
        row.holdout = compute_metrics(rows_of(pred, draw.holdout), holdout_truth);
        if (methods[k] != Method::noobs) row.seconds = r.seconds;
        row.steps = r.steps;
        row.note = r.note;
        row.ok = true;
      } catch (const std::exception& e) {
        row.note = e.what();
      }
    }

    for (std::size_t s = 0; s < ns; ++s) {
      const std::size_t count = config.sweep_counts[s];
      ObservationDraw d;
      try {
        d = sample_observations(c, count, config.n_holdout, config.noise,
                                mix_seed(case_seed(c.name, config.seed), count));
      } catch (const std::exception&) {
        continue;
      }
      const std::vector<QueryPoint> hp = points_of(c, d.holdout);
      const Tensor ht = truth_of(c, d.holdout);
      for (std::size_t k = 0; k < nm; ++k) {
        SweepCell& cellv = sweep[(static_cast<std::size_t>(ci) * ns + s) * nm + k];
        try {
          const BaselineResult r = run(methods[k], d.observations);
          const Metrics mt = compute_metrics(r.field->predict(hp), ht);
          cellv = {true, mt.rmse, mt.mae};
        } catch (const std::exception&) {
          cellv.ok = false;
        }
      }
    }
  }

  result.aggregate = aggregate_rows(result.rows, methods);

  const std::size_t noobs_k = index_of(methods, Method::noobs);
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t k = 0; k < nm; ++k) {
      SweepRow row;
      row.n_obs = config.sweep_counts[s];
      row.method = methods[k];
      std::size_t improved = 0, compared = 0;
      for (std::size_t ci = 0; ci < nc; ++ci) {
        const SweepCell& v = sweep[(ci * ns + s) * nm + k];
        if (!v.ok) continue;
        ++row.cases;
        row.holdout_rmse += v.rmse;
        row.holdout_mae += v.mae;
        const SweepCell& base = sweep[(ci * ns + s) * nm + noobs_k];
        if (k != noobs_k && base.ok) {
          ++compared;
          if (v.rmse < base.rmse) ++improved;
        }
      }
      if (row.cases) {
        row.holdout_rmse /= static_cast<double>(row.cases);
        row.holdout_mae /= static_cast<double>(row.cases);
      }
      row.improved_fraction = compared ? static_cast<double>(improved) / static_cast<double>(compared) : 0.0;
      result.sweep.push_back(row);
    }
  }

  if (!edges.empty()) {
    for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
      for (std::size_t k = 0; k < nm; ++k) {
        HeightRow h;
        h.lo = edges[b];
        h.hi = edges[b + 1];
        h.method = methods[k];
        double sse = 0.0;
        for (std::size_t ci = 0; ci < nc; ++ci) {
          const CaseRow& r = result.rows[ci * nm + k];
          if (!r.ok) continue;
          sse += r.field.height_sse[b];
          h.count += r.field.height_count[b];
        }
        if (h.count) h.rmse = std::sqrt(sse / (3.0 * static_cast<double>(h.count)));
        result.heights.push_back(h);
      }
    }
  }
  return result;
}

RandomOsseResult run_random_osse(const synth::Dataset& data, const model::WindModel& model,
                                 const prior::PriorStats& adaptive, const prior::PriorStats* isotropic,
                                 std::span<const Method> methods, const RandomOsseConfig& config,
                                 const baselines::BaselineConfig& baseline) {
  std::vector<synth::Case> test;
  for (std::size_t i : data.splits.test) test.push_back(data.cases.at(i));
  return run_random_osse(test, model_runners(data.terrain, model, adaptive, isotropic, baseline), methods, config);
}

io::CsvTable per_case_table(const RandomOsseResult& r) {
  io::CsvTable t;
  t.header = {"case",   "method", "status", "field_rmse", "field_mae", "holdout_rmse", "holdout_mae",
              "rmse_u", "rmse_v", "rmse_w", "seconds",    "steps",     "note"};
  for (const CaseRow& row : r.rows) {
    if (!row.ok) {
      t.rows.push_back({row.case_name, baselines::method_name(row.method), "failed", "", "", "", "", "", "", "", "",
                        "", row.note});
      continue;
    }
    t.rows.push_back({row.case_name, baselines::method_name(row.method), "ok", cell(row.field.rmse),
                      cell(row.field.mae), cell(row.holdout.rmse), cell(row.holdout.mae),
                      cell(row.holdout.component_rmse[0]), cell(row.holdout.component_rmse[1]),
                      cell(row.holdout.component_rmse[2]), cell(row.seconds), std::to_string(row.steps), row.note});
  }
  return t;
}

io::CsvTable aggregate_table(const std::vector<Aggregate>& aggregate) {
  io::CsvTable t;
  t.header = {"method", "field_rmse", "field_mae", "holdout_rmse", "holdout_mae", "rmse_u", "rmse_v", "rmse_w",
              "seconds_mean", "seconds_total", "improved_fraction", "cases", "failures"};
  for (const Aggregate& a : aggregate)
    t.rows.push_back({baselines::method_name(a.method), cell(a.field_rmse), cell(a.field_mae), cell(a.holdout_rmse),
                      cell(a.holdout_mae), cell(a.component_rmse[0]), cell(a.component_rmse[1]),
                      cell(a.component_rmse[2]), cell(a.seconds_mean), cell(a.seconds_total),
                      cell(a.improved_fraction), std::to_string(a.cases), std::to_string(a.failures)});
  return t;
}

io::CsvTable sweep_table(const RandomOsseResult& r) {
  io::CsvTable t;
  t.header = {"n_obs", "method", "holdout_rmse", "holdout_mae", "improved_fraction", "cases"};
  for (const SweepRow& s : r.sweep)
    t.rows.push_back({std::to_string(s.n_obs), baselines::method_name(s.method), cell(s.holdout_rmse),
                      cell(s.holdout_mae), cell(s.improved_fraction), std::to_string(s.cases)});
  return t;
}

io::CsvTable height_table(const RandomOsseResult& r) {
  io::CsvTable t;
  t.header = {"height_lo_m", "height_hi_m", "method", "rmse", "points"};
  for (const HeightRow& h : r.heights)
    t.rows.push_back(
        {cell(h.lo), cell(h.hi), baselines::method_name(h.method), cell(h.rmse), std::to_string(h.count)});
  return t;
}

void write_random_outputs(const fs::path& dir, const RandomOsseResult& r) {
  fs::create_directories(dir);
  io::write_csv(dir / "per_case.csv", per_case_table(r));
  io::write_csv(dir / "aggregate.csv", aggregate_table(r.aggregate));
  if (!r.sweep.empty()) io::write_csv(dir / "sweep.csv", sweep_table(r));
  if (!r.heights.empty()) io::write_csv(dir / "heights.csv", height_table(r));
}

// -- UAV-aided approach OSSE ---------------------------------------------------------

TruthInterpolator::TruthInterpolator(const synth::Case& c, std::size_t neighbors, double power)
    : case_(&c), k_(neighbors), power_(power) {
  if (c.hr.empty()) throw std::invalid_argument("truth interpolation needs hr samples");
  if (neighbors == 0) throw std::invalid_argument("truth interpolation needs at least one neighbor");
}

std::array<double, 3> TruthInterpolator::operator()(const QueryPoint& p) const {
  const auto& hr = case_->hr;
  std::vector<std::pair<double, std::size_t>> d(hr.size());
  for (std::size_t i = 0; i < hr.size(); ++i) {
    const double dx = (hr[i].p.rx - p.rx) * synth::kMetersPerUnit;
    const double dy = (hr[i].p.ry - p.ry) * synth::kMetersPerUnit;
    const double dz = (hr[i].p.h - p.h) * synth::kTopMeters;
    d[i] = {dx * dx + dy * dy + dz * dz, i};
  }
  const std::size_t k = std::min(k_, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  if (d[0].first == 0.0) {
    const auto& w = hr[d[0].second].truth;
    return {w.u, w.v, w.w};
  }
  std::array<double, 3> acc = {0, 0, 0};
  double wsum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double w = std::pow(d[j].first, -0.5 * power_);
    const auto& t = hr[d[j].second].truth;
    acc[0] += w * t.u;
    acc[1] += w * t.v;
    acc[2] += w * t.w;
    wsum += w;
  }
  for (double& a : acc) a /= wsum;
  return acc;
}

Tensor TruthInterpolator::operator()(std::span<const QueryPoint> points) const {
  Tensor t({points.size(), 3});
  const long long n = static_cast<long long>(points.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    const auto v = (*this)(points[static_cast<std::size_t>(i)]);
    for (std::size_t c = 0; c < 3; ++c) t.at(static_cast<std::size_t>(i), c) = v[c];
  }
  return t;
}

UavGeometry uav_geometry(const UavOsseConfig& c) {
  if (!(c.speed > 0.0) || !(c.dt > 0.0) || !(c.spacing > 0.0) || c.lead < 0.0)
    throw std::invalid_argument("UAV OSSE needs positive speed, time step and spacing");
  if (c.along < 2 || c.cross < 2) throw std::invalid_argument("corridor needs at least 2 x 2 samples");
  UavGeometry g;
  const double dx = (c.end[0] - c.start[0]) * synth::kMetersPerUnit;
  const double dy = (c.end[1] - c.start[1]) * synth::kMetersPerUnit;
  g.path_length = std::hypot(dx, dy);
  if (!(g.path_length > c.lead)) throw std::invalid_argument("UAV lead exceeds the path length");
  g.steps = static_cast<std::size_t>(std::floor((g.path_length - c.lead) / (c.speed * c.dt))) + 1;
  return g;
}

QueryPoint UavGeometry::at(double s, const UavOsseConfig& c) const {
  const double f = s / path_length;
  return {c.start[0] + f * (c.end[0] - c.start[0]), c.start[1] + f * (c.end[1] - c.start[1]),
          c.height_m / synth::kTopMeters};
}

double UavGeometry::helicopter_s(std::size_t step, const UavOsseConfig& c) const {
  return c.speed * c.dt * static_cast<double>(step);
}

double UavGeometry::uav_s(std::size_t step, const UavOsseConfig& c) const {
  return std::min(helicopter_s(step, c) + c.lead, path_length);
}

std::size_t UavGeometry::observation_count(std::size_t step, const UavOsseConfig& c) const {
  if (step == 0) return 0;
  const double flown = std::min(c.speed * c.dt * static_cast<double>(step), path_length - c.lead);
  return static_cast<std::size_t>(std::floor(flown / c.spacing)) + 1;
}

Corridor corridor_grid(const UavGeometry& g, std::size_t step, const UavOsseConfig& c) {
  const QueryPoint h = g.at(g.helicopter_s(step, c), c);
  const double tx = (c.end[0] - c.start[0]) * synth::kMetersPerUnit / g.path_length;
  const double ty = (c.end[1] - c.start[1]) * synth::kMetersPerUnit / g.path_length;
  Corridor out;
  out.points.reserve(c.along * c.cross);
  for (std::size_t i = 0; i < c.along; ++i) {
    const double a = c.corridor_length * static_cast<double>(i) / static_cast<double>(c.along - 1);
    for (std::size_t j = 0; j < c.cross; ++j) {
      const double b = c.corridor_width * (static_cast<double>(j) / static_cast<double>(c.cross - 1) - 0.5);
      QueryPoint p{h.rx + (a * tx - b * ty) / synth::kMetersPerUnit, h.ry + (a * ty + b * tx) / synth::kMetersPerUnit,
                   h.h};
      const QueryPoint q{std::clamp(p.rx, -1.0, 1.0), std::clamp(p.ry, -1.0, 1.0), p.h};
      if (q.rx != p.rx || q.ry != p.ry) ++out.clipped;
      out.points.push_back(q);
    }
  }
  return out;
}

UavOsseResult run_uav_osse(const synth::Case& c, const CaseRunner& runner, std::span<const Method> requested,
                           const UavOsseConfig& config) {
  for (Method m : requested)
    if (m == Method::idw) throw std::invalid_argument("IDW is not evaluated in the UAV corridor experiment");
  UavOsseResult out;
  out.methods = with_noobs(requested);
  const UavGeometry g = uav_geometry(config);
  const TruthInterpolator truth(c, config.neighbors, config.power);

  // the whole UAV record; each observation is drawn once
  const std::size_t total = g.observation_count(g.steps - 1, config);
  Rng rng(mix_seed(case_seed(c.name, config.seed), 0x554156));
  for (std::size_t j = 0; j < total; ++j) {
    Observation o;
    o.p = g.at(std::min(config.lead + config.spacing * static_cast<double>(j), g.path_length), config);
    const auto t = truth(o.p);
    for (std::size_t k = 0; k < 3; ++k) {
      o.y[k] = t[k] + config.noise[k] * standard_normal(rng);
      o.variance[k] = config.noise[k] * config.noise[k];
    }
    out.observations.push_back(o);
  }

  const std::size_t nm = out.methods.size();
  for (std::size_t step = 0; step < g.steps; ++step) {
    UavStep row;
    row.step = step;
    row.time = config.dt * static_cast<double>(step);
    row.helicopter_s = g.helicopter_s(step, config);
    row.uav_s = g.uav_s(step, config);
    row.helicopter = g.at(row.helicopter_s, config);
    row.uav = g.at(row.uav_s, config);
    row.observations = g.observation_count(step, config);
    const Corridor cor = corridor_grid(g, step, config);
    row.corridor_points = cor.points.size();
    row.clipped = cor.clipped;
    if (cor.clipped)
      out.warnings.push_back("step " + std::to_string(step) + ": " + std::to_string(cor.clipped) +
                             " corridor points clipped to the domain");
    const std::vector<Observation> obs(out.observations.begin(),
                                       out.observations.begin() + static_cast<std::ptrdiff_t>(row.observations));
    const Tensor t = truth(cor.points);
    const bool map_step = step == config.map_step && config.map_resolution > 0;
    std::vector<std::shared_ptr<const baselines::FieldAccessor>> fields(nm);
    for (std::size_t k = 0; k < nm; ++k) {
      try {
        const BaselineResult r = runner(out.methods[k], obs);
        row.rmse.push_back(compute_metrics(r.field->predict(cor.points), t).rmse);
        if (map_step) fields[k] = r.field;
      } catch (const std::exception& e) {
        row.rmse.push_back(std::nullopt);
        out.warnings.push_back("step " + std::to_string(step) + ", " + baselines::method_name(out.methods[k]) +
                               ": " + e.what());
      }
    }
    if (map_step && fields[0]) {
      UavMap map;
      map.resolution = config.map_resolution;
      const double n = static_cast<double>(config.map_resolution);
      for (std::size_t y = 0; y < config.map_resolution; ++y)
        for (std::size_t x = 0; x < config.map_resolution; ++x)
          map.points.push_back({-1.0 + (2.0 * static_cast<double>(x) + 1.0) / n,
                                -1.0 + (2.0 * static_cast<double>(y) + 1.0) / n, config.height_m / synth::kTopMeters});
      const Tensor mt = truth(map.points);
      const Tensor base = fields[0]->predict(map.points);
      map.noobs_error = error_norms(base, mt);
      for (std::size_t k = 1; k < nm; ++k)
        map.improvement.push_back(fields[k] ? improvement_map(fields[k]->predict(map.points), base, mt)
                                            : std::vector<double>(map.points.size(),
                                                                  std::numeric_limits<double>::quiet_NaN()));
      out.map = std::move(map);
    }
    out.steps.push_back(std::move(row));
  }
  return out;
}

io::CsvTable trajectory_table(const UavOsseResult& r) {
  io::CsvTable t;
  t.header = {"step",   "time_s", "helicopter_s_m", "uav_s_m", "lead_m",  "observations", "helicopter_rx",
              "helicopter_ry", "uav_rx", "uav_ry", "corridor_points", "clipped"};
  for (Method m : r.methods) t.header.push_back(std::string("rmse_") + baselines::method_name(m));
  for (const UavStep& s : r.steps) {
    std::vector<std::string> row = {std::to_string(s.step),
                                    cell(s.time),
                                    cell(s.helicopter_s),
                                    cell(s.uav_s),
                                    cell(s.uav_s - s.helicopter_s),
                                    std::to_string(s.observations),
                                    cell(s.helicopter.rx),
                                    cell(s.helicopter.ry),
                                    cell(s.uav.rx),
                                    cell(s.uav.ry),
                                    std::to_string(s.corridor_points),
                                    std::to_string(s.clipped)};
    for (const auto& v : s.rmse) row.push_back(cell(v));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_uav_outputs(const fs::path& dir, const UavOsseResult& r) {
  fs::create_directories(dir);
  io::write_csv(dir / "trajectory.csv", trajectory_table(r));
  io::CsvTable obs;
  obs.header = {"index", "rx", "ry", "h", "u", "v", "w"};
  for (std::size_t j = 0; j < r.observations.size(); ++j) {
    const Observation& o = r.observations[j];
    obs.rows.push_back({std::to_string(j), cell(o.p.rx), cell(o.p.ry), cell(o.p.h), cell(o.y[0]), cell(o.y[1]),
                        cell(o.y[2])});
  }
  io::write_csv(dir / "observations.csv", obs);
  if (!r.map) return;
  const UavMap& m = *r.map;
  const std::size_t n = m.resolution;
  io::write_grid(dir / "map_noobs_error.windgrid", Tensor({n, n}, m.noobs_error));
  io::CsvTable csv;
  csv.header = {"rx", "ry", "noobs_error"};
  for (std::size_t k = 1; k < r.methods.size(); ++k) {
    const std::string name = baselines::method_name(r.methods[k]);
    csv.header.push_back("improvement_" + name);
    io::write_grid(dir / ("map_improvement_" + name + ".windgrid"), Tensor({n, n}, m.improvement[k - 1]));
  }
  for (std::size_t i = 0; i < m.points.size(); ++i) {
    std::vector<std::string> row = {cell(m.points[i].rx), cell(m.points[i].ry), cell(m.noobs_error[i])};
    for (const auto& imp : m.improvement) row.push_back(cell(imp[i]));
    csv.rows.push_back(std::move(row));
  }
  io::write_csv(dir / "map.csv", csv);
}

}  // namespace windinr::osse
