#pragma once

// Observing-system simulation experiments: random point observations with a
// disjoint holdout set, and a UAV-aided helicopter approach along a corridor.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "windinr/baselines.hpp"
#include "windinr/io.hpp"
#include "windinr/synth.hpp"

namespace windinr::osse {

using baselines::Method;
using correction::Observation;

// -- metrics ----------------------------------------------------------------------

/// Height bins in meters AGL: `bins` equal bins over [0, top].
std::vector<double> height_edges(std::size_t bins = 8, double top = synth::kTopMeters);

struct Metrics {
  double rmse = 0.0;  // pooled over points and components
  double mae = 0.0;
  std::array<double, 3> component_rmse = {0.0, 0.0, 0.0};
  /// Per height bin; empty bins are absent.
  std::vector<std::optional<double>> height_rmse;
  std::vector<double> height_sse;  // squared-error sums, for pooling across cases
  std::vector<std::size_t> height_count;
};

/// pred and truth are [n, 3] in m/s with n > 0; heights_m (AGL) are binned by edges when given.
Metrics compute_metrics(const Tensor& pred, const Tensor& truth, std::span<const double> heights_m = {},
                        std::span<const double> edges = {});

/// Point-wise vector-error norms |pred - truth|, length n.
std::vector<double> error_norms(const Tensor& pred, const Tensor& truth);

/// Delta e = e_noobs - e_method; positive where the method improves.
std::vector<double> improvement_map(const Tensor& method, const Tensor& noobs, const Tensor& truth);

// -- random-observation OSSE ---------------------------------------------------------

struct RandomOsseConfig {
  std::size_t n_obs = 128;
  std::size_t n_holdout = 256;
  std::array<double, 3> noise = correction::kNoiseStd;
  std::uint64_t seed = 1;
  bool sweep = false;
  std::vector<std::size_t> sweep_counts = {8, 16, 32, 64, 128, 256};
  bool heights = false;
  std::vector<double> height_edges = osse::height_edges();
  /// Evaluate cases one at a time (uncontended timing).
  bool serial = false;
};

/// 64-bit FNV-1a of the case name XOR the global seed.
std::uint64_t case_seed(const std::string& case_name, std::uint64_t seed);

struct ObservationDraw {
  std::vector<Observation> observations;
  std::vector<std::size_t> obs_indices;
  std::vector<std::size_t> holdout;
};

/// Observations at n_obs hr points (truth + Gaussian noise) and n_holdout further points,
/// sampled without replacement. Throws std::invalid_argument when the case is too small.
ObservationDraw sample_observations(const synth::Case& c, std::size_t n_obs, std::size_t n_holdout,
                                    const std::array<double, 3>& noise, std::uint64_t seed);
ObservationDraw sample_observations(const synth::Case& c, const RandomOsseConfig& config);

/// Runs one method on one case; the factory prepares shared per-case state once.
using CaseRunner = std::function<baselines::BaselineResult(Method, const std::vector<Observation>&)>;
using RunnerFactory = std::function<CaseRunner(const synth::Case&)>;

RunnerFactory model_runners(const synth::TerrainGrid& terrain, const model::WindModel& model,
                            const prior::PriorStats& adaptive, const prior::PriorStats* isotropic,
                            const baselines::BaselineConfig& config = {});

struct CaseRow {
  std::string case_name;
  Method method = Method::noobs;
  bool ok = false;
  std::string note;
  Metrics field;    // all hr points
  Metrics holdout;  // holdout points only
  std::optional<double> seconds;  // absent for no-obs
  std::size_t steps = 0;
};

struct Aggregate {
  Method method = Method::noobs;
  std::size_t cases = 0;  // successful
  std::size_t failures = 0;
  double field_rmse = 0.0, field_mae = 0.0;
  double holdout_rmse = 0.0, holdout_mae = 0.0;
  std::array<double, 3> component_rmse = {0.0, 0.0, 0.0};
  std::optional<double> seconds_mean, seconds_total;
  /// Cases with holdout RMSE strictly below no-obs; 0 for no-obs itself.
  double improved_fraction = 0.0;
};

struct SweepRow {
  std::size_t n_obs = 0;
  Method method = Method::noobs;
  std::size_t cases = 0;
  double holdout_rmse = 0.0, holdout_mae = 0.0;
  double improved_fraction = 0.0;
};

struct HeightRow {
  double lo = 0.0, hi = 0.0;
  Method method = Method::noobs;
  std::size_t count = 0;
  std::optional<double> rmse;  // pooled over cases
};

struct RandomOsseResult {
  std::vector<CaseRow> rows;  // case-major, methods in request order
  std::vector<Aggregate> aggregate;
  std::vector<SweepRow> sweep;
  std::vector<HeightRow> heights;
};

/// Aggregates rows over cases; no-obs must be among the methods for improved fractions.
std::vector<Aggregate> aggregate_rows(const std::vector<CaseRow>& rows, std::span<const Method> methods);

RandomOsseResult run_random_osse(const std::vector<synth::Case>& cases, const RunnerFactory& runners,
                                 std::span<const Method> methods, const RandomOsseConfig& config);
RandomOsseResult run_random_osse(const synth::Dataset& data, const model::WindModel& model,
                                 const prior::PriorStats& adaptive, const prior::PriorStats* isotropic,
                                 std::span<const Method> methods, const RandomOsseConfig& config,
                                 const baselines::BaselineConfig& baseline = {});

io::CsvTable per_case_table(const RandomOsseResult& r);
io::CsvTable aggregate_table(const std::vector<Aggregate>& a);
io::CsvTable sweep_table(const RandomOsseResult& r);
io::CsvTable height_table(const RandomOsseResult& r);
/// per_case.csv, aggregate.csv and, when present, sweep.csv and heights.csv.
void write_random_outputs(const std::filesystem::path& dir, const RandomOsseResult& r);

// -- UAV-aided approach OSSE ---------------------------------------------------------

struct UavOsseConfig {
  std::array<double, 2> start = {-0.75, -0.35};  // normalized horizontal coordinates
  std::array<double, 2> end = {0.75, 0.35};
  double height_m = 80.0;  // AGL
  double speed = 20.0;     // m/s
  double lead = 500.0;     // m
  double spacing = 100.0;  // m between UAV observations
  double dt = 5.0;         // s between helicopter evaluation times
  double corridor_length = 800.0;
  double corridor_width = 300.0;
  std::size_t along = 16;
  std::size_t cross = 7;
  std::size_t neighbors = 16;
  double power = 2.0;
  std::array<double, 3> noise = correction::kNoiseStd;
  std::uint64_t seed = 1;
  std::size_t map_step = 27;
  std::size_t map_resolution = 48;
};

/// Truth at arbitrary points by IDW over the k nearest hr samples (metric distance).
class TruthInterpolator {
 public:
  TruthInterpolator(const synth::Case& c, std::size_t neighbors = 16, double power = 2.0);
  std::array<double, 3> operator()(const QueryPoint& p) const;
  Tensor operator()(std::span<const QueryPoint> points) const;

 private:
  const synth::Case* case_;
  std::size_t k_;
  double power_;
};

struct UavGeometry {
  double path_length = 0.0;  // m
  std::size_t steps = 0;     // evaluation times 0 .. steps-1
  /// Normalized position at arc length s (m) along the path.
  QueryPoint at(double s, const UavOsseConfig& c) const;
  double helicopter_s(std::size_t step, const UavOsseConfig& c) const;
  double uav_s(std::size_t step, const UavOsseConfig& c) const;
  /// UAV observations collected up to and including this step.
  std::size_t observation_count(std::size_t step, const UavOsseConfig& c) const;
};

UavGeometry uav_geometry(const UavOsseConfig& config);

struct Corridor {
  std::vector<QueryPoint> points;  // along-major, along * cross
  std::size_t clipped = 0;         // points moved back into the domain
};

Corridor corridor_grid(const UavGeometry& g, std::size_t step, const UavOsseConfig& config);

struct UavStep {
  std::size_t step = 0;
  double time = 0.0;
  double helicopter_s = 0.0, uav_s = 0.0;
  QueryPoint helicopter, uav;
  std::size_t observations = 0;
  std::size_t corridor_points = 0;
  std::size_t clipped = 0;
  std::vector<std::optional<double>> rmse;  // per method; absent on failure
};

struct UavMap {
  std::size_t resolution = 0;
  std::vector<QueryPoint> points;  // row-major [y][x]
  std::vector<double> noobs_error;
  std::vector<std::vector<double>> improvement;  // per correction method
};

struct UavOsseResult {
  std::vector<Method> methods;
  std::vector<UavStep> steps;
  std::vector<Observation> observations;  // whole UAV record along the path
  std::optional<UavMap> map;
  std::vector<std::string> warnings;
};

/// Methods must not include IDW. Steps run sequentially.
UavOsseResult run_uav_osse(const synth::Case& c, const CaseRunner& runner, std::span<const Method> methods,
                           const UavOsseConfig& config);

io::CsvTable trajectory_table(const UavOsseResult& r);
/// trajectory.csv, observations.csv, and map_*.windgrid / map.csv at the selected step.
void write_uav_outputs(const std::filesystem::path& dir, const UavOsseResult& r);

}  // namespace windinr::osse
