#pragma once

// Procedural terrain and analytic surrogate wind fields.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "windinr/tensor.hpp"

namespace windinr::synth {

constexpr double kDomainMeters = 6400.0;  // horizontal extent of [-1, 1]
constexpr double kMetersPerUnit = kDomainMeters / 2.0;
constexpr double kTopMeters = 2000.0;  // z_top; h = z_agl / z_top
constexpr double kLrHeight = 20.0 / kTopMeters;
constexpr std::size_t kLrCells = 6;  // ~1 km cells over 6.4 km

constexpr int kDirections = 48;
constexpr std::array<double, 5> kSpeeds = {8, 12, 16, 20, 24};
constexpr std::array<double, 5> kShears = {0.01, 0.03, 0.10, 0.30, 0.50};
constexpr std::size_t kCombinations = kDirections * kSpeeds.size() * kShears.size();

struct Point3 {
  double rx = 0.0;
  double ry = 0.0;
  double h = 0.0;
};

struct Wind {
  double u = 0.0;
  double v = 0.0;
  double w = 0.0;
};

/// Heightfield on an N x N node grid spanning [-1, 1]^2 (node i at -1 + 2i/(N-1)).
struct TerrainGrid {
  std::size_t resolution = 0;
  std::vector<double> elevation;  // meters, row-major [y][x]
  std::vector<double> grad_x;     // normalized slopes
  std::vector<double> grad_y;
  double gradient_scale = 1.0;    // physical slope = normalized * gradient_scale

  double cell_meters() const { return kDomainMeters / static_cast<double>(resolution - 1); }
  /// Bilinear elevation (m) and physical slopes at a horizontal position, clamped to the domain.
  std::array<double, 3> sample(double rx, double ry) const;
  /// Channels-last model input [N*N, 3]: elevation / 1000 m, grad_x, grad_y.
  Tensor channels() const;
};

struct TerrainOptions {
  double amplitude = 900.0;   // meters between lowest and highest node
  double max_slope = 0.35;    // physical slope cap after scaling
};

TerrainGrid generate_terrain(std::uint64_t seed, std::size_t resolution, const TerrainOptions& options = {});
/// Recomputes slopes from elevation; generate_terrain uses this.
void compute_gradients(TerrainGrid& terrain);

struct WindCaseParams {
  int direction_index = 0;
  double speed = 8.0;
  double shear = 0.01;
  std::uint64_t seed = 0;

  double direction_radians() const;
  void validate() const;
};

/// Combination k of the 48 x 5 x 5 parameter grid.
WindCaseParams enumerate_params(std::size_t k, std::uint64_t seed);

/// Analytic truth evaluated on demand.
class WindField {
 public:
  WindField(const TerrainGrid& terrain, WindCaseParams params);
  Wind operator()(const Point3& p) const;
  const WindCaseParams& params() const { return params_; }

 private:
  const TerrainGrid* terrain_;
  WindCaseParams params_;
};

struct HrSample {
  Point3 p;
  Wind truth;
};

struct Case {
  std::string name;
  WindCaseParams params;
  /// Channels-last [kLrCells^2, 3]: u, v, valid mask.
  Tensor lr;
  std::vector<HrSample> hr;
};

struct CaseOptions {
  std::size_t lattice = 16;        // hr points = lattice^3
  std::size_t lr_subsamples = 8;   // per cell and axis
};

Case generate_wind_case(const TerrainGrid& terrain, const WindCaseParams& params, const CaseOptions& options = {});
using FieldFn = std::function<Wind(const Point3&)>;

/// Block average of the truth at 20 m AGL on the 1 km grid (midpoint sub-samples).
Tensor downsample_background(const FieldFn& field, std::size_t subsamples = 8);

struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// 70/15/15 partition with largest-remainder rounding.
Splits make_splits(std::size_t n_cases, std::uint64_t split_seed);

// -- on-disk dataset ----------------------------------------------------------

struct Dataset {
  std::filesystem::path root;
  TerrainGrid terrain;
  std::vector<Case> cases;
  Splits splits;
};

struct GenerateOptions {
  std::size_t cases = 20;
  std::size_t resolution = 32;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 7;
  CaseOptions case_options;
  TerrainOptions terrain_options;
};

std::string case_name(std::size_t index);
/// Terrain, cases (named case_0000, ...) and splits, in memory.
Dataset generate_dataset(const GenerateOptions& options);
/// Writes DIR/terrain.windgrid, DIR/cases/<name>/{lr.windgrid,hr.csv,params.json}, DIR/dataset.json.
void write_dataset(const std::filesystem::path& dir, const GenerateOptions& options);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace windinr::synth
