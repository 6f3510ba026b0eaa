#include "windinr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "windinr/io.hpp"
#include "windinr/rng.hpp"

namespace windinr::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// analytic surrogate constants
constexpr double kRoughness = 0.5;      // m
constexpr double kDisplacement = 10.0;  // m, keeps the profile finite at the ground
constexpr double kProfileRef = 1000.0;  // m, profile equals 1 here
constexpr double kSpeedUp = 0.5;        // kappa
constexpr double kChanneling = 0.3;
constexpr double kSlopeScale = 0.2;
constexpr double kDecayMeters = 300.0;

double clamp_unit(double r) { return std::clamp(r, -1.0, 1.0); }

}  // namespace

std::array<double, 3> TerrainGrid::sample(double rx, double ry) const {
  const double n1 = static_cast<double>(resolution - 1);
  const double x = (clamp_unit(rx) + 1.0) * 0.5 * n1;
  const double y = (clamp_unit(ry) + 1.0) * 0.5 * n1;
  const std::size_t x0 = std::min(static_cast<std::size_t>(x), resolution - 2);
  const std::size_t y0 = std::min(static_cast<std::size_t>(y), resolution - 2);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  auto lerp = [&](const std::vector<double>& f) {
    const std::size_t i = y0 * resolution + x0;
    return (1 - fy) * ((1 - fx) * f[i] + fx * f[i + 1]) +
           fy * ((1 - fx) * f[i + resolution] + fx * f[i + resolution + 1]);
  };
  return {lerp(elevation), lerp(grad_x) * gradient_scale, lerp(grad_y) * gradient_scale};
}

Tensor TerrainGrid::channels() const {
  const std::size_t n = resolution * resolution;
  Tensor t({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    t.at(i, 0) = elevation[i] / 1000.0;
    t.at(i, 1) = grad_x[i];
    t.at(i, 2) = grad_y[i];
  }
  return t;
}

void compute_gradients(TerrainGrid& t) {
  const std::size_t n = t.resolution;
  const double dx = t.cell_meters();
  t.grad_x.assign(n * n, 0.0);
  t.grad_y.assign(n * n, 0.0);
  auto e = [&](std::size_t y, std::size_t x) { return t.elevation[y * n + x]; };
  double scale = 0.0;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const std::size_t xl = x == 0 ? 0 : x - 1, xr = x + 1 == n ? x : x + 1;
      const std::size_t yl = y == 0 ? 0 : y - 1, yr = y + 1 == n ? y : y + 1;
      const double gx = (e(y, xr) - e(y, xl)) / (static_cast<double>(xr - xl) * dx);
      const double gy = (e(yr, x) - e(yl, x)) / (static_cast<double>(yr - yl) * dx);
      t.grad_x[y * n + x] = gx;
      t.grad_y[y * n + x] = gy;
      scale = std::max({scale, std::abs(gx), std::abs(gy)});
    }
  }
  t.gradient_scale = scale > 0.0 ? scale : 1.0;
  for (std::size_t i = 0; i < n * n; ++i) {
    t.grad_x[i] /= t.gradient_scale;
    t.grad_y[i] /= t.gradient_scale;
  }
}

TerrainGrid generate_terrain(std::uint64_t seed, std::size_t resolution, const TerrainOptions& options) {
  if (resolution < 16) throw std::invalid_argument("terrain resolution must be >= 16, got " + std::to_string(resolution));
  TerrainGrid t;
  t.resolution = resolution;
  t.elevation.assign(resolution * resolution, 0.0);
  if (options.amplitude > 0.0) {
    Rng rng(mix_seed(seed, 0x7e77a1));
    struct Bump {
      double cx, cy, s, a;
    };
    struct Ridge {
      double fx, fy, phase, a;
    };
    std::vector<Bump> bumps(14);
    for (Bump& b : bumps) b = {uniform(rng, -1.2, 1.2), uniform(rng, -1.2, 1.2), uniform(rng, 0.12, 0.5), uniform(rng, 0.3, 1.0)};
    std::vector<Ridge> ridges(3);
    for (std::size_t k = 0; k < ridges.size(); ++k) {
      const double angle = uniform(rng, 0.0, std::numbers::pi);
      const double freq = std::numbers::pi * (1.0 + static_cast<double>(k)) * uniform(rng, 0.8, 1.4);
      ridges[k] = {freq * std::cos(angle), freq * std::sin(angle), uniform(rng, 0.0, 2 * std::numbers::pi),
                   0.35 / (1.0 + static_cast<double>(k))};
    }
    // a valley cutting across the domain
    const double va = uniform(rng, 0.0, std::numbers::pi);
    const double voff = uniform(rng, -0.3, 0.3);
    for (std::size_t y = 0; y < resolution; ++y) {
      const double ry = -1.0 + 2.0 * static_cast<double>(y) / static_cast<double>(resolution - 1);
      for (std::size_t x = 0; x < resolution; ++x) {
        const double rx = -1.0 + 2.0 * static_cast<double>(x) / static_cast<double>(resolution - 1);
        double e = 0.0;
        for (const Bump& b : bumps) {
          const double d2 = (rx - b.cx) * (rx - b.cx) + (ry - b.cy) * (ry - b.cy);
          e += b.a * std::exp(-d2 / (2 * b.s * b.s));
        }
        for (const Ridge& r : ridges) e += r.a * std::sin(r.fx * rx + r.fy * ry + r.phase);
        const double across = -std::sin(va) * rx + std::cos(va) * ry - voff;
        e -= 0.8 * std::exp(-across * across / (2 * 0.12 * 0.12));
        t.elevation[y * resolution + x] = e;
      }
    }
    const auto [lo, hi] = std::minmax_element(t.elevation.begin(), t.elevation.end());
    const double emin = *lo, span = *hi - *lo;
    for (double& e : t.elevation) e = (e - emin) / span * options.amplitude;
    compute_gradients(t);
    if (t.gradient_scale > options.max_slope) {
      const double f = options.max_slope / t.gradient_scale;
      for (double& e : t.elevation) e *= f;
    }
  }
  compute_gradients(t);
  return t;
}

double WindCaseParams::direction_radians() const {
  return 2.0 * std::numbers::pi * static_cast<double>(direction_index) / kDirections;
}

void WindCaseParams::validate() const {
  if (direction_index < 0 || direction_index >= kDirections)
    throw std::invalid_argument("direction index out of range: " + std::to_string(direction_index));
  if (std::find(kSpeeds.begin(), kSpeeds.end(), speed) == kSpeeds.end())
    throw std::invalid_argument("speed not in the enumerated set: " + std::to_string(speed));
  if (std::find(kShears.begin(), kShears.end(), shear) == kShears.end())
    throw std::invalid_argument("shear not in the enumerated set: " + std::to_string(shear));
}

WindCaseParams enumerate_params(std::size_t k, std::uint64_t seed) {
  if (k >= kCombinations) throw std::out_of_range("parameter combination index " + std::to_string(k));
  WindCaseParams p;
  p.direction_index = static_cast<int>(k / (kSpeeds.size() * kShears.size()));
  p.speed = kSpeeds[(k / kShears.size()) % kSpeeds.size()];
  p.shear = kShears[k % kShears.size()];
  p.seed = mix_seed(seed, k);
  return p;
}

WindField::WindField(const TerrainGrid& terrain, WindCaseParams params) : terrain_(&terrain), params_(params) {
  params_.validate();
}

Wind WindField::operator()(const Point3& p) const {
  const double z = std::max(p.h, 0.0) * kTopMeters;
  const double profile =
      std::pow(std::log((z + kDisplacement) / kRoughness) / std::log(kProfileRef / kRoughness), params_.shear);
  const double decay = std::exp(-z / kDecayMeters);
  const double theta = params_.direction_radians();
  const double dx = std::cos(theta), dy = std::sin(theta);
  const double nx = -dy, ny = dx;
  const auto [elev, gx, gy] = terrain_->sample(p.rx, p.ry);
  (void)elev;
  const double upslope = gx * dx + gy * dy;
  const double cross = gx * nx + gy * ny;
  const double speedup = 1.0 + kSpeedUp * std::tanh(upslope / kSlopeScale) * decay;
  const double channel = -kChanneling * std::tanh(cross / kSlopeScale) * decay;
  const double base = params_.speed * profile;
  Wind out;
  out.u = base * (speedup * dx + channel * nx);
  out.v = base * (speedup * dy + channel * ny);
  out.w = (out.u * gx + out.v * gy) * decay;
  return out;
}

Tensor downsample_background(const FieldFn& field, std::size_t subsamples) {
  const std::size_t n = kLrCells;
  Tensor lr({n * n, 3});
  const double cell = 2.0 / static_cast<double>(n);
  const double inv = 1.0 / static_cast<double>(subsamples * subsamples);
  for (std::size_t cy = 0; cy < n; ++cy) {
    for (std::size_t cx = 0; cx < n; ++cx) {
      double su = 0.0, sv = 0.0;
      for (std::size_t j = 0; j < subsamples; ++j) {
        const double ry = -1.0 + cell * (static_cast<double>(cy) + (static_cast<double>(j) + 0.5) / static_cast<double>(subsamples));
        for (std::size_t i = 0; i < subsamples; ++i) {
          const double rx = -1.0 + cell * (static_cast<double>(cx) + (static_cast<double>(i) + 0.5) / static_cast<double>(subsamples));
          const Wind wv = field({rx, ry, kLrHeight});
          su += wv.u;
          sv += wv.v;
        }
      }
      const std::size_t r = cy * n + cx;
      lr.at(r, 0) = su * inv;
      lr.at(r, 1) = sv * inv;
      lr.at(r, 2) = 1.0;
    }
  }
  return lr;
}

Case generate_wind_case(const TerrainGrid& terrain, const WindCaseParams& params, const CaseOptions& options) {
  const WindField field(terrain, params);
  Case c;
  c.params = params;
  c.lr = downsample_background(field, options.lr_subsamples);
  const std::size_t m = options.lattice;
  Rng rng(mix_seed(params.seed, 0x4852));
  c.hr.reserve(m * m * m);
  const double step = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < m; ++i) {
        Point3 p;
        p.rx = -1.0 + 2.0 * step * (static_cast<double>(i) + uniform(rng, 0.0, 1.0));
        p.ry = -1.0 + 2.0 * step * (static_cast<double>(j) + uniform(rng, 0.0, 1.0));
        p.h = step * (static_cast<double>(k) + uniform(rng, 0.0, 1.0));
        c.hr.push_back({p, field(p)});
      }
    }
  }
  return c;
}

Splits make_splits(std::size_t n_cases, std::uint64_t split_seed) {
  const double fractions[3] = {0.70, 0.15, 0.15};
  std::size_t sizes[3];
  double rem[3];
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double quota = fractions[s] * static_cast<double>(n_cases);
    sizes[s] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    rem[s] = quota - static_cast<double>(sizes[s]);
    assigned += sizes[s];
  }
  while (assigned < n_cases) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (rem[s] > rem[best] + 1e-12) best = s;
    ++sizes[best];
    rem[best] = -1.0;
    ++assigned;
  }
  Rng rng(mix_seed(split_seed, 0x5711));
  const auto perm = sample_without_replacement(n_cases, n_cases, rng);
  Splits out;
  std::size_t pos = 0;
  std::vector<std::size_t>* parts[3] = {&out.train, &out.val, &out.test};
  for (int s = 0; s < 3; ++s) {
    parts[s]->assign(perm.begin() + static_cast<std::ptrdiff_t>(pos), perm.begin() + static_cast<std::ptrdiff_t>(pos + sizes[s]));
    std::sort(parts[s]->begin(), parts[s]->end());
    pos += sizes[s];
  }
  return out;
}

// -- on-disk dataset ----------------------------------------------------------

std::string case_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%04zu", index);
  return buf;
}

namespace {

Tensor to_channels_first(const Tensor& cl, std::size_t h, std::size_t w) {
  const std::size_t ch = cl.cols();
  Tensor out({ch, h, w});
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t c = 0; c < ch; ++c) out[c * h * w + p] = cl.at(p, c);
  return out;
}

Tensor to_channels_last(const Tensor& cf) {
  if (cf.rank() != 3) throw io::FormatError("expected a rank-3 grid, got " + shape_string(cf.shape()));
  const std::size_t ch = cf.dim(0), hw = cf.dim(1) * cf.dim(2);
  Tensor out({hw, ch});
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < ch; ++c) out.at(p, c) = cf[c * hw + p];
  return out;
}

json params_json(const WindCaseParams& p) {
  return {{"direction_index", p.direction_index},
          {"direction_deg", 360.0 * p.direction_index / kDirections},
          {"speed", p.speed},
          {"shear", p.shear},
          {"seed", p.seed}};
}

std::string hr_csv(const std::vector<HrSample>& hr) {
  io::CsvTable t;
  t.header = {"rx", "ry", "h", "u", "v", "w"};
  t.rows.reserve(hr.size());
  for (const HrSample& s : hr) {
    t.rows.push_back({io::format_double(s.p.rx), io::format_double(s.p.ry), io::format_double(s.p.h),
                      io::format_double(s.truth.u), io::format_double(s.truth.v), io::format_double(s.truth.w)});
  }
  return t.to_string();
}

}  // namespace

Dataset generate_dataset(const GenerateOptions& options) {
  if (options.cases < 1 || options.cases > kCombinations)
    throw std::invalid_argument("case count must be in [1, 1200], got " + std::to_string(options.cases));
  Dataset ds;
  ds.terrain = generate_terrain(options.seed, options.resolution, options.terrain_options);

  std::vector<std::size_t> combos(options.cases);
  if (options.cases == kCombinations) {
    for (std::size_t k = 0; k < combos.size(); ++k) combos[k] = k;
  } else {
    Rng rng(mix_seed(options.seed, 0xca5e));
    combos = sample_without_replacement(kCombinations, options.cases, rng);
  }

  ds.cases.resize(options.cases);
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < options.cases; ++i) {
    try {
      ds.cases[i] = generate_wind_case(ds.terrain, enumerate_params(combos[i], options.seed), options.case_options);
      ds.cases[i].name = case_name(i);
    } catch (const std::exception& e) {
#pragma omp critical
      failure = e.what();
    }
  }
  if (!failure.empty()) throw std::runtime_error("case generation failed: " + failure);
  ds.splits = make_splits(options.cases, options.split_seed);
  return ds;
}

void write_dataset(const fs::path& dir, const GenerateOptions& options) {
  const Dataset ds = generate_dataset(options);
  const TerrainGrid& terrain = ds.terrain;
  const std::size_t n = terrain.resolution;
  Tensor tgrid({3, n, n});
  for (std::size_t i = 0; i < n * n; ++i) {
    tgrid[i] = terrain.elevation[i];
    tgrid[n * n + i] = terrain.grad_x[i];
    tgrid[2 * n * n + i] = terrain.grad_y[i];
  }
  io::write_grid(dir / "terrain.windgrid", tgrid);

  std::vector<std::string> names;
  for (const Case& c : ds.cases) {
    const fs::path cdir = dir / "cases" / c.name;
    io::write_grid(cdir / "lr.windgrid", to_channels_first(c.lr, kLrCells, kLrCells));
    io::write_file_atomic(cdir / "hr.csv", hr_csv(c.hr));
    io::write_file_atomic(cdir / "params.json", params_json(c.params).dump(2) + "\n");
    names.push_back(c.name);
  }

  const Splits& splits = ds.splits;
  json meta = {{"format", "windinr-dataset"},
               {"version", 1},
               {"cases", names},
               {"resolution", options.resolution},
               {"seed", options.seed},
               {"split_seed", options.split_seed},
               {"lattice", options.case_options.lattice},
               {"gradient_scale", terrain.gradient_scale},
               {"splits", {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}}}};
  io::write_file_atomic(dir / "dataset.json", meta.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  io::require_exists(dir / "dataset.json");
  Dataset ds;
  ds.root = dir;
  json meta;
  try {
    meta = json::parse(io::read_file(dir / "dataset.json"));
  } catch (const json::exception& e) {
    throw io::FormatError("dataset.json: " + std::string(e.what()));
  }
  const Tensor tgrid = io::read_grid(dir / "terrain.windgrid");
  if (tgrid.rank() != 3 || tgrid.dim(0) != 3 || tgrid.dim(1) != tgrid.dim(2))
    throw io::FormatError("terrain.windgrid has shape " + shape_string(tgrid.shape()));
  const std::size_t n = tgrid.dim(1);
  ds.terrain.resolution = n;
  ds.terrain.elevation.assign(tgrid.raw(), tgrid.raw() + n * n);
  ds.terrain.grad_x.assign(tgrid.raw() + n * n, tgrid.raw() + 2 * n * n);
  ds.terrain.grad_y.assign(tgrid.raw() + 2 * n * n, tgrid.raw() + 3 * n * n);
  ds.terrain.gradient_scale = meta.at("gradient_scale").get<double>();

  const auto names = meta.at("cases").get<std::vector<std::string>>();
  ds.cases.resize(names.size());
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < names.size(); ++i) {
    try {
      const fs::path cdir = dir / "cases" / names[i];
      Case& c = ds.cases[i];
      c.name = names[i];
      const json pj = json::parse(io::read_file(cdir / "params.json"));
      c.params.direction_index = pj.at("direction_index").get<int>();
      c.params.speed = pj.at("speed").get<double>();
      c.params.shear = pj.at("shear").get<double>();
      c.params.seed = pj.at("seed").get<std::uint64_t>();
      const Tensor lr = io::read_grid(cdir / "lr.windgrid");
      if (lr.shape() != Shape{3, kLrCells, kLrCells})
        throw io::FormatError(names[i] + "/lr.windgrid has shape " + shape_string(lr.shape()));
      c.lr = to_channels_last(lr);
      const io::CsvTable t = io::read_csv(cdir / "hr.csv");
      std::size_t col[6];
      const char* hdr[6] = {"rx", "ry", "h", "u", "v", "w"};
      for (int k = 0; k < 6; ++k) col[k] = t.column(hdr[k]);
      c.hr.reserve(t.rows.size());
      for (const auto& row : t.rows) {
        HrSample s;
        s.p = {io::parse_double(row[col[0]]), io::parse_double(row[col[1]]), io::parse_double(row[col[2]])};
        s.truth = {io::parse_double(row[col[3]]), io::parse_double(row[col[4]]), io::parse_double(row[col[5]])};
        c.hr.push_back(s);
      }
    } catch (const io::MissingArtifact&) {
#pragma omp critical
      failure = "missing:" + (dir / "cases" / names[i]).string();
    } catch (const std::exception& e) {
#pragma omp critical
      failure = e.what();
    }
  }
  if (failure.rfind("missing:", 0) == 0) throw io::MissingArtifact(failure.substr(8));
  if (!failure.empty()) throw io::FormatError(failure);

  const json& sp = meta.at("splits");
  ds.splits.train = sp.at("train").get<std::vector<std::size_t>>();
  ds.splits.val = sp.at("val").get<std::vector<std::size_t>>();
  ds.splits.test = sp.at("test").get<std::vector<std::size_t>>();
  return ds;
}

}  // namespace windinr::synth
