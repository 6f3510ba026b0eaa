#include "windinr/prior.hpp"

#include <algorithm>

#include "json.hpp"
#include "windinr/io.hpp"

namespace windinr::prior {

using json = nlohmann::json;

const char* kind_name(PriorKind k) {
  switch (k) {
    case PriorKind::adaptive: return "adaptive";
    case PriorKind::isotropic: return "isotropic";
    case PriorKind::custom: return "custom";
  }
  return "?";
}

Discrepancies collect_discrepancies(const synth::Dataset& data, const model::WindModel& m,
                                    const training::StageConfig& config) {
  const auto& train = data.splits.train;
  if (train.size() < 2) throw std::invalid_argument("prior estimation needs at least 2 training cases");
  Discrepancies out(train.size());
  std::vector<std::string> errors(train.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < train.size(); ++k) {
    try {
      const synth::Case& c = data.cases[train[k]];
      const model::CaseInputs in = model::make_inputs(data.terrain, c);
      ad::Graph g;
      model::ParamBinding w(g, m.params(), model::no_blocks);
      const model::Context ctx = model::encode_context(w, m.config(), in);
      const Tensor& zr = training::reference_latent(w, m, ctx, c, training::fixed_draw(c, train[k], config)).value();
      const Tensor& zb = model::predict_no_obs(w, ctx).value();
      out[k].resize(zb.size());
      for (std::size_t i = 0; i < zb.size(); ++i) out[k][i] = zb[i] - zr[i];
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw NumericalError("discrepancy collection failed: " + e);
  return out;
}

namespace {

void moments(const Discrepancies& e, PriorStats& p) {
  if (e.size() < 2) throw std::invalid_argument("covariance needs at least 2 discrepancies, got " + std::to_string(e.size()));
  const std::size_t d = e.front().size();
  if (d == 0) throw std::invalid_argument("empty discrepancy vectors");
  for (const auto& v : e)
    if (v.size() != d) throw std::invalid_argument("discrepancy vectors differ in length");
  const double n = static_cast<double>(e.size());
  p.n = e.size();
  p.b_z.assign(d, 0.0);
  for (const auto& v : e)
    for (std::size_t i = 0; i < d; ++i) p.b_z[i] += v[i] / n;
  p.sigma_z = Tensor({d, d});
  for (const auto& v : e)
    for (std::size_t i = 0; i < d; ++i) {
      const double di = v[i] - p.b_z[i];
      for (std::size_t j = 0; j <= i; ++j) p.sigma_z.at(i, j) += di * (v[j] - p.b_z[j]);
    }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      p.sigma_z.at(i, j) /= (n - 1.0);
      p.sigma_z.at(j, i) = p.sigma_z.at(i, j);
    }
}

void factor(PriorStats& p) {
  try {
    p.chol = linalg::Cholesky(p.B_z);
  } catch (const linalg::NotPositiveDefinite& e) {
    throw std::logic_error(std::string("prior covariance is not positive definite: ") + e.what());
  }
}

}  // namespace

PriorStats estimate_prior(const Discrepancies& e, double rho, double eps) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("shrinkage must lie in [0, 1]");
  if (!(eps > 0.0)) throw std::invalid_argument("covariance floor must be positive");
  PriorStats p;
  p.kind = PriorKind::adaptive;
  p.rho = rho;
  p.eps = eps;
  moments(e, p);
  const std::size_t d = p.dim();
  p.B_z = Tensor({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) p.B_z.at(i, j) = (1.0 - rho) * p.sigma_z.at(i, j);
  for (std::size_t i = 0; i < d; ++i) p.B_z.at(i, i) += rho * p.sigma_z.at(i, i) + eps;
  factor(p);
  return p;
}

PriorStats isotropic_prior(const Discrepancies& e, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("covariance floor must be positive");
  PriorStats p;
  p.kind = PriorKind::isotropic;
  p.rho = 0.0;
  p.eps = eps;
  moments(e, p);
  const std::size_t d = p.dim();
  double mean_var = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean_var += p.sigma_z.at(i, i) / static_cast<double>(d);
  const double s2 = std::max(mean_var, eps);
  p.B_z = Tensor({d, d});
  for (std::size_t i = 0; i < d; ++i) p.B_z.at(i, i) = s2;
  factor(p);
  return p;
}

PriorStats custom_prior(const Tensor& B, std::vector<double> b_z) {
  PriorStats p;
  p.kind = PriorKind::custom;
  p.rho = 0.0;
  p.eps = 0.0;
  const std::size_t d = B.rows();
  if (B.rank() != 2 || B.cols() != d) throw std::invalid_argument("prior covariance must be square");
  p.b_z = b_z.empty() ? std::vector<double>(d, 0.0) : std::move(b_z);
  if (p.b_z.size() != d) throw std::invalid_argument("prior mean length mismatch");
  p.sigma_z = B;
  p.B_z = B;
  p.chol = linalg::Cholesky(B);
  return p;
}

std::vector<double> bias_correct(std::span<const double> z_bg, const PriorStats& prior) {
  if (z_bg.size() != prior.dim())
    throw std::invalid_argument("latent length " + std::to_string(z_bg.size()) + " does not match prior dimension " +
                                std::to_string(prior.dim()));
  std::vector<double> z0(z_bg.size());
  for (std::size_t i = 0; i < z0.size(); ++i) z0[i] = z_bg[i] - prior.b_z[i];
  return z0;
}

namespace {
constexpr std::string_view kMagic = "WINDPRIO";
}

void save_prior(const std::filesystem::path& path, const PriorStats& p) {
  json header = {{"version", 1},
                 {"kind", kind_name(p.kind)},
                 {"dim", p.dim()},
                 {"n", p.n},
                 {"rho", p.rho},
                 {"eps", p.eps},
                 {"covariance_scale", 1.0},
                 {"checkpoint_hash", io::hex64(p.checkpoint_hash)}};
  io::BinaryWriter w;
  w.bytes(kMagic);
  w.u32(1);
  w.string(header.dump());
  w.tensor(Tensor::vector(p.b_z));
  w.tensor(p.sigma_z);
  w.tensor(p.B_z);
  io::write_file_atomic(path, w.str());
}

PriorStats load_prior(const std::filesystem::path& path, std::optional<std::uint64_t> expected) {
  const std::string data = io::read_file(path);
  io::BinaryReader r(data);
  PriorStats p;
  try {
    if (r.bytes(kMagic.size()) != kMagic) throw io::FormatError(path.string() + ": not a prior file");
    if (const auto v = r.u32(); v != 1) throw io::FormatError(path.string() + ": unsupported prior version " + std::to_string(v));
    const json h = json::parse(r.string());
    const std::string kind = h.at("kind").get<std::string>();
    p.kind = kind == "adaptive" ? PriorKind::adaptive : kind == "isotropic" ? PriorKind::isotropic : PriorKind::custom;
    p.n = h.at("n").get<std::size_t>();
    p.rho = h.at("rho").get<double>();
    p.eps = h.at("eps").get<double>();
    p.checkpoint_hash = std::stoull(h.at("checkpoint_hash").get<std::string>(), nullptr, 16);
    const std::size_t d = h.at("dim").get<std::size_t>();
    const Tensor b = r.tensor();
    p.b_z.assign(b.data().begin(), b.data().end());
    p.sigma_z = r.tensor();
    p.B_z = r.tensor();
    if (!r.done() || p.b_z.size() != d || p.sigma_z.shape() != Shape{d, d} || p.B_z.shape() != Shape{d, d})
      throw io::FormatError(path.string() + ": inconsistent prior payload");
  } catch (const json::exception& e) {
    throw io::FormatError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument&) {
    throw io::FormatError(path.string() + ": malformed checkpoint hash");
  }
  if (expected && *expected != p.checkpoint_hash)
    throw PriorMismatch("prior " + path.string() + " was computed from checkpoint " + io::hex64(p.checkpoint_hash) +
                        ", expected " + io::hex64(*expected));
  factor(p);
  return p;
}

}  // namespace windinr::prior
