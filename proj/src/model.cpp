#include "windinr/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "windinr/io.hpp"
#include "windinr/rng.hpp"

namespace windinr::model {

using ad::Var;
using nlohmann::json;

namespace {

constexpr std::string_view kCheckpointMagic = "WINDCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kStdEps = 1e-6;

std::atomic<std::size_t> g_clamped{0};

void add_linear(ModelParams& p, Block b, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                bool zero = false) {
  Tensor w({in, out});
  if (!zero) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : w.data()) v = uniform(rng, -bound, bound);
  }
  p.add(b, name + ".W", std::move(w));
  p.add(b, name + ".b", Tensor({1, out}));
}

void add_resblock(ModelParams& p, Block b, const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
  auto conv = [&](const std::string& n, std::size_t ci) {
    Tensor w({9 * ci, cout});
    const double bound = 1.0 / std::sqrt(9.0 * static_cast<double>(ci));
    for (double& v : w.data()) v = uniform(rng, -bound, bound);
    p.add(b, name + "." + n + ".W", std::move(w));
    p.add(b, name + "." + n + ".b", Tensor({1, cout}));
  };
  conv("conv1", cin);
  conv("conv2", cout);
  if (cin != cout) {
    Tensor w({cin, cout});
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
    for (double& v : w.data()) v = uniform(rng, -bound, bound);
    p.add(b, name + ".skip.W", std::move(w));
  }
}

Var linear(ParamBinding& w, const std::string& name, Var x) {
  return ad::add_rowvec(ad::matmul(x, w(name + ".W")), w(name + ".b"));
}

Var resblock(ParamBinding& w, const std::string& name, Var x, std::size_t h, std::size_t wd, std::size_t groups,
             double eps, kernels::Padding pad) {
  Var t = ad::add_rowvec(ad::conv3x3(x, w(name + ".conv1.W"), h, wd, pad), w(name + ".conv1.b"));
  t = ad::silu(ad::group_norm(t, groups, eps));
  t = ad::add_rowvec(ad::conv3x3(t, w(name + ".conv2.W"), h, wd, pad), w(name + ".conv2.b"));
  t = ad::group_norm(t, groups, eps);
  const std::string skip = name + ".skip.W";
  Var s = x.cols() == t.cols() ? x : ad::matmul(x, w(skip));
  return ad::silu(ad::add(t, s));
}

// per-channel spatial mean and std, [1, 2c]
Var mean_std(Var f) {
  Var m = ad::mean_rows(f);
  Var var = ad::mean_rows(ad::square(ad::sub_rowvec(f, m)));
  Var sd = ad::affine(ad::sqrt_eps(var, kStdEps), 1.0, -std::sqrt(kStdEps));
  return ad::concat_cols({m, sd});
}

kernels::PixelCoord pixel(double rx, double ry, std::size_t n) {
  const double s = 0.5 * static_cast<double>(n - 1);
  return {(rx + 1.0) * s, (ry + 1.0) * s};
}

QueryPoint clamp_point(const QueryPoint& p) {
  QueryPoint q{std::clamp(p.rx, -1.0, 1.0), std::clamp(p.ry, -1.0, 1.0), std::clamp(p.h, 0.0, 1.0)};
  if (q.rx != p.rx || q.ry != p.ry || q.h != p.h) g_clamped.fetch_add(1, std::memory_order_relaxed);
  return q;
}

}  // namespace

const char* block_name(Block b) {
  switch (b) {
    case Block::terrain_encoder: return "terrain_encoder";
    case Block::lr_encoder: return "lr_encoder";
    case Block::reference_encoder: return "reference_encoder";
    case Block::noobs_predictor: return "noobs_predictor";
    case Block::decoder: return "decoder";
  }
  return "?";
}

// -- ModelParams ---------------------------------------------------------------------

void ModelParams::add(Block block, std::string name, Tensor value) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
  index_[name] = entries_.size();
  entries_.push_back({block, std::move(name), std::move(value)});
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second].value;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second].value;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.value.size();
  return n;
}

std::size_t ModelParams::count(Block block) const {
  std::size_t n = 0;
  for (const Entry& e : entries_)
    if (e.block == block) n += e.value.size();
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(count());
  for (const Entry& e : entries_) flat.insert(flat.end(), e.value.data().begin(), e.value.data().end());
  return flat;
}

void ModelParams::unflatten(std::span<const double> flat) {
  if (flat.size() != count())
    throw std::invalid_argument("unflatten: " + std::to_string(flat.size()) + " values for " + std::to_string(count()) +
                                " parameters");
  std::size_t pos = 0;
  for (Entry& e : entries_) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
              flat.begin() + static_cast<std::ptrdiff_t>(pos + e.value.size()), e.value.raw());
    pos += e.value.size();
  }
}

std::uint64_t ModelParams::hash(Block block) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Entry& e : entries_) {
    if (e.block != block) continue;
    h = fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(e.value.raw()),
                                               e.value.size() * sizeof(double)),
                h);
  }
  return h;
}

std::uint64_t ModelParams::hash() const {
  std::uint64_t h = 0;
  for (Block b : kBlocks) h = mix_seed(h, hash(b));
  return h;
}

NormStats label_stats(const std::vector<synth::Case>& cases, std::span<const std::size_t> indices) {
  NormStats s;
  std::array<double, 3> sum{}, sq{};
  double n = 0.0;
  for (std::size_t i : indices) {
    for (const synth::HrSample& p : cases.at(i).hr) {
      const double v[3] = {p.truth.u, p.truth.v, p.truth.w};
      for (int c = 0; c < 3; ++c) {
        sum[c] += v[c];
        sq[c] += v[c] * v[c];
      }
      n += 1.0;
    }
  }
  if (n < 2.0) throw std::invalid_argument("label_stats: need at least two labelled points");
  for (int c = 0; c < 3; ++c) {
    s.mean[c] = sum[c] / n;
    s.std[c] = std::sqrt(std::max(sq[c] / n - s.mean[c] * s.mean[c], 0.0));
    if (s.std[c] < 1e-6) s.std[c] = 1.0;
  }
  return s;
}

// -- WindModel --------------------------------------------------------------------

WindModel::WindModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  Rng rng(mix_seed(seed, 0x30de1));
  const std::size_t h = config_.hidden;
  add_resblock(params_, Block::terrain_encoder, "terrain.rb0", 3, 32, rng);
  add_resblock(params_, Block::terrain_encoder, "terrain.rb1", 32, kTerrainChannels, rng);
  add_resblock(params_, Block::lr_encoder, "lr.rb0", 3, 16, rng);
  add_resblock(params_, Block::lr_encoder, "lr.rb1", 16, kLrChannels, rng);

  add_linear(params_, Block::reference_encoder, "ref.point1", kQueryFeatureDim + 3 + kGlobalDim, h, rng);
  add_linear(params_, Block::reference_encoder, "ref.point2", h, h, rng);
  add_linear(params_, Block::reference_encoder, "ref.score", h, 1, rng);
  add_linear(params_, Block::reference_encoder, "ref.out1", 3 * h + kGlobalDim, h, rng);
  add_linear(params_, Block::reference_encoder, "ref.out2", h, kLatentDim, rng);

  add_linear(params_, Block::noobs_predictor, "noobs.l1", kGlobalDim, h, rng);
  add_linear(params_, Block::noobs_predictor, "noobs.l2", h, h, rng);
  add_linear(params_, Block::noobs_predictor, "noobs.l3", h, kLatentDim, rng);

  add_linear(params_, Block::decoder, "dec.in", kQueryFeatureDim, h, rng);
  add_linear(params_, Block::decoder, "dec.seed1", kLatentDim, h, rng);
  add_linear(params_, Block::decoder, "dec.seed2", h, h, rng);
  for (std::size_t b = 0; b < config_.film_blocks; ++b) {
    const std::string n = "dec.film" + std::to_string(b);
    add_linear(params_, Block::decoder, n + ".gen", kLatentDim, 2 * h, rng);
    add_linear(params_, Block::decoder, n + ".l1", h, h, rng);
    add_linear(params_, Block::decoder, n + ".l2", h, h, rng);
  }
  add_linear(params_, Block::decoder, "dec.head1", h, h, rng);
  add_linear(params_, Block::decoder, "dec.head2", h, 3, rng, /*zero=*/true);
  check_dimensions();
}

WindModel::WindModel(ModelConfig config, ModelParams params, NormStats norm)
    : config_(config), params_(std::move(params)), norm_(norm) {
  check_dimensions();
}

void WindModel::check_dimensions() const {
  if (query_feature_dim() != 161) throw std::logic_error("query feature length must be 161");
  if (latent_dim() != 128) throw std::logic_error("latent length must be 128");
  if (params_.at("dec.in.W").rows() != query_feature_dim())
    throw std::logic_error("decoder input width does not match the query feature length");
  if (params_.at("dec.seed1.W").rows() != latent_dim() || params_.at("ref.out2.W").cols() != latent_dim() ||
      params_.at("noobs.l3.W").cols() != latent_dim())
    throw std::logic_error("latent width mismatch in parameter blocks");
  if (config_.hidden % 2 != 0 || config_.hidden == 0) throw std::invalid_argument("hidden width must be even");
}

// -- binding --------------------------------------------------------------------------

ParamBinding::ParamBinding(ad::Graph& g, const ModelParams& params, Trainable trainable)
    : graph_(&g), params_(&params), trainable_([t = std::move(trainable)](Block b, const std::string&) { return t(b); }) {}

ParamBinding::ParamBinding(ad::Graph& g, const ModelParams& params, TrainableByName trainable)
    : graph_(&g),
      params_(&params),
      trainable_([t = std::move(trainable)](Block, const std::string& name) { return t(name); }) {}

Var ParamBinding::operator()(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  for (const auto& e : params_->entries()) {
    if (e.name != name) continue;
    Var v = graph_->leaf(e.value, trainable_(e.block, name), name);
    vars_.emplace(name, v);
    return v;
  }
  throw std::out_of_range("unknown parameter " + name);
}

std::map<std::string, Tensor> ParamBinding::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : vars_)
    if (v.requires_grad()) out[name] = graph_->grad(v);
  return out;
}

// -- encoders ----------------------------------------------------------------------------

CaseInputs make_inputs(const synth::TerrainGrid& terrain, const synth::Case& c) {
  CaseInputs in;
  in.terrain = terrain.channels();
  in.terrain_n = terrain.resolution;
  in.lr = c.lr;
  in.lr_n = synth::kLrCells;
  return in;
}

Context encode_context(ParamBinding& w, const ModelConfig& config, const CaseInputs& inputs, kernels::Padding pad) {
  ad::Graph& g = w.graph();
  if (inputs.terrain.cols() != 3 || inputs.lr.cols() != 3)
    throw std::invalid_argument("encode_context: terrain and LR inputs need 3 channels");
  Context ctx;
  ctx.inputs = &inputs;
  const std::size_t n = inputs.terrain_n, m = inputs.lr_n;
  Var t = g.constant(inputs.terrain);
  t = resblock(w, "terrain.rb0", t, n, n, config.groups, config.norm_eps, pad);
  ctx.f_s = resblock(w, "terrain.rb1", t, n, n, config.groups, config.norm_eps, pad);
  Var l = g.constant(inputs.lr);
  l = resblock(w, "lr.rb0", l, m, m, config.groups, config.norm_eps, pad);
  ctx.f_lr = resblock(w, "lr.rb1", l, m, m, config.groups, config.norm_eps, pad);
  if (ctx.f_s.cols() != kTerrainChannels || ctx.f_lr.cols() != kLrChannels)
    throw std::invalid_argument("encode_context: channel count mismatch with configuration");
  ctx.global = ad::concat_cols({mean_std(ctx.f_s), mean_std(ctx.f_lr)});
  return ctx;
}

std::size_t clamp_count() { return g_clamped.load(); }

std::array<double, kCoordDim> encode_coordinates(const QueryPoint& raw) {
  const QueryPoint p = clamp_point(raw);
  std::array<double, kCoordDim> e{};
  std::size_t k = 0;
  for (double c : {p.rx, p.ry}) {
    for (std::size_t b = 0; b < kFourierBands; ++b) e[k++] = std::sin(std::ldexp(std::numbers::pi, static_cast<int>(b)) * c);
    for (std::size_t b = 0; b < kFourierBands; ++b) e[k++] = std::cos(std::ldexp(std::numbers::pi, static_cast<int>(b)) * c);
  }
  e[k++] = p.h;
  e[k++] = p.h * p.h;
  e[k++] = p.h * p.h * p.h;
  for (std::size_t r = 0; r < kRbfCenters; ++r) {
    const double c = static_cast<double>(r) / static_cast<double>(kRbfCenters - 1);
    const double d = (p.h - c) / kRbfWidth;
    e[k++] = std::exp(-0.5 * d * d);
  }
  return e;
}

double height_factor(double h, double tau) { return std::max(std::exp(-h / tau), 0.0); }

QueryFeatures query_features(const Context& ctx, const WindModel& model, std::span<const QueryPoint> points) {
  ad::Graph& g = ctx.f_s.graph();
  const CaseInputs& in = *ctx.inputs;
  const std::size_t n = points.size();
  std::vector<kernels::PixelCoord> at_s(n), at_lr(n);
  Tensor local({n, 2}), coords({n, kCoordDim});
  QueryFeatures q;
  q.baseline = Tensor({n, 3});
  std::vector<double> lr_uv(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const QueryPoint p{std::clamp(points[i].rx, -1.0, 1.0), std::clamp(points[i].ry, -1.0, 1.0),
                       std::clamp(points[i].h, 0.0, 1.0)};
    at_s[i] = pixel(p.rx, p.ry, in.terrain_n);
    at_lr[i] = pixel(p.rx, p.ry, in.lr_n);
    const auto e = encode_coordinates(points[i]);
    std::copy(e.begin(), e.end(), coords.raw() + i * kCoordDim);
  }
  kernels::parallel::bilinear_gather(in.lr_n, in.lr_n, 3, in.lr.raw(), n, at_lr.data(), lr_uv.data());
  const NormStats& ns = model.norm();
  for (std::size_t i = 0; i < n; ++i) {
    const double a = height_factor(std::clamp(points[i].h, 0.0, 1.0), model.config().tau);
    q.baseline.at(i, 0) = a * lr_uv[3 * i];
    q.baseline.at(i, 1) = a * lr_uv[3 * i + 1];
    local.at(i, 0) = lr_uv[3 * i] / ns.std[0];
    local.at(i, 1) = lr_uv[3 * i + 1] / ns.std[1];
  }
  Var fs = ad::bilinear_sample(ctx.f_s, in.terrain_n, in.terrain_n, std::move(at_s));
  Var fl = ad::bilinear_sample(ctx.f_lr, in.lr_n, in.lr_n, std::move(at_lr));
  q.features = ad::concat_cols({fs, fl, g.constant(std::move(local)), g.constant(std::move(coords))});
  if (q.features.cols() != model.query_feature_dim()) throw std::logic_error("query feature length is not 161");
  return q;
}

Var reference_encode(ParamBinding& w, const Context& ctx, Var support_features, const Tensor& labels_norm) {
  const std::size_t n = support_features.rows();
  if (n == 0) throw std::invalid_argument("reference_encode: empty support set");
  if (labels_norm.rows() != n || labels_norm.cols() != 3)
    throw std::invalid_argument("reference_encode: labels must be [n, 3]");
  ad::Graph& g = w.graph();
  Var x = ad::concat_cols({support_features, g.constant(labels_norm), ad::broadcast_rows(ctx.global, n)});
  Var p = ad::silu(linear(w, "ref.point1", x));
  p = ad::silu(linear(w, "ref.point2", p));
  Var a = ad::softmax(linear(w, "ref.score", p));  // [n, 1]
  Var mean = ad::matmul_tn(a, p);
  Var var = ad::matmul_tn(a, ad::square(ad::sub_rowvec(p, mean)));
  Var sd = ad::affine(ad::sqrt_eps(var, kStdEps), 1.0, -std::sqrt(kStdEps));
  Var pooled = ad::concat_cols({mean, sd, ad::col_max(p), ctx.global});
  return linear(w, "ref.out2", ad::silu(linear(w, "ref.out1", pooled)));
}

Var predict_no_obs(ParamBinding& w, const Context& ctx) {
  Var t = ad::silu(linear(w, "noobs.l1", ctx.global));
  t = ad::silu(linear(w, "noobs.l2", t));
  return linear(w, "noobs.l3", t);
}

Var decoder_stem(ParamBinding& w, const ModelConfig& config, Var features) {
  return ad::silu(ad::layer_norm(linear(w, "dec.in", features), config.norm_eps));
}

Var decoder_tail(ParamBinding& w, const WindModel& model, Var stem, const Tensor& baseline, Var z) {
  const ModelConfig& cfg = model.config();
  const std::size_t h = cfg.hidden;
  if (z.value().size() != kLatentDim) throw std::invalid_argument("decode: latent must have length 128");
  ad::Graph& g = w.graph();
  if (z.rows() != 1) z = ad::reshape(z, {1, kLatentDim});
  Var seed = linear(w, "dec.seed2", ad::silu(linear(w, "dec.seed1", z)));
  Var x = ad::add_rowvec(stem, seed);
  for (std::size_t b = 0; b < cfg.film_blocks; ++b) {
    const std::string n = "dec.film" + std::to_string(b);
    Var gen = linear(w, n + ".gen", z);
    Var scale = ad::affine(ad::tanh(ad::slice_cols(gen, 0, h)), 1.0, 1.0);
    Var shift = ad::tanh(ad::slice_cols(gen, h, h));
    Var t = linear(w, n + ".l1", ad::layer_norm(x, cfg.norm_eps));
    t = ad::silu(ad::add_rowvec(ad::mul_rowvec(t, scale), shift));
    x = ad::add(x, linear(w, n + ".l2", t));
  }
  Var t = ad::silu(linear(w, "dec.head1", ad::layer_norm(x, cfg.norm_eps)));
  Var delta = linear(w, "dec.head2", t);
  const NormStats& ns = model.norm();
  Var residual = ad::mul_rowvec(delta, g.constant(Tensor::matrix(1, 3, {ns.std[0], ns.std[1], ns.std[2]})));
  Var out = ad::add(residual, g.constant(baseline));
  return out;
}

Var decode(ParamBinding& w, const WindModel& model, const QueryFeatures& q, Var z) {
  return decoder_tail(w, model, decoder_stem(w, model.config(), q.features), q.baseline, z);
}

// -- NeuralField ----------------------------------------------------------------------------

namespace {

struct NeuralBatch : PointBatch {
  Tensor stem;
  Tensor baseline;
};

}  // namespace

NeuralField::NeuralField(const WindModel& model, CaseInputs inputs) : model_(&model), inputs_(std::move(inputs)) {
  ad::Graph g;
  ParamBinding w(g, model.params(), no_blocks);
  const Context ctx = encode_context(w, model.config(), inputs_);
  f_s_ = ctx.f_s.value();
  f_lr_ = ctx.f_lr.value();
  global_ = ctx.global.value();
  const Tensor& zb = predict_no_obs(w, ctx).value();
  z_bg_.assign(zb.data().begin(), zb.data().end());
}

std::unique_ptr<PointBatch> NeuralField::prepare(std::span<const QueryPoint> points) const {
  ad::Graph g;
  ParamBinding w(g, model_->params(), no_blocks);
  Context ctx;
  ctx.inputs = &inputs_;
  ctx.f_s = g.constant(f_s_);
  ctx.f_lr = g.constant(f_lr_);
  ctx.global = g.constant(global_);
  QueryFeatures q = query_features(ctx, *model_, points);
  auto b = std::make_unique<NeuralBatch>();
  b->size = points.size();
  b->stem = decoder_stem(w, model_->config(), q.features).value();
  b->baseline = std::move(q.baseline);
  return b;
}

Var NeuralField::decode_with(ParamBinding& w, const WindModel& model, const PointBatch& batch, Var z) const {
  const auto& b = dynamic_cast<const NeuralBatch&>(batch);
  return decoder_tail(w, model, w.graph().constant(b.stem), b.baseline, z);
}

Var NeuralField::decode(ad::Graph& g, const PointBatch& batch, Var z) const {
  const auto& b = dynamic_cast<const NeuralBatch&>(batch);
  ParamBinding w(g, model_->params(), no_blocks);
  return decoder_tail(w, *model_, g.constant(b.stem), b.baseline, z);
}

// -- checkpoint --------------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const WindModel& model) {
  const ModelConfig& c = model.config();
  const NormStats& n = model.norm();
  json header = {{"format", "windinr-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"latent_dim", model.latent_dim()},
                 {"query_feature_dim", model.query_feature_dim()},
                 {"coordinate_encoding",
                  {{"fourier_bands", kFourierBands},
                   {"polynomial_degree", 3},
                   {"rbf_centers", kRbfCenters},
                   {"rbf_width", kRbfWidth}}},
                 {"config",
                  {{"hidden", c.hidden}, {"film_blocks", c.film_blocks}, {"groups", c.groups}, {"tau", c.tau},
                   {"norm_eps", c.norm_eps}}},
                 {"norm", {{"mean", n.mean}, {"std", n.std}}}};
  json params = json::array();
  for (const auto& e : model.params().entries())
    params.push_back({{"name", e.name}, {"block", block_name(e.block)}, {"shape", e.value.shape()}});
  header["params"] = params;
  io::BinaryWriter out;
  out.bytes(kCheckpointMagic);
  out.u32(kCheckpointVersion);
  out.string(header.dump());
  for (const auto& e : model.params().entries())
    for (double v : e.value.data()) out.f64(v);
  io::write_file_atomic(path, out.str());
}

WindModel load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  io::BinaryReader in(bytes);
  if (bytes.size() < kCheckpointMagic.size() || in.bytes(kCheckpointMagic.size()) != kCheckpointMagic)
    throw io::FormatError(path.string() + " is not a checkpoint");
  if (in.u32() != kCheckpointVersion) throw io::FormatError("unsupported checkpoint version");
  json header;
  try {
    header = json::parse(in.string());
    if (header.at("latent_dim").get<std::size_t>() != kLatentDim ||
        header.at("query_feature_dim").get<std::size_t>() != kQueryFeatureDim)
      throw io::FormatError("checkpoint dimensions do not match this build");
    ModelConfig c;
    const json& jc = header.at("config");
    c.hidden = jc.at("hidden").get<std::size_t>();
    c.film_blocks = jc.at("film_blocks").get<std::size_t>();
    c.groups = jc.at("groups").get<std::size_t>();
    c.tau = jc.at("tau").get<double>();
    c.norm_eps = jc.at("norm_eps").get<double>();
    NormStats ns;
    ns.mean = header.at("norm").at("mean").get<std::array<double, 3>>();
    ns.std = header.at("norm").at("std").get<std::array<double, 3>>();
    ModelParams params;
    for (const json& p : header.at("params")) {
      const std::string block = p.at("block").get<std::string>();
      Block b = Block::decoder;
      bool found = false;
      for (Block k : kBlocks)
        if (block == block_name(k)) b = k, found = true;
      if (!found) throw io::FormatError("unknown parameter block " + block);
      Tensor t(p.at("shape").get<Shape>());
      for (double& v : t.data()) v = in.f64();
      params.add(b, p.at("name").get<std::string>(), std::move(t));
    }
    if (!in.done()) throw io::FormatError("trailing bytes in checkpoint");
    return WindModel(c, std::move(params), ns);
  } catch (const json::exception& e) {
    throw io::FormatError("checkpoint header: " + std::string(e.what()));
  }
}

}  // namespace windinr::model
