#include "windinr/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "windinr/optim.hpp"
#include "windinr/rng.hpp"

namespace windinr::training {

using ad::Var;
using model::Block;
using model::NormStats;

SupportQuery sample_support_query(std::size_t n_points, std::size_t m_sup, std::size_t m_qry, std::uint64_t seed) {
  if (m_sup == 0 || m_qry == 0) throw std::invalid_argument("support and query sizes must be positive");
  if (m_sup + m_qry > n_points) {
    throw std::invalid_argument("insufficient points: need " + std::to_string(m_sup + m_qry) + ", case has " +
                                std::to_string(n_points));
  }
  Rng rng(seed);
  const auto draw = sample_without_replacement(n_points, m_sup + m_qry, rng);
  SupportQuery sq;
  sq.support.assign(draw.begin(), draw.begin() + static_cast<std::ptrdiff_t>(m_sup));
  sq.query.assign(draw.begin() + static_cast<std::ptrdiff_t>(m_sup), draw.end());
  return sq;
}

namespace {

void check_pair(const Tensor& pred, const Tensor& labels) {
  if (pred.shape() != labels.shape() || pred.cols() != 3)
    throw std::invalid_argument("prediction/label shape mismatch: " + shape_string(pred.shape()) + " vs " +
                                shape_string(labels.shape()));
}

double pooled_mse(const Tensor& pred, const Tensor& labels, const NormStats& norm) {
  check_pair(pred, labels);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.rows(); ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = (pred.at(i, c) - labels.at(i, c)) / norm.std[c];
      s += d * d;
    }
  return s / static_cast<double>(pred.rows() * 3);
}

Tensor mse_weights(std::size_t n, const NormStats& norm) {
  Tensor w({n, 3});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) w.at(i, c) = 1.0 / (norm.std[c] * norm.std[c] * static_cast<double>(n * 3));
  return w;
}

}  // namespace

double loss_ref(const Tensor& pred, const Tensor& labels, const NormStats& norm, std::span<const double> z,
                double lambda_ref) {
  return pooled_mse(pred, labels, norm) + lambda_ref * squared_norm(z);
}

double loss_beta(const Tensor& pred, const Tensor& labels, const NormStats& norm, std::span<const double> z_bg,
                 std::span<const double> z_ref, double lambda_align) {
  if (z_bg.size() != z_ref.size()) throw std::invalid_argument("latent length mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < z_bg.size(); ++i) d += (z_bg[i] - z_ref[i]) * (z_bg[i] - z_ref[i]);
  return pooled_mse(pred, labels, norm) + lambda_align * d;
}

Var loss_ref(Var pred, const Tensor& labels, const NormStats& norm, Var z, double lambda_ref) {
  check_pair(pred.value(), labels);
  Var mse = ad::weighted_squared_error(pred, labels, mse_weights(labels.rows(), norm));
  return mse + ad::scale(ad::sum(ad::square(z)), lambda_ref);
}

Var loss_beta(Var pred, const Tensor& labels, const NormStats& norm, Var z_bg, Var z_ref, double lambda_align) {
  check_pair(pred.value(), labels);
  Var mse = ad::weighted_squared_error(pred, labels, mse_weights(labels.rows(), norm));
  return mse + ad::scale(ad::sum(ad::square(z_bg - z_ref)), lambda_align);
}

Tensor labels_of(const synth::Case& c, std::span<const std::size_t> idx) {
  Tensor t({idx.size(), 3});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& w = c.hr.at(idx[i]).truth;
    t.at(i, 0) = w.u;
    t.at(i, 1) = w.v;
    t.at(i, 2) = w.w;
  }
  return t;
}

std::vector<QueryPoint> points_of(const synth::Case& c, std::span<const std::size_t> idx) {
  std::vector<QueryPoint> p;
  p.reserve(idx.size());
  for (std::size_t i : idx) p.push_back(c.hr.at(i).p);
  return p;
}

Tensor normalized_labels(const Tensor& labels, const NormStats& norm) {
  Tensor t = labels;
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t c = 0; c < 3; ++c) t.at(i, c) = (t.at(i, c) - norm.mean[c]) / norm.std[c];
  return t;
}

Var reference_latent(model::ParamBinding& w, const model::WindModel& m, const model::Context& ctx,
                     const synth::Case& c, const SupportQuery& sq) {
  const auto sup_pts = points_of(c, sq.support);
  const model::QueryFeatures sf = model::query_features(ctx, m, sup_pts);
  return model::reference_encode(w, ctx, sf.features, normalized_labels(labels_of(c, sq.support), m.norm()));
}

CaseGraph stage1_case(model::ParamBinding& w, const model::WindModel& m, const model::CaseInputs& in,
                      const synth::Case& c, const SupportQuery& sq, double lambda_ref) {
  CaseGraph cg;
  cg.ctx = model::encode_context(w, m.config(), in);
  cg.z_ref = reference_latent(w, m, cg.ctx, c, sq);
  const auto q_pts = points_of(c, sq.query);
  const model::QueryFeatures qf = model::query_features(cg.ctx, m, q_pts);
  Var pred = model::decode(w, m, qf, cg.z_ref);
  cg.loss = loss_ref(pred, labels_of(c, sq.query), m.norm(), cg.z_ref, lambda_ref);
  return cg;
}

CaseGraph stage2_case(model::ParamBinding& w, const model::WindModel& m, const model::CaseInputs& in,
                      const synth::Case& c, const SupportQuery& sq, double lambda_align) {
  CaseGraph cg;
  cg.ctx = model::encode_context(w, m.config(), in);
  cg.z_ref = reference_latent(w, m, cg.ctx, c, sq);
  cg.z_bg = model::predict_no_obs(w, cg.ctx);
  const auto q_pts = points_of(c, sq.query);
  const model::QueryFeatures qf = model::query_features(cg.ctx, m, q_pts);
  Var pred = model::decode(w, m, qf, cg.z_bg);
  cg.loss = loss_beta(pred, labels_of(c, sq.query), m.norm(), cg.z_bg, cg.z_ref, lambda_align);
  return cg;
}

SupportQuery fixed_draw(const synth::Case& c, std::size_t case_index, const StageConfig& config) {
  return sample_support_query(c.hr.size(), config.m_sup, config.m_qry,
                              mix_seed(config.seed ^ 0x5a11da7eULL, case_index));
}

namespace {

void validate(const StageConfig& c) {
  if (c.m_sup == 0 || c.m_qry == 0 || c.batch == 0 || c.eval_every == 0)
    throw std::invalid_argument("stage config sizes must be positive");
  if (!(c.lr >= 0.0) || !(c.weight_decay >= 0.0) || !(c.lambda_ref >= 0.0) || !(c.lambda_align >= 0.0))
    throw std::invalid_argument("stage config rates must be non-negative");
}

bool trainable_for(int stage, Block b) {
  if (stage == 1) return b != Block::noobs_predictor;
  return b == Block::noobs_predictor;
}

double case_loss(int stage, model::ParamBinding& w, const model::WindModel& m, const model::CaseInputs& in,
                 const synth::Case& c, const SupportQuery& sq, const StageConfig& config, Var* root) {
  CaseGraph cg = stage == 1 ? stage1_case(w, m, in, c, sq, config.lambda_ref)
                            : stage2_case(w, m, in, c, sq, config.lambda_align);
  if (root) *root = cg.loss;
  return cg.loss.value().item();
}

struct Stepper {
  int stage;
  const synth::Dataset& data;
  const StageConfig& config;
  std::vector<model::CaseInputs> inputs;

  Stepper(int s, const synth::Dataset& d, const StageConfig& c) : stage(s), data(d), config(c) {
    inputs.reserve(d.cases.size());
    for (const auto& cs : d.cases) inputs.push_back(model::make_inputs(d.terrain, cs));
  }

  /// Mean loss and gradient over a batch; cases run concurrently on separate graphs.
  double batch_gradients(const model::WindModel& m, std::span<const std::size_t> cases, std::uint64_t step_seed,
                         std::map<std::string, Tensor>& grads) const {
    const std::size_t n = cases.size();
    std::vector<std::map<std::string, Tensor>> per_case(n);
    std::vector<double> losses(n, 0.0);
    std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t k = 0; k < n; ++k) {
      try {
        const std::size_t ci = cases[k];
        const synth::Case& c = data.cases[ci];
        const SupportQuery sq = sample_support_query(c.hr.size(), config.m_sup, config.m_qry, mix_seed(step_seed, ci));
        ad::Graph g;
        model::ParamBinding w(g, m.params(), [this](Block b) { return trainable_for(stage, b); });
        Var root;
        losses[k] = case_loss(stage, w, m, inputs[ci], c, sq, config, &root);
        g.backward(root);
        per_case[k] = w.gradients();
      } catch (const std::exception& e) {
        errors[k] = data.cases[cases[k]].name + ": " + e.what();
      }
    }
    for (const auto& e : errors)
      if (!e.empty()) throw NumericalError("training diverged at " + e);
    grads.clear();
    const double inv = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      loss += losses[k] * inv;
      for (auto& [name, t] : per_case[k]) {
        auto [it, fresh] = grads.try_emplace(name, Tensor::zeros(t.shape()));
        auto dst = it->second.data();
        auto src = t.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += inv * src[i];
      }
    }
    return loss;
  }
};

StageResult run_stage(int stage, const synth::Dataset& data, model::WindModel m, const StageConfig& config,
                      const Progress& progress) {
  validate(config);
  if (data.splits.train.empty() || data.splits.val.empty())
    throw std::invalid_argument("training needs non-empty train and validation splits");

  std::map<Block, std::uint64_t> frozen;
  for (Block b : model::kBlocks)
    if (!trainable_for(stage, b)) frozen[b] = m.params().hash(b);

  Stepper stepper(stage, data, config);
  optim::NamedAdam adam({config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  auto lookup = [&m](const std::string& name) -> Tensor& { return m.params().at(name); };

  StageResult result{m, {}, validation_loss(stage, data, m, config), 0.0, 0};
  result.final_val = result.best_val;
  result.curve.push_back({0, std::numeric_limits<double>::quiet_NaN(), result.best_val});
  if (progress) progress(result.curve.back());

  const std::uint64_t stage_seed = mix_seed(config.seed, static_cast<std::uint64_t>(stage));
  std::size_t step = 0;
  bool capped = false;
  for (std::size_t epoch = 0; epoch < config.epochs && !capped; ++epoch) {
    Rng order_rng(mix_seed(stage_seed, 0xe90c0000ULL + epoch));
    std::vector<std::size_t> order = data.splits.train;
    std::shuffle(order.begin(), order.end(), order_rng);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      if (config.max_steps && step >= config.max_steps) {
        capped = true;
        break;
      }
      const std::size_t end = std::min(order.size(), start + config.batch);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      std::map<std::string, Tensor> grads;
      const double loss = stepper.batch_gradients(m, batch, mix_seed(stage_seed, step + 1), grads);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "stage " << stage << " loss became non-finite at step " << step << " (epoch " << epoch << ")";
        throw NumericalError(os.str());
      }
      adam.step(lookup, grads);
      ++step;
      epoch_loss += loss;
      ++batches;
    }
    if (batches == 0) break;
    const bool last = epoch + 1 == config.epochs || capped;
    if ((epoch + 1) % config.eval_every == 0 || last) {
      const double val = validation_loss(stage, data, m, config);
      result.final_val = val;
      result.curve.push_back({step, epoch_loss / static_cast<double>(batches), val});
      if (progress) progress(result.curve.back());
      if (val < result.best_val) {
        result.best_val = val;
        result.best = m;
      }
    }
  }
  result.steps = step;

  for (const auto& [b, h] : frozen) {
    if (m.params().hash(b) != h || result.best.params().hash(b) != h)
      throw std::logic_error(std::string("frozen block '") + model::block_name(b) + "' was modified during stage " +
                             std::to_string(stage));
  }
  return result;
}

}  // namespace

double validation_loss(int stage, const synth::Dataset& data, const model::WindModel& m, const StageConfig& config) {
  const auto& val = data.splits.val;
  std::vector<double> losses(val.size(), 0.0);
  std::vector<std::string> errors(val.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < val.size(); ++k) {
    try {
      const synth::Case& c = data.cases[val[k]];
      const model::CaseInputs in = model::make_inputs(data.terrain, c);
      ad::Graph g;
      model::ParamBinding w(g, m.params(), model::no_blocks);
      losses[k] = case_loss(stage, w, m, in, c, fixed_draw(c, val[k], config), config, nullptr);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw NumericalError("validation failed: " + e);
  double s = 0.0;
  for (double l : losses) s += l;
  return val.empty() ? 0.0 : s / static_cast<double>(val.size());
}

StageResult train_stage1(const synth::Dataset& data, model::WindModel init, const StageConfig& config,
                         const Progress& progress) {
  init.set_norm(model::label_stats(data.cases, data.splits.train));
  return run_stage(1, data, std::move(init), config, progress);
}

StageResult train_stage2(const synth::Dataset& data, model::WindModel stage1, const StageConfig& config,
                         const Progress& progress) {
  return run_stage(2, data, std::move(stage1), config, progress);
}

io::CsvTable curve_table(const std::vector<CurveRow>& curve) {
  io::CsvTable t;
  t.header = {"step", "train_loss", "val_loss"};
  for (const auto& r : curve)
    t.rows.push_back({std::to_string(r.step), std::isnan(r.train_loss) ? std::string() : io::format_double(r.train_loss),
                      io::format_double(r.val_loss)});
  return t;
}

}  // namespace windinr::training
