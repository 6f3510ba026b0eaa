#include "windinr/baselines.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "windinr/optim.hpp"

namespace windinr::baselines {

using correction::Observation;
using Clock = std::chrono::steady_clock;

const char* method_name(Method m) {
  switch (m) {
    case Method::noobs: return "noobs";
    case Method::idw: return "idw";
    case Method::iso: return "iso";
    case Method::partial_ft: return "partial_ft";
    case Method::full_ft: return "full_ft";
    case Method::windinr: return "windinr";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : kMethods)
    if (name == method_name(m)) return m;
  throw std::invalid_argument("unknown method '" + std::string(name) +
                              "' (expected noobs, idw, iso, partial_ft, full_ft or windinr)");
}

CaseSetup make_setup(const model::WindModel& model, model::CaseInputs inputs, const prior::PriorStats& adaptive,
                     const prior::PriorStats* isotropic) {
  CaseSetup s;
  s.model = &model;
  s.inputs = inputs;
  s.field = std::make_shared<const model::NeuralField>(model, std::move(inputs));
  s.adaptive = &adaptive;
  s.isotropic = isotropic;
  return s;
}

LatentAccessor::LatentAccessor(std::shared_ptr<const LatentField> field, std::vector<double> z, std::size_t chunk)
    : field_(std::move(field)), z_(std::move(z)), chunk_(chunk) {
  if (z_.size() != field_->latent_dim()) throw std::invalid_argument("latent length does not match the field");
}

Tensor LatentAccessor::predict(std::span<const QueryPoint> points) const { return predict_at(*field_, z_, points, chunk_); }

IdwAccessor::IdwAccessor(std::shared_ptr<const FieldAccessor> base, const std::vector<Observation>& observations)
    : base_(std::move(base)) {
  std::vector<QueryPoint> pts;
  for (const auto& o : observations) pts.push_back(o.p);
  const Tensor b = base_->predict(pts);
  for (std::size_t n = 0; n < observations.size(); ++n) {
    const Observation& o = observations[n];
    Site s{o.p, {0, 0, 0}, o.y, o.mask};
    for (std::size_t c = 0; c < 3; ++c)
      if (o.mask[c]) s.r[c] = o.y[c] - b.at(n, c);
    sites_.push_back(s);
  }
}

std::array<double, 3> IdwAccessor::residual_at(const QueryPoint& p) const {
  std::array<double, 3> num = {0, 0, 0}, den = {0, 0, 0};
  std::array<bool, 3> exact = {false, false, false};
  for (const Site& s : sites_) {
    const double dx = p.rx - s.p.rx, dy = p.ry - s.p.ry, dh = p.h - s.p.h;
    const double d2 = dx * dx + dy * dy + dh * dh;
    for (std::size_t c = 0; c < 3; ++c) {
      if (!s.mask[c] || exact[c]) continue;
      if (d2 == 0.0) {
        exact[c] = true;
        num[c] = s.r[c];
        den[c] = 1.0;
        continue;
      }
      num[c] += s.r[c] / d2;
      den[c] += 1.0 / d2;
    }
  }
  std::array<double, 3> r = {0, 0, 0};
  for (std::size_t c = 0; c < 3; ++c)
    if (den[c] > 0.0) r[c] = num[c] / den[c];
  return r;
}

Tensor IdwAccessor::predict(std::span<const QueryPoint> points) const {
  Tensor out = base_->predict(points);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto r = residual_at(points[i]);
    for (std::size_t c = 0; c < 3; ++c) {
      if (const auto y = exact_at(points[i], c)) out.at(i, c) = *y;
      else out.at(i, c) += r[c];
    }
  }
  return out;
}

std::optional<double> IdwAccessor::exact_at(const QueryPoint& p, std::size_t c) const {
  for (const Site& s : sites_)
    if (s.mask[c] && s.p.rx == p.rx && s.p.ry == p.ry && s.p.h == p.h) return s.y[c];
  return std::nullopt;
}

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void require_setup(const CaseSetup& s) {
  if (!s.model || !s.field || !s.adaptive) throw std::invalid_argument("case setup is incomplete");
}

std::vector<double> z0_of(const CaseSetup& s, const prior::PriorStats& p) {
  return prior::bias_correct(s.field->z_background(), p);
}

/// A model copy owned together with the field decoded from it.
class OwnedModelAccessor : public FieldAccessor {
 public:
  using LatentOf = std::function<std::vector<double>(const model::NeuralField&)>;
  OwnedModelAccessor(model::WindModel m, const model::CaseInputs& inputs, const LatentOf& latent_of)
      : model_(std::make_shared<model::WindModel>(std::move(m))),
        field_(std::make_shared<model::NeuralField>(*model_, inputs)),
        inner_(field_, latent_of(*field_)) {}
  Tensor predict(std::span<const QueryPoint> points) const override { return inner_.predict(points); }

 private:
  std::shared_ptr<model::WindModel> model_;
  std::shared_ptr<model::NeuralField> field_;
  LatentAccessor inner_;
};

struct MisfitTerms {
  std::vector<QueryPoint> points;
  Tensor targets, weights;
};

MisfitTerms misfit_terms(const std::vector<Observation>& obs) {
  MisfitTerms t;
  t.targets = Tensor({obs.size(), 3});
  t.weights = Tensor({obs.size(), 3});
  for (std::size_t n = 0; n < obs.size(); ++n) {
    obs[n].validate();
    t.points.push_back(obs[n].p);
    for (std::size_t c = 0; c < 3; ++c) {
      t.targets.at(n, c) = obs[n].mask[c] ? obs[n].y[c] : 0.0;
      t.weights.at(n, c) = obs[n].mask[c] ? 0.5 / obs[n].variance[c] : 0.0;
    }
  }
  return t;
}

using Objective = std::function<ad::Var(model::ParamBinding&)>;

/// Adam over the trainable subset with best-iterate retention. A non-finite
/// objective stops the loop and keeps the best iterate seen so far.
void finetune_loop(model::WindModel& work, model::WindModel& best, const model::ParamBinding::TrainableByName& trainable,
                   const Objective& objective, std::size_t steps, double lr, BaselineResult& r) {
  optim::NamedAdam adam({lr, 0.9, 0.999, 1e-8, 0.0});
  auto lookup = [&work](const std::string& name) -> Tensor& { return work.params().at(name); };
  double best_value = 0.0;
  for (std::size_t step = 0; step <= steps; ++step) {
    std::map<std::string, Tensor> grads;
    double value = 0.0;
    try {
      ad::Graph g;
      model::ParamBinding w(g, work.params(), trainable);
      const ad::Var j = objective(w);
      value = j.value().item();
      g.backward(j);
      grads = w.gradients();
    } catch (const NumericalError& e) {
      r.diverged = true;
      r.note = "diverged at step " + std::to_string(step) + ": " + e.what();
      break;
    }
    double g2 = 0.0;
    for (const auto& [name, t] : grads) g2 += squared_norm(t.data());
    const double gn = std::sqrt(g2);
    if (!std::isfinite(value) || !std::isfinite(gn)) {
      r.diverged = true;
      r.note = "non-finite objective or gradient at step " + std::to_string(step);
      break;
    }
    r.trace.push_back({step, value, gn});
    if (step == 0 || value < best_value) {
      best_value = value;
      best = work;
    }
    if (step == steps) break;
    adam.step(lookup, grads);
    r.steps = step + 1;
  }
}

}  // namespace

BaselineResult no_obs_predict(const CaseSetup& setup) {
  require_setup(setup);
  BaselineResult r;
  r.method = Method::noobs;
  const auto t0 = Clock::now();
  r.field = std::make_shared<LatentAccessor>(setup.field, z0_of(setup, *setup.adaptive));
  r.seconds = seconds_since(t0);
  return r;
}

BaselineResult idw_correct(const CaseSetup& setup, const std::vector<Observation>& observations) {
  require_setup(setup);
  BaselineResult r;
  r.method = Method::idw;
  const auto t0 = Clock::now();
  auto base = std::make_shared<LatentAccessor>(setup.field, z0_of(setup, *setup.adaptive));
  r.field = std::make_shared<IdwAccessor>(base, observations);
  r.seconds = seconds_since(t0);
  return r;
}

BaselineResult latent_correct(const CaseSetup& setup, const std::vector<Observation>& observations, bool isotropic,
                              const correction::CorrectionConfig& config) {
  require_setup(setup);
  const prior::PriorStats* p = isotropic ? setup.isotropic : setup.adaptive;
  if (!p) throw std::invalid_argument("isotropic prior not loaded");
  BaselineResult r;
  r.method = isotropic ? Method::iso : Method::windinr;
  const std::vector<double> z0 = z0_of(setup, *p);
  const auto t0 = Clock::now();
  correction::CorrectionResult c = correction::correct_latent(*setup.field, z0, observations, *p, config);
  r.seconds = seconds_since(t0);
  r.steps = c.steps_run;
  r.trace = std::move(c.trace);
  r.field = std::make_shared<LatentAccessor>(setup.field, std::move(c.z));
  return r;
}

bool partial_subset(const std::string& name) {
  return name.rfind("dec.seed1.", 0) == 0 || name.rfind("dec.seed2.", 0) == 0 || name.rfind("dec.head2.", 0) == 0;
}

BaselineResult partial_finetune(const CaseSetup& setup, const std::vector<Observation>& observations,
                                const BaselineConfig& config) {
  require_setup(setup);
  BaselineResult r;
  r.method = Method::partial_ft;
  const std::vector<double> z0 = z0_of(setup, *setup.adaptive);
  if (observations.empty()) {
    r.field = std::make_shared<LatentAccessor>(setup.field, z0);
    return r;
  }
  const std::uint64_t original = setup.model->params().hash();
  const auto t0 = Clock::now();
  const MisfitTerms terms = misfit_terms(observations);
  const auto batch = setup.field->prepare(terms.points);
  std::map<std::string, Tensor> anchors;
  for (const auto& e : setup.model->params().entries())
    if (partial_subset(e.name)) anchors[e.name] = e.value;

  model::WindModel work = *setup.model;
  model::WindModel best = work;
  const Tensor zt({1, z0.size()}, z0);
  auto objective = [&](model::ParamBinding& w) {
    ad::Graph& g = w.graph();
    ad::Var pred = setup.field->decode_with(w, work, *batch, g.constant(zt));
    ad::Var j = ad::weighted_squared_error(pred, terms.targets, terms.weights);
    for (const auto& [name, a] : anchors)
      j = ad::add(j, ad::scale(ad::sum(ad::square(ad::sub(w(name), g.constant(a)))), config.anchor));
    return j;
  };
  finetune_loop(work, best, partial_subset, objective, config.ft_steps, config.ft_lr, r);
  r.seconds = seconds_since(t0);

  for (model::Block b : model::kBlocks) {
    for (const auto& e : best.params().entries()) {
      if (e.block != b || partial_subset(e.name)) continue;
      if (!(e.value == setup.model->params().at(e.name)))
        throw std::logic_error("partial fine-tuning modified parameter '" + e.name + "' outside its subset");
    }
  }
  if (setup.model->params().hash() != original) throw std::logic_error("partial fine-tuning modified the checkpoint");
  r.field = std::make_shared<OwnedModelAccessor>(std::move(best), setup.inputs,
                                                 [&z0](const model::NeuralField&) { return z0; });
  return r;
}

BaselineResult full_finetune(const CaseSetup& setup, const std::vector<Observation>& observations,
                             const BaselineConfig& config) {
  require_setup(setup);
  BaselineResult r;
  r.method = Method::full_ft;
  const prior::PriorStats& p = *setup.adaptive;
  if (observations.empty()) {
    r.field = std::make_shared<LatentAccessor>(setup.field, z0_of(setup, p));
    return r;
  }
  const std::uint64_t original = setup.model->params().hash();
  const auto t0 = Clock::now();
  const MisfitTerms terms = misfit_terms(observations);
  model::WindModel work = *setup.model;
  model::WindModel best = work;
  const Tensor bz({1, p.dim()}, p.b_z);
  auto objective = [&](model::ParamBinding& w) {
    ad::Graph& g = w.graph();
    const model::Context ctx = model::encode_context(w, work.config(), setup.inputs);
    ad::Var z = ad::sub(model::predict_no_obs(w, ctx), g.constant(bz));
    const model::QueryFeatures q = model::query_features(ctx, work, terms.points);
    ad::Var pred = model::decode(w, work, q, z);
    return ad::weighted_squared_error(pred, terms.targets, terms.weights);
  };
  auto everything = [](const std::string&) { return true; };
  finetune_loop(work, best, everything, objective, config.ft_steps, config.ft_lr, r);
  r.seconds = seconds_since(t0);
  if (setup.model->params().hash() != original) throw std::logic_error("full fine-tuning modified the checkpoint");
  r.field = std::make_shared<OwnedModelAccessor>(std::move(best), setup.inputs, [&p](const model::NeuralField& f) {
    return prior::bias_correct(f.z_background(), p);
  });
  return r;
}

BaselineResult run_method(Method m, const CaseSetup& setup, const std::vector<Observation>& observations,
                          const BaselineConfig& config) {
  switch (m) {
    case Method::noobs: return no_obs_predict(setup);
    case Method::idw: return idw_correct(setup, observations);
    case Method::iso: return latent_correct(setup, observations, true, config.correction);
    case Method::windinr: return latent_correct(setup, observations, false, config.correction);
    case Method::partial_ft: return partial_finetune(setup, observations, config);
    case Method::full_ft: return full_finetune(setup, observations, config);
  }
  throw std::invalid_argument("unknown method");
}

double observation_misfit(const FieldAccessor& field, const std::vector<Observation>& observations) {
  if (observations.empty()) return 0.0;
  const MisfitTerms t = misfit_terms(observations);
  const Tensor pred = field.predict(t.points);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += t.weights[i] * (pred[i] - t.targets[i]) * (pred[i] - t.targets[i]);
  return s;
}

}  // namespace windinr::baselines
