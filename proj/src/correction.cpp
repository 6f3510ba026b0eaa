#include "windinr/correction.hpp"

#include <cmath>
#include <stdexcept>

#include "windinr/optim.hpp"

namespace windinr::correction {

void Observation::validate() const {
  bool any = false;
  for (std::size_t c = 0; c < 3; ++c) {
    if (!mask[c]) continue;
    any = true;
    if (!(variance[c] > 0.0)) throw std::invalid_argument("observation variance must be positive for selected components");
    if (!std::isfinite(y[c])) throw std::invalid_argument("observation value is not finite");
  }
  if (!any) throw std::invalid_argument("observation selects no component");
}

void CorrectionConfig::validate() const {
  if (!(clip > 0.0)) throw std::invalid_argument("gradient clip norm must be positive");
  if (!(lr >= 0.0)) throw std::invalid_argument("correction learning rate must be non-negative");
}

Objective::Objective(const LatentField& field, const prior::PriorStats& prior, std::span<const double> z0,
                     std::vector<Observation> observations, std::vector<double> mean)
    : field_(&field), prior_(&prior), z0_(z0.begin(), z0.end()), mean_(std::move(mean)), obs_(std::move(observations)) {
  if (z0_.size() != field.latent_dim() || prior.dim() != z0_.size())
    throw std::invalid_argument("latent, field and prior dimensions differ");
  if (mean_.empty()) mean_.assign(z0_.size(), 0.0);
  if (mean_.size() != z0_.size()) throw std::invalid_argument("prior mean length mismatch");
  for (const auto& o : obs_) o.validate();
  if (!obs_.empty()) {
    std::vector<QueryPoint> pts;
    for (const auto& o : obs_) pts.push_back(o.p);
    batch_ = field.prepare(pts);
    targets_ = Tensor({obs_.size(), 3});
    weights_ = Tensor({obs_.size(), 3});
    for (std::size_t n = 0; n < obs_.size(); ++n)
      for (std::size_t c = 0; c < 3; ++c) {
        targets_.at(n, c) = obs_[n].mask[c] ? obs_[n].y[c] : 0.0;
        weights_.at(n, c) = obs_[n].mask[c] ? 0.5 / obs_[n].variance[c] : 0.0;
      }
  }
}

double Objective::evaluate(std::span<const double> xi, std::span<double> grad) const {
  const std::size_t d = dim();
  if (xi.size() != d) throw std::invalid_argument("xi length mismatch");
  ad::Graph g;
  const bool want = !grad.empty();
  ad::Var x = g.leaf(Tensor({1, d}, std::vector<double>(xi.begin(), xi.end())), want);
  ad::Var centered = ad::sub(x, g.constant(Tensor({1, d}, mean_)));
  ad::Var j = ad::scale(ad::inverse_quadratic(centered, prior_->chol), 0.5);
  if (batch_) {
    ad::Var z = ad::add(g.constant(Tensor({1, d}, z0_)), x);
    ad::Var pred = field_->decode(g, *batch_, z);
    j = ad::add(j, ad::weighted_squared_error(pred, targets_, weights_));
  }
  const double v = j.value().item();
  if (want) {
    g.backward(j);
    const Tensor gx = g.grad(x);
    std::copy(gx.data().begin(), gx.data().end(), grad.begin());
  }
  return v;
}

double Objective::value(std::span<const double> xi) const { return evaluate(xi, {}); }

double Objective::value_and_gradient(std::span<const double> xi, std::span<double> grad) const {
  if (grad.size() != dim()) throw std::invalid_argument("gradient buffer length mismatch");
  return evaluate(xi, grad);
}

CorrectionResult correct_latent(const LatentField& field, std::span<const double> z0,
                                const std::vector<Observation>& observations, const prior::PriorStats& prior,
                                const CorrectionConfig& config, std::span<const double> mean) {
  config.validate();
  CorrectionResult r;
  const std::size_t d = z0.size();
  if (observations.empty()) {
    if (d != prior.dim()) throw std::invalid_argument("latent and prior dimensions differ");
    r.z.assign(z0.begin(), z0.end());
    r.xi.assign(d, 0.0);
    if (!mean.empty()) {
      // explicit nonzero-mean form: the prior alone is minimized at xi = mu
      r.xi.assign(mean.begin(), mean.end());
      for (std::size_t i = 0; i < d; ++i) r.z[i] += r.xi[i];
    }
    return r;
  }

  const std::uint64_t weights_before = field.weight_hash();
  const Objective J(field, prior, z0, observations, std::vector<double>(mean.begin(), mean.end()));
  std::vector<double> xi = J.mean();
  std::vector<double> grad(d);
  optim::Adam adam({config.lr, 0.9, 0.999, 1e-8, 0.0});

  auto eval = [&](std::size_t step) {
    try {
      const double v = J.value_and_gradient(xi, grad);
      const double gn = optim::norm(grad);
      if (!std::isfinite(v) || !std::isfinite(gn)) throw NumericalError("non-finite objective or gradient");
      r.trace.push_back({step, v, gn});
      return v;
    } catch (const NumericalError& e) {
      throw NumericalError("latent correction failed at step " + std::to_string(step) + ": " + e.what());
    }
  };

  double best = eval(0);
  r.initial_objective = best;
  r.xi = xi;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    optim::clip_by_norm(grad, config.clip);
    adam.step(xi, grad);
    const double v = eval(step);
    r.steps_run = step;
    if (!config.keep_best || v < best) {
      best = v;
      r.xi = xi;
      r.best_step = step;
    }
  }
  r.objective = best;
  r.z.resize(d);
  for (std::size_t i = 0; i < d; ++i) r.z[i] = z0[i] + r.xi[i];

  if (field.weight_hash() != weights_before) throw std::logic_error("decoder weights changed during latent correction");
  return r;
}

Tensor observation_jacobian(const LatentField& field, std::span<const double> z,
                            const std::vector<Observation>& observations, std::vector<double>* h_of_z) {
  const std::size_t d = z.size();
  std::size_t rows = 0;
  for (const auto& o : observations)
    for (bool m : o.mask) rows += m ? 1 : 0;
  Tensor G({rows, d});
  if (h_of_z) h_of_z->assign(rows, 0.0);
  std::size_t row = 0;
  for (const auto& o : observations) {
    const QueryPoint p = o.p;
    const auto batch = field.prepare(std::span<const QueryPoint>(&p, 1));
    ad::Graph g;
    ad::Var zv = g.leaf(Tensor({1, d}, std::vector<double>(z.begin(), z.end())), true);
    ad::Var pred = field.decode(g, *batch, zv);
    for (std::size_t c = 0; c < 3; ++c) {
      if (!o.mask[c]) continue;
      ad::Var s = ad::pick(pred, c);
      g.backward(s);
      const Tensor gz = g.grad(zv);
      std::copy(gz.data().begin(), gz.data().end(), &G.at(row, 0));
      if (h_of_z) (*h_of_z)[row] = pred.value()[c];
      ++row;
    }
  }
  return G;
}

LinearizedUpdate linearized_update(const LatentField& field, std::span<const double> z0,
                                   const std::vector<Observation>& observations, const prior::PriorStats& prior,
                                   std::span<const double> mean) {
  const std::size_t d = z0.size();
  if (prior.dim() != d || field.latent_dim() != d) throw std::invalid_argument("latent, field and prior dimensions differ");
  std::vector<double> mu(mean.begin(), mean.end());
  if (mu.empty()) mu.assign(d, 0.0);
  if (mu.size() != d) throw std::invalid_argument("prior mean length mismatch");
  for (const auto& o : observations) o.validate();

  LinearizedUpdate u;
  std::vector<double> h0;
  u.jacobian = observation_jacobian(field, z0, observations, &h0);
  const Tensor& G = u.jacobian;
  const std::size_t m = G.rows();
  std::vector<double> rinv(m);
  u.residual.resize(m);
  {
    std::size_t row = 0;
    for (const auto& o : observations)
      for (std::size_t c = 0; c < 3; ++c) {
        if (!o.mask[c]) continue;
        u.residual[row] = o.y[c] - h0[row];
        rinv[row] = 1.0 / o.variance[c];
        ++row;
      }
  }
  if (m == 0) {
    u.delta = mu;
    u.delta_gain = mu;
    return u;
  }

  // Normal form, whitened with B = L L^T: (I + L^T G^T R^-1 G L) eta = L^-1 mu + L^T G^T R^-1 r, delta = L eta.
  const Tensor& L = prior.chol.factor();
  const Tensor GL = linalg::matmul(G, L);  // [m, d]
  Tensor A = Tensor::identity(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += GL.at(k, i) * rinv[k] * GL.at(k, j);
      A.at(i, j) += s;
      if (j != i) A.at(j, i) += s;
    }
  std::vector<double> wr(m);
  for (std::size_t k = 0; k < m; ++k) wr[k] = rinv[k] * u.residual[k];
  std::vector<double> rhs = linalg::matvec_transposed(GL, wr);
  const std::vector<double> lmu = prior.chol.solve_lower(mu);
  for (std::size_t i = 0; i < d; ++i) rhs[i] += lmu[i];
  try {
    const std::vector<double> eta = linalg::Cholesky(A).solve(rhs);
    u.delta = linalg::matvec(L, eta);
  } catch (const linalg::NotPositiveDefinite& e) {
    throw std::logic_error(std::string("normal matrix is not positive definite: ") + e.what());
  }

  // Gain form: delta = mu + B G^T (G B G^T + R)^-1 (r - G mu).
  Tensor S = linalg::matmul(GL, linalg::transpose(GL));
  for (std::size_t k = 0; k < m; ++k) S.at(k, k) += 1.0 / rinv[k];
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < i; ++j) S.at(i, j) = S.at(j, i) = 0.5 * (S.at(i, j) + S.at(j, i));
  std::vector<double> innov = u.residual;
  const std::vector<double> gmu = linalg::matvec(G, mu);
  for (std::size_t k = 0; k < m; ++k) innov[k] -= gmu[k];
  const std::vector<double> s = linalg::Cholesky(S).solve(innov);
  const std::vector<double> bgs = linalg::matvec(prior.B_z, linalg::matvec_transposed(G, s));
  u.delta_gain.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    u.delta_gain[i] = mu[i] + bgs[i];
    u.form_gap = std::max(u.form_gap, std::abs(u.delta_gain[i] - u.delta[i]));
  }
  return u;
}

io::CsvTable trace_table(const std::vector<TraceRow>& trace) {
  io::CsvTable t;
  t.header = {"step", "objective", "grad_norm"};
  for (const auto& r : trace) t.rows.push_back({std::to_string(r.step), io::format_double(r.objective), io::format_double(r.grad_norm)});
  return t;
}

}  // namespace windinr::correction
