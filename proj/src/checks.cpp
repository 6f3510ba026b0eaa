#include "windinr/checks.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "windinr/correction.hpp"
#include "windinr/rng.hpp"
#include "windinr/training.hpp"

namespace windinr::checks {

namespace {

using Clock = std::chrono::steady_clock;
using correction::Observation;

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

double max_gap(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor random_spd(std::size_t d, Rng& rng, double lo, double hi) {
  Tensor a({d, d});
  for (double& v : a.data()) v = uniform(rng, -1, 1);
  Tensor s = linalg::matmul(a, linalg::transpose(a));
  for (double& v : s.data()) v *= (hi - lo) / static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) s.at(i, i) += lo;
  return s;
}

std::vector<Observation> random_observations(std::size_t n, Rng& rng) {
  std::vector<Observation> obs(n);
  for (auto& o : obs) {
    o.p = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, 0, 1)};
    for (double& y : o.y) y = uniform(rng, -1, 1);
    o.mask = {uniform(rng, 0, 1) < 0.8, true, uniform(rng, 0, 1) < 0.6};
    for (double& v : o.variance) v = uniform(rng, 0.1, 0.5);
  }
  return obs;
}

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.hidden = 16;
  c.film_blocks = 1;
  return c;
}

template <class Fn>
CheckResult timed(const char* name, Fn&& fn) {
  const auto t0 = Clock::now();
  CheckResult r;
  r.name = name;
  try {
    fn(r);
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

}  // namespace

CheckResult gradient_suite(std::size_t instances, std::uint64_t seed) {
  return timed("gradients", [&](CheckResult& r) {
    synth::GenerateOptions o;
    o.cases = 3;
    o.resolution = 16;
    o.case_options.lattice = 5;
    o.seed = seed;
    const synth::Dataset d = synth::generate_dataset(o);
    training::StageConfig cfg;
    cfg.m_sup = 16;
    cfg.m_qry = 32;
    const double h = 1e-5;
    double worst[3] = {0, 0, 0};
    std::size_t probes = 0;

    for (std::size_t inst = 0; inst < instances; ++inst) {
      Rng rng(mix_seed(seed, inst));
      model::WindModel m(tiny_model(), mix_seed(seed, 1000 + inst));
      for (const char* name : {"dec.head2.W", "ref.out2.W", "noobs.l3.W"})
        for (double& v : m.params().at(name).data()) v = uniform(rng, -0.3, 0.3);
      m.set_norm(model::label_stats(d.cases, d.splits.train));
      const std::size_t ci = inst % d.cases.size();
      const synth::Case& c = d.cases[ci];
      const auto in = model::make_inputs(d.terrain, c);
      cfg.seed = mix_seed(seed, 2000 + inst);
      const auto sq = training::fixed_draw(c, ci, cfg);

      for (int stage : {1, 2}) {
        auto loss_at = [&](const model::WindModel& mm) {
          ad::Graph g;
          model::ParamBinding w(g, mm.params(), model::no_blocks);
          return (stage == 1 ? training::stage1_case(w, mm, in, c, sq, 1e-2)
                             : training::stage2_case(w, mm, in, c, sq, 1.0))
              .loss.value()
              .item();
        };
        ad::Graph g;
        model::ParamBinding w(g, m.params(), model::all_blocks);
        const auto cg = stage == 1 ? training::stage1_case(w, m, in, c, sq, 1e-2)
                                   : training::stage2_case(w, m, in, c, sq, 1.0);
        g.backward(cg.loss);
        const auto grads = w.gradients();
        std::vector<std::string> names;
        for (const auto& [name, t] : grads) names.push_back(name);
        for (int k = 0; k < 4; ++k) {
          const std::string& name =
              names[static_cast<std::size_t>(uniform(rng, 0, 1) * static_cast<double>(names.size())) % names.size()];
          const Tensor& gt = grads.at(name);
          const std::size_t i =
              static_cast<std::size_t>(uniform(rng, 0, 1) * static_cast<double>(gt.size())) % gt.size();
          model::WindModel a = m, b = m;
          a.params().at(name)[i] += h;
          b.params().at(name)[i] -= h;
          const double fd = (loss_at(a) - loss_at(b)) / (2 * h);
          worst[stage - 1] = std::max(worst[stage - 1], rel_error(gt[i], fd));
          ++probes;
        }
      }

      // correction objective: neural field and linear field
      const auto field = std::make_shared<model::NeuralField>(m, in);
      const LinearField lin(8, mix_seed(seed, 3000 + inst), 0.7);
      const auto obs = random_observations(5, rng);
      for (int which = 0; which < 2; ++which) {
        const LatentField& f = which == 0 ? static_cast<const LatentField&>(*field) : lin;
        const std::size_t dim = f.latent_dim();
        const prior::PriorStats p = prior::custom_prior(random_spd(dim, rng, 0.05, 0.5));
        std::vector<double> z0(dim), xi(dim), grad(dim);
        for (double& x : z0) x = uniform(rng, -0.5, 0.5);
        for (double& x : xi) x = uniform(rng, -0.3, 0.3);
        const correction::Objective J(f, p, z0, obs);
        J.value_and_gradient(xi, grad);
        for (int k = 0; k < 6; ++k) {
          const std::size_t i = static_cast<std::size_t>(uniform(rng, 0, 1) * static_cast<double>(dim)) % dim;
          std::vector<double> a = xi, b = xi;
          a[i] += h;
          b[i] -= h;
          const double fd = (J.value(a) - J.value(b)) / (2 * h);
          worst[2] = std::max(worst[2], rel_error(grad[i], fd));
          ++probes;
        }
      }
    }
    const double w = std::max({worst[0], worst[1], worst[2]});
    r.pass = w < 1e-4 && instances >= 1;
    r.detail = std::to_string(instances) + " instances, " + std::to_string(probes) + " probes; max rel error stage1 " +
               fmt("%.2e", worst[0]) + ", stage2 " + fmt("%.2e", worst[1]) + ", J " + fmt("%.2e", worst[2]);
  });
}

CheckResult oracle_suite(std::size_t instances, std::uint64_t seed, std::size_t adam_steps) {
  return timed("linearized oracle", [&](CheckResult& r) {
    double form = 0.0, conv = 0.0, stationary = 0.0;
    for (std::size_t inst = 0; inst < instances; ++inst) {
      Rng rng(mix_seed(seed, inst));
      const std::size_t d = 2 + inst % 15;
      const std::size_t n = 1 + inst % 8;
      const LinearField f(d, mix_seed(seed, 500 + inst), uniform(rng, 0.2, 1.0));
      const prior::PriorStats p = prior::custom_prior(random_spd(d, rng, 0.02, 0.3));
      std::vector<double> z0(d);
      for (double& x : z0) x = uniform(rng, -0.5, 0.5);
      auto obs = random_observations(n, rng);
      const correction::LinearizedUpdate lin = correction::linearized_update(f, z0, obs, p);
      form = std::max(form, lin.form_gap);

      const correction::Objective J(f, p, z0, obs);
      std::vector<double> g(d);
      J.value_and_gradient(lin.delta, g);
      for (double v : g) stationary = std::max(stationary, std::abs(v));

      correction::CorrectionConfig cfg;
      cfg.steps = adam_steps;
      const auto c = correction::correct_latent(f, z0, obs, p, cfg);
      std::vector<double> target(d);
      for (std::size_t i = 0; i < d; ++i) target[i] = z0[i] + lin.delta[i];
      conv = std::max(conv, max_gap(c.z, target));
    }
    r.pass = form <= 1e-8 && conv <= 1e-6 && instances >= 1;
    r.detail = std::to_string(instances) + " instances; normal vs gain form " + fmt("%.2e", form) +
               ", Adam (" + std::to_string(adam_steps) + " steps) vs closed form " + fmt("%.2e", conv) +
               ", gradient at closed form " + fmt("%.2e", stationary);
  });
}

CheckResult mean_shift_suite(std::size_t instances, std::uint64_t seed) {
  return timed("mean shift", [&](CheckResult& r) {
    double gap = 0.0, lin_gap = 0.0;
    for (std::size_t inst = 0; inst < instances; ++inst) {
      Rng rng(mix_seed(seed, inst));
      const std::size_t d = 2 + inst % 15;
      const LinearField f(d, mix_seed(seed, 700 + inst), 0.6);
      prior::Discrepancies e(d + 8, std::vector<double>(d));
      for (auto& v : e)
        for (double& x : v) x = 0.3 * standard_normal(rng) + uniform(rng, -0.3, 0.3);
      const prior::PriorStats p = prior::estimate_prior(e);
      std::vector<double> z_bg(d), mu(d);
      for (double& x : z_bg) x = uniform(rng, -1, 1);
      for (std::size_t i = 0; i < d; ++i) mu[i] = -p.b_z[i];
      const auto obs = random_observations(1 + inst % 8, rng);
      const std::vector<double> z0 = prior::bias_correct(z_bg, p);
      const auto a = correction::correct_latent(f, z0, obs, p);
      const auto b = correction::correct_latent(f, z_bg, obs, p, {}, mu);
      gap = std::max(gap, max_gap(a.z, b.z));
      const auto la = correction::linearized_update(f, z0, obs, p);
      const auto lb = correction::linearized_update(f, z_bg, obs, p, mu);
      for (std::size_t i = 0; i < d; ++i)
        lin_gap = std::max(lin_gap, std::abs((z0[i] + la.delta[i]) - (z_bg[i] + lb.delta[i])));
    }
    r.pass = gap <= 1e-8 && lin_gap <= 1e-8 && instances >= 1;
    r.detail = std::to_string(instances) + " instances; 20-step corrected latents differ by " + fmt("%.2e", gap) +
               ", closed forms by " + fmt("%.2e", lin_gap);
  });
}

CheckResult prior_suite(std::uint64_t seed) {
  return timed("prior arithmetic", [&](CheckResult& r) {
    const prior::PriorStats p = prior::estimate_prior({{1, 0}, {3, 0}});
    const double hand = std::max({std::abs(p.b_z[0] - 2.0), std::abs(p.b_z[1]), std::abs(p.B_z.at(0, 0) - 2.0001),
                                  std::abs(p.B_z.at(1, 1) - 1e-4), std::abs(p.B_z.at(0, 1)), std::abs(p.B_z.at(1, 0))});
    bool chol_ok = true;
    double identity = 0.0;
    for (std::size_t k = 0; k < 40; ++k) {
      Rng rng(mix_seed(seed, k));
      const std::size_t d = 1 + k % 16, n = 2 + k % 7;
      prior::Discrepancies e(n, std::vector<double>(d));
      for (auto& v : e)
        for (double& x : v) x = standard_normal(rng) * uniform(rng, 0.01, 3.0);
      const prior::PriorStats q = prior::estimate_prior(e);
      chol_ok = chol_ok && q.chol.min_pivot() > 0.0;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          const double expect =
              (1 - q.rho) * q.sigma_z.at(i, j) + (i == j ? q.rho * q.sigma_z.at(i, i) + q.eps : 0.0);
          identity = std::max(identity, std::abs(q.B_z.at(i, j) - expect) / std::max(1.0, std::abs(expect)));
        }
    }
    r.pass = hand <= 1e-12 && chol_ok && identity <= 1e-15;
    r.detail = "hand example error " + fmt("%.2e", hand) + ", Cholesky " + (chol_ok ? "ok" : "FAILED") +
               " on 40 samples, shrinkage identity " + fmt("%.2e", identity);
  });
}

}  // namespace windinr::checks
