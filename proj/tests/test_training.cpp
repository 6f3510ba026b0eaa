#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include "doctest.h"
#include "windinr/rng.hpp"
#include "windinr/training.hpp"

using namespace windinr;
using namespace windinr::training;
using model::Block;
using model::WindModel;

namespace {

model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.hidden = 16;
  c.film_blocks = 1;
  return c;
}

synth::Dataset tiny_dataset(std::size_t cases, std::size_t lattice) {
  synth::GenerateOptions o;
  o.cases = cases;
  o.resolution = 16;
  o.case_options.lattice = lattice;
  o.seed = 3;
  return synth::generate_dataset(o);
}

StageConfig tiny_stage() {
  StageConfig s;
  s.m_sup = 24;
  s.m_qry = 48;
  s.epochs = 2;
  s.seed = 11;
  return s;
}

void randomize_head(WindModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (double& v : m.params().at("dec.head2.W").data()) v = uniform(rng, -0.2, 0.2);
}

double mean_alignment_gap(const synth::Dataset& d, const WindModel& m, const StageConfig& cfg) {
  double s = 0.0;
  for (std::size_t ci : d.splits.train) {
    const auto in = model::make_inputs(d.terrain, d.cases[ci]);
    ad::Graph g;
    model::ParamBinding w(g, m.params(), model::no_blocks);
    const CaseGraph cg = stage2_case(w, m, in, d.cases[ci], fixed_draw(d.cases[ci], ci, cfg), cfg.lambda_align);
    const Tensor& a = cg.z_bg.value();
    const Tensor& b = cg.z_ref.value();
    double n2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) n2 += (a[i] - b[i]) * (a[i] - b[i]);
    s += std::sqrt(n2);
  }
  return s / static_cast<double>(d.splits.train.size());
}

}  // namespace

TEST_CASE("support and query sampling") {
  const auto sq = sample_support_query(5, 2, 3, 9);
  std::set<std::size_t> all(sq.support.begin(), sq.support.end());
  all.insert(sq.query.begin(), sq.query.end());
  CHECK(sq.support.size() == 2);
  CHECK(sq.query.size() == 3);
  CHECK(all == std::set<std::size_t>{0, 1, 2, 3, 4});

  const auto a = sample_support_query(4096, 256, 1024, 77);
  const auto b = sample_support_query(4096, 256, 1024, 77);
  CHECK(a.support == b.support);
  CHECK(a.query == b.query);
  std::set<std::size_t> s(a.support.begin(), a.support.end());
  for (std::size_t q : a.query) CHECK(s.count(q) == 0);
  CHECK(sample_support_query(4096, 256, 1024, 78).query != a.query);

  CHECK_THROWS_AS(sample_support_query(10, 6, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_support_query(10, 0, 5, 1), std::invalid_argument);
}

TEST_CASE("reconstruction losses") {
  model::NormStats unit;
  Tensor labels = Tensor::matrix(2, 3, {1, 2, 3, -1, 0, 4});
  std::vector<double> z(128, 0.0);
  CHECK(loss_ref(labels, labels, unit, z, 1e-4) == 0.0);

  z[0] = 10.0;  // ||z||^2 = 100
  CHECK(loss_ref(labels, labels, unit, z, 1e-4) == doctest::Approx(0.01).epsilon(1e-14));

  const double e[3] = {0.5, -1.0, 2.0};
  Tensor pred = labels;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c) pred.at(i, c) += e[c];
  const double e2 = 0.25 + 1.0 + 4.0;
  CHECK(loss_ref(pred, labels, unit, z, 1e-4) == doctest::Approx(e2 / 3.0 + 0.01).epsilon(1e-14));

  model::NormStats scaled;
  scaled.std = {2.0, 2.0, 0.5};
  const double e2s = 0.25 / 4 + 1.0 / 4 + 4.0 / 0.25;
  CHECK(loss_ref(pred, labels, scaled, z, 0.0) == doctest::Approx(e2s / 3.0).epsilon(1e-14));

  std::vector<double> zb(128, 0.0), zr(128, 0.0);
  CHECK(loss_beta(labels, labels, unit, zb, zr, 1.0) == 0.0);
  zb[5] = 2.0;  // ||z_bg - z_ref||^2 = 4
  CHECK(loss_beta(labels, labels, unit, zb, zr, 1.0) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(loss_beta(pred, labels, unit, zb, zr, 0.0) == doctest::Approx(loss_ref(pred, labels, unit, zr, 0.0)));

  ad::Graph g;
  ad::Var p = g.leaf(pred, true);
  ad::Var zv = g.leaf(Tensor({1, 128}, z), true);
  CHECK(loss_ref(p, labels, scaled, zv, 1e-4).value().item() ==
        doctest::Approx(loss_ref(pred, labels, scaled, z, 1e-4)).epsilon(1e-14));
}

TEST_CASE("stage losses match finite differences in the parameters") {
  const auto d = tiny_dataset(3, 5);
  WindModel m(tiny_config(), 5);
  randomize_head(m, 6);
  m.set_norm(model::label_stats(d.cases, d.splits.train));
  const auto in = model::make_inputs(d.terrain, d.cases[0]);
  const StageConfig cfg = tiny_stage();
  const auto sq = fixed_draw(d.cases[0], 0, cfg);

  for (int stage : {1, 2}) {
    auto loss_at = [&](const WindModel& mm) {
      ad::Graph g;
      model::ParamBinding w(g, mm.params(), model::no_blocks);
      return (stage == 1 ? stage1_case(w, mm, in, d.cases[0], sq, 0.3) : stage2_case(w, mm, in, d.cases[0], sq, 0.7))
          .loss.value()
          .item();
    };
    ad::Graph g;
    model::ParamBinding w(g, m.params(), model::all_blocks);
    const CaseGraph cg =
        stage == 1 ? stage1_case(w, m, in, d.cases[0], sq, 0.3) : stage2_case(w, m, in, d.cases[0], sq, 0.7);
    g.backward(cg.loss);
    const auto grads = w.gradients();

    const std::vector<std::string> names = stage == 1
        ? std::vector<std::string>{"terrain.rb0.conv1.W", "lr.rb1.skip.W", "ref.point1.W", "ref.score.W",
                                   "ref.out2.W", "dec.in.W", "dec.film0.gen.W", "dec.head2.W", "dec.seed1.W"}
        : std::vector<std::string>{"noobs.l1.W", "noobs.l3.W", "noobs.l3.b", "dec.head1.W"};
    Rng rng(stage);
    for (const auto& name : names) {
      INFO(name);
      REQUIRE(grads.count(name));
      const Tensor& gt = grads.at(name);
      for (int k = 0; k < 4; ++k) {
        const std::size_t i = static_cast<std::size_t>(uniform(rng, 0, 1) * static_cast<double>(gt.size())) % gt.size();
        const double h = 1e-5;
        WindModel a = m, b = m;
        a.params().at(name)[i] += h;
        b.params().at(name)[i] -= h;
        const double fd = (loss_at(a) - loss_at(b)) / (2 * h);
        CHECK(std::abs(fd - gt[i]) <= 1e-6 + 1e-4 * std::abs(gt[i]));
      }
    }
  }
}

TEST_CASE("stage 1 with zero learning rate leaves parameters unchanged") {
  const auto d = tiny_dataset(6, 5);
  StageConfig cfg = tiny_stage();
  cfg.lr = 0.0;
  WindModel m(tiny_config(), 1);
  const auto before = m.params().flatten();
  const StageResult r = train_stage1(d, m, cfg);
  CHECK(r.steps > 0);
  CHECK(r.best.params().flatten() == before);
}

TEST_CASE("stage 1 keeps the best validation checkpoint and is deterministic") {
  const auto d = tiny_dataset(10, 5);
  StageConfig cfg = tiny_stage();
  cfg.epochs = 4;
  cfg.lr = 5e-3;
  const StageResult r1 = train_stage1(d, WindModel(tiny_config(), 2), cfg);
  const StageResult r2 = train_stage1(d, WindModel(tiny_config(), 2), cfg);
  CHECK(r1.best.params().flatten() == r2.best.params().flatten());
  CHECK(r1.best_val <= r1.final_val);
  double min_val = r1.curve.front().val_loss;
  for (const auto& row : r1.curve) min_val = std::min(min_val, row.val_loss);
  CHECK(r1.best_val == min_val);
  CHECK(validation_loss(1, d, r1.best, cfg) == doctest::Approx(r1.best_val).epsilon(1e-12));
  CHECK(r1.curve.size() == 5);

  const io::CsvTable t = curve_table(r1.curve);
  CHECK(t.header == std::vector<std::string>{"step", "train_loss", "val_loss"});
  CHECK(t.rows.size() == 5);
}

TEST_CASE("single-case overfit reduces the reference loss tenfold") {
  synth::Dataset d = tiny_dataset(3, 16);
  d.splits.train = {0};
  d.splits.val = {0};
  StageConfig cfg;
  cfg.m_sup = 256;
  cfg.m_qry = 1024;
  cfg.epochs = 500;
  cfg.eval_every = 500;
  cfg.batch = 1;
  cfg.seed = 4;
  model::ModelConfig mc;
  mc.hidden = 64;
  mc.film_blocks = 2;
  const auto t0 = std::chrono::steady_clock::now();
  const StageResult r = train_stage1(d, WindModel(mc, 3), cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("overfit: %zu steps, val %.5f -> %.5f (%.1f s)\n", r.steps, r.curve.front().val_loss, r.best_val, secs);
  CHECK(r.steps == 500);
  CHECK(r.curve.front().val_loss >= 10.0 * r.best_val);
}

TEST_CASE("stage 2 trains only the no-observation predictor") {
  const auto d = tiny_dataset(10, 5);
  StageConfig cfg = tiny_stage();
  cfg.lr = 5e-3;
  cfg.epochs = 2;
  const StageResult s1 = train_stage1(d, WindModel(tiny_config(), 8), cfg);
  WindModel m = s1.best;
  randomize_head(m, 9);

  SUBCASE("frozen blocks are bitwise unchanged") {
    cfg.epochs = 3;
    const StageResult s2 = train_stage2(d, m, cfg);
    for (Block b : model::kBlocks) {
      if (b == Block::noobs_predictor)
        CHECK(s2.best.params().hash(b) != m.params().hash(b));
      else
        CHECK(s2.best.params().hash(b) == m.params().hash(b));
    }
  }
  SUBCASE("zero steps leave the predictor unchanged") {
    cfg.epochs = 0;
    const StageResult s2 = train_stage2(d, m, cfg);
    CHECK(s2.steps == 0);
    CHECK(s2.best.params().hash() == m.params().hash());
  }
  SUBCASE("alignment gap decreases") {
    cfg.epochs = 20;
    cfg.lr = 2e-3;
    const double before = mean_alignment_gap(d, m, cfg);
    const StageResult s2 = train_stage2(d, m, cfg);
    const double after = mean_alignment_gap(d, s2.best, cfg);
    std::printf("alignment gap %.5f -> %.5f\n", before, after);
    CHECK(after < before);
  }
}
