#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "windinr/model.hpp"
#include "windinr/rng.hpp"

using namespace windinr;
using namespace windinr::model;
using ad::Var;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.hidden = 32;
  c.film_blocks = 2;
  return c;
}

CaseInputs random_inputs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  CaseInputs in;
  in.terrain_n = n;
  in.terrain = Tensor({n * n, 3});
  for (double& v : in.terrain.data()) v = uniform(rng, -1, 1);
  in.lr = Tensor({36, 3});
  for (std::size_t i = 0; i < 36; ++i) {
    in.lr.at(i, 0) = uniform(rng, -10, 10);
    in.lr.at(i, 1) = uniform(rng, -10, 10);
    in.lr.at(i, 2) = 1.0;
  }
  return in;
}

void randomize_head(WindModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (double& v : m.params().at("dec.head2.W").data()) v = uniform(rng, -0.2, 0.2);
}

std::vector<QueryPoint> random_points(std::size_t n, Rng& rng) {
  std::vector<QueryPoint> p(n);
  for (auto& q : p) q = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, 0, 1)};
  return p;
}

}  // namespace

TEST_CASE("coordinate encoding") {
  const auto e = encode_coordinates({0.0, 0.0, 0.0});
  CHECK(e.size() == 63);
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(e[k] == 0.0);        // sin rx
    CHECK(e[10 + k] == 1.0);   // cos rx
    CHECK(e[20 + k] == 0.0);   // sin ry
    CHECK(e[30 + k] == 1.0);   // cos ry
  }
  CHECK(e[40] == 0.0);
  CHECK(e[41] == 0.0);
  CHECK(e[42] == 0.0);
  for (std::size_t k = 0; k < 20; ++k) {
    const auto c = encode_coordinates({0.3, -0.2, static_cast<double>(k) / 19.0});
    CHECK(c[43 + k] == doctest::Approx(1.0).epsilon(1e-15));
    if (k > 0) CHECK(c[43 + k - 1] < 1.0);
  }
  const auto h = encode_coordinates({0.1, 0.1, 0.5});
  CHECK(h[40] == 0.5);
  CHECK(h[41] == 0.25);
  CHECK(h[42] == 0.125);
  const std::size_t before = clamp_count();
  const auto clamped = encode_coordinates({1.5, 0.0, -0.1});
  CHECK(clamp_count() == before + 1);
  CHECK(clamped[0] == doctest::Approx(std::sin(std::numbers::pi)));
}

TEST_CASE("dimension anchors") {
  CHECK(kCoordDim == 63);
  CHECK(kQueryFeatureDim == 161);
  CHECK(kLatentDim == 128);
  const WindModel m(small_config(), 1);
  CHECK(m.query_feature_dim() == 161);
  CHECK(m.latent_dim() == 128);
}

TEST_CASE("height factor") {
  CHECK(height_factor(0.0, 0.3) == 1.0);
  CHECK(height_factor(0.3, 0.3) == doctest::Approx(0.36787944117144233).epsilon(1e-15));
}

TEST_CASE("parameter blocks flatten and unflatten exactly") {
  WindModel m(small_config(), 3);
  ModelParams& p = m.params();
  std::size_t total = 0;
  for (Block b : kBlocks) {
    CHECK(p.count(b) > 0);
    total += p.count(b);
  }
  CHECK(total == p.count());
  const auto flat = p.flatten();
  const auto h = p.hash();
  std::vector<double> other(flat.size(), 0.5);
  p.unflatten(other);
  CHECK(p.hash() != h);
  p.unflatten(flat);
  CHECK(p.hash() == h);
  CHECK(p.flatten() == flat);
  CHECK_THROWS_AS(p.unflatten(std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("context encoders") {
  const WindModel m(small_config(), 5);
  SUBCASE("zero inputs give zero feature maps") {
    CaseInputs in;
    in.terrain_n = 16;
    in.terrain = Tensor({256, 3});
    in.lr = Tensor({36, 3});
    ad::Graph g;
    ParamBinding w(g, m.params(), no_blocks);
    const Context ctx = encode_context(w, m.config(), in);
    CHECK(ctx.f_s.cols() == 64);
    CHECK(ctx.f_lr.cols() == 32);
    CHECK(ctx.f_s.rows() == 256);
    for (double v : ctx.f_s.value().data()) REQUIRE(v == 0.0);
    for (double v : ctx.f_lr.value().data()) REQUIRE(v == 0.0);
  }
  SUBCASE("periodic padding makes the encoder shift-equivariant") {
    const CaseInputs in = random_inputs(16, 2);
    CaseInputs shifted = in;
    const std::size_t n = 16;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          shifted.terrain.at(y * n + (x + 3) % n, c) = in.terrain.at(y * n + x, c);
    ad::Graph g;
    ParamBinding w(g, m.params(), no_blocks);
    const Context a = encode_context(w, m.config(), in, kernels::Padding::periodic);
    const Context b = encode_context(w, m.config(), shifted, kernels::Padding::periodic);
    double worst = 0.0;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t c = 0; c < 64; ++c)
          worst = std::max(worst, std::abs(b.f_s.value().at(y * n + (x + 3) % n, c) - a.f_s.value().at(y * n + x, c)));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("query features sample the maps bilinearly with aligned corners") {
  const WindModel m(small_config(), 7);
  CaseInputs in = random_inputs(16, 3);
  ad::Graph g;
  Context ctx;
  ctx.inputs = &in;
  Tensor fs({256, 64}), fl({36, 32});
  for (std::size_t i = 0; i < fs.size(); ++i) fs[i] = static_cast<double>(i % 977) * 0.01;
  for (std::size_t i = 0; i < fl.size(); ++i) fl[i] = 2.5;
  ctx.f_s = g.constant(fs);
  ctx.f_lr = g.constant(fl);
  ctx.global = g.constant(Tensor({1, 192}));
  // node (x=5, y=9) of the 16x16 map
  const double rx = -1.0 + 2.0 * 5 / 15, ry = -1.0 + 2.0 * 9 / 15;
  const std::vector<QueryPoint> pts = {{rx, ry, 0.2}, {0.123, -0.456, 0.7}, {-3.0, 5.0, 0.1}};
  const QueryFeatures q = query_features(ctx, m, pts);
  REQUIRE(q.features.cols() == 161);
  const Tensor& f = q.features.value();
  for (std::size_t c = 0; c < 64; ++c) CHECK(f.at(0, c) == doctest::Approx(fs.at(9 * 16 + 5, c)).epsilon(1e-13));
  for (std::size_t c = 0; c < 32; ++c) CHECK(f.at(1, 64 + c) == doctest::Approx(2.5).epsilon(1e-14));
  // outside the domain clamps to the corner node (x = 0, y = 15)
  for (std::size_t c = 0; c < 64; ++c) CHECK(f.at(2, c) == doctest::Approx(fs.at(15 * 16 + 0, c)).epsilon(1e-13));
  const auto enc = encode_coordinates(pts[1]);
  for (std::size_t k = 0; k < 63; ++k) CHECK(f.at(1, 98 + k) == enc[k]);
  // the baseline uses the damped LR wind; w baseline is zero
  CHECK(q.baseline.at(2, 2) == 0.0);
  CHECK(q.baseline.at(2, 0) == doctest::Approx(height_factor(0.1, 0.3) * in.lr.at(5 * 6 + 0, 0)));
}

TEST_CASE("reference encoder is permutation and duplication invariant") {
  const WindModel m(small_config(), 9);
  const CaseInputs in = random_inputs(16, 4);
  Rng rng(5);
  const auto pts = random_points(12, rng);
  Tensor labels({12, 3});
  for (double& v : labels.data()) v = uniform(rng, -1, 1);

  auto encode = [&](const std::vector<std::size_t>& order) {
    ad::Graph g;
    ParamBinding w(g, m.params(), no_blocks);
    const Context ctx = encode_context(w, m.config(), in);
    std::vector<QueryPoint> p;
    Tensor l({order.size(), 3});
    for (std::size_t i = 0; i < order.size(); ++i) {
      p.push_back(pts[order[i]]);
      for (int c = 0; c < 3; ++c) l.at(i, c) = labels.at(order[i], c);
    }
    const QueryFeatures q = query_features(ctx, m, p);
    return reference_encode(w, ctx, q.features, l).value();
  };
  std::vector<std::size_t> idx(12);
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor base = encode(idx);
  CHECK(base.size() == 128);
  std::vector<std::size_t> perm = {3, 7, 1, 0, 11, 5, 9, 2, 8, 10, 4, 6};
  CHECK(max_abs_diff(encode(perm), base) < 1e-12);
  std::vector<std::size_t> dup = idx;
  dup.insert(dup.end(), idx.begin(), idx.end());
  CHECK(max_abs_diff(encode(dup), base) < 1e-12);
  // a single point repeated is the same as the point alone
  CHECK(max_abs_diff(encode({4, 4, 4}), encode({4})) < 1e-12);

  ad::Graph g;
  ParamBinding w(g, m.params(), no_blocks);
  const Context ctx = encode_context(w, m.config(), in);
  CHECK_THROWS_AS(reference_encode(w, ctx, g.constant(Tensor({0, 161})), Tensor({0, 3})), std::invalid_argument);
}

TEST_CASE("no-observation predictor depends only on the global descriptor") {
  const WindModel m(small_config(), 11);
  Rng rng(3);
  Tensor fs({64, 64}), fl({36, 32});
  for (double& v : fs.data()) v = uniform(rng, -1, 1);
  for (double& v : fl.data()) v = uniform(rng, -1, 1);
  auto predict = [&](const Tensor& a, const Tensor& b) {
    ad::Graph g;
    ParamBinding w(g, m.params(), no_blocks);
    Context ctx;
    ctx.f_s = g.constant(a);
    ctx.f_lr = g.constant(b);
    // same descriptor construction as encode_context
    auto ms = [](Var f) {
      Var mean = ad::mean_rows(f);
      Var sd = ad::affine(ad::sqrt_eps(ad::mean_rows(ad::square(ad::sub_rowvec(f, mean))), 1e-6), 1.0, -1e-3);
      return ad::concat_cols({mean, sd});
    };
    ctx.global = ad::concat_cols({ms(ctx.f_s), ms(ctx.f_lr)});
    return predict_no_obs(w, ctx).value();
  };
  const Tensor z = predict(fs, fl);
  CHECK(z.size() == 128);
  CHECK(predict(fs, fl) == z);
  Tensor permuted({64, 64});
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 64; ++c) permuted.at(r, c) = fs.at((r * 37 + 5) % 64, c);
  CHECK(max_abs_diff(predict(permuted, fl), z) < 1e-12);
}

TEST_CASE("untrained decoder reproduces the damped LR baseline") {
  const WindModel m(small_config(), 13);
  const CaseInputs in = random_inputs(16, 6);
  const NeuralField field(m, in);
  Rng rng(8);
  const auto pts = random_points(20, rng);
  const Tensor y = predict_at(field, field.z_background(), pts);
  ad::Graph g;
  ParamBinding w(g, m.params(), no_blocks);
  const Context ctx = encode_context(w, m.config(), in);
  const QueryFeatures q = query_features(ctx, m, pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(y.at(i, 0) == q.baseline.at(i, 0));
    CHECK(y.at(i, 1) == q.baseline.at(i, 1));
    CHECK(y.at(i, 2) == 0.0);
  }
}

TEST_CASE("decode is differentiable in the latent") {
  WindModel m(small_config(), 15);
  randomize_head(m, 1);
  const NeuralField field(m, random_inputs(16, 7));
  Rng rng(9);
  const auto pts = random_points(6, rng);
  const auto batch = field.prepare(pts);
  Tensor weights({6, 3});
  for (double& v : weights.data()) v = uniform(rng, -1, 1);
  const ad::Expression f = [&](ad::Graph& g) {
    return ad::sum(ad::mul(field.decode(g, *batch, g.input("z")), g.constant(weights)));
  };
  Tensor z({1, 128});
  for (double& v : z.data()) v = uniform(rng, -1, 1);
  CHECK(ad::finite_diff_check(f, {{"z", z}}, "z", 1e-4) < 1e-4);
}

TEST_CASE("chunked prediction matches single-point decoding") {
  WindModel m(small_config(), 17);
  randomize_head(m, 2);
  const NeuralField field(m, random_inputs(16, 8));
  Rng rng(10);
  const auto pts = random_points(37, rng);
  const Tensor a = predict_at(field, field.z_background(), pts, 1);
  const Tensor b = predict_at(field, field.z_background(), pts, 1000);
  CHECK(max_abs_diff(a, b) < 1e-12);
  const Tensor one = predict_at(field, field.z_background(), std::span(pts).subspan(5, 1));
  for (int c = 0; c < 3; ++c) CHECK(one.at(0, c) == doctest::Approx(b.at(5, c)).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip") {
  WindModel m(small_config(), 19);
  randomize_head(m, 3);
  NormStats ns;
  ns.mean = {1, 2, 3};
  ns.std = {4, 5, 6};
  m.set_norm(ns);
  const auto path = std::filesystem::temp_directory_path() / "windinr_test_model.ckpt";
  save_checkpoint(path, m);
  const WindModel back = load_checkpoint(path);
  CHECK(back.params().hash() == m.params().hash());
  CHECK(back.norm().std[2] == 6.0);
  CHECK(back.config().hidden == 32);
  CHECK(back.params().count(Block::decoder) == m.params().count(Block::decoder));
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint(path));
}
