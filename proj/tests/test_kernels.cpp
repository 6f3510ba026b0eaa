#include <array>
#include <vector>

#include "doctest.h"
#include "windinr/kernels.hpp"
#include "windinr/rng.hpp"

using namespace windinr;
namespace kn = windinr::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, -1.0, 1.0);
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parallel gemm variants match the serial reference") {
  Rng rng(7);
  using Dims = std::array<std::size_t, 3>;
  for (const Dims& dims : {Dims{1, 1, 1}, Dims{5, 3, 7}, Dims{37, 19, 530}, Dims{64, 161, 256}, Dims{3, 600, 2}}) {
    const auto [m, k, n] = dims;
    const auto a = random_vec(m * k, rng);
    const auto b = random_vec(k * n, rng);
    const auto bt = random_vec(n * k, rng);
    const auto at = random_vec(k * m, rng);
    std::vector<double> c0(m * n, 0.5), c1(m * n, 0.5);

    kn::serial::gemm_nn(m, k, n, a.data(), b.data(), c0.data(), true);
    kn::parallel::gemm_nn(m, k, n, a.data(), b.data(), c1.data(), true);
    CHECK(max_diff(c0, c1) < 1e-12);

    kn::serial::gemm_nt(m, k, n, a.data(), bt.data(), c0.data(), false);
    kn::parallel::gemm_nt(m, k, n, a.data(), bt.data(), c1.data(), false);
    CHECK(max_diff(c0, c1) < 1e-12);

    kn::serial::gemm_tn(m, k, n, at.data(), b.data(), c0.data(), false);
    kn::parallel::gemm_tn(m, k, n, at.data(), b.data(), c1.data(), false);
    CHECK(max_diff(c0, c1) < 1e-12);
  }
}

TEST_CASE("im2col and col2im agree between serial and parallel for both paddings") {
  Rng rng(11);
  const std::size_t h = 5, w = 4, ch = 3;
  const auto in = random_vec(h * w * ch, rng);
  for (auto pad : {kn::Padding::zero, kn::Padding::periodic}) {
    std::vector<double> c0(h * w * 9 * ch), c1(h * w * 9 * ch);
    kn::serial::im2col3x3(h, w, ch, in.data(), c0.data(), pad);
    kn::parallel::im2col3x3(h, w, ch, in.data(), c1.data(), pad);
    CHECK(max_diff(c0, c1) == 0.0);

    const auto g = random_vec(c0.size(), rng);
    std::vector<double> g0(h * w * ch, 0.0), g1(h * w * ch, 0.0);
    kn::serial::col2im3x3(h, w, ch, g.data(), g0.data(), pad);
    kn::parallel::col2im3x3(h, w, ch, g.data(), g1.data(), pad);
    CHECK(max_diff(g0, g1) < 1e-14);

    // adjointness: <im2col(x), g> == <x, col2im(g)>
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < c0.size(); ++i) lhs += c0[i] * g[i];
    for (std::size_t i = 0; i < in.size(); ++i) rhs += in[i] * g0[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("bilinear gather is exact at nodes and clamps outside the map") {
  const std::size_t h = 2, w = 3, ch = 1;
  const std::vector<double> map = {0, 1, 2, 10, 11, 12};
  const std::vector<kn::PixelCoord> at = {{1.0, 1.0}, {0.5, 0.5}, {-3.0, 0.0}, {9.0, 9.0}};
  std::vector<double> out(at.size());
  kn::parallel::bilinear_gather(h, w, ch, map.data(), at.size(), at.data(), out.data());
  CHECK(out[0] == 11.0);
  CHECK(out[1] == doctest::Approx(5.5));
  CHECK(out[2] == 0.0);
  CHECK(out[3] == 12.0);
}

TEST_CASE("bilinear scatter matches serial and is the adjoint of gather") {
  Rng rng(3);
  const std::size_t h = 6, w = 7, ch = 5, n = 40;
  const auto map = random_vec(h * w * ch, rng);
  std::vector<kn::PixelCoord> at(n);
  for (auto& p : at) p = {uniform(rng, -1.0, 7.0), uniform(rng, -1.0, 6.0)};
  const auto g = random_vec(n * ch, rng);
  std::vector<double> s0(h * w * ch, 0.0), s1(h * w * ch, 0.0), out(n * ch);
  kn::serial::bilinear_scatter(h, w, ch, g.data(), n, at.data(), s0.data());
  kn::parallel::bilinear_scatter(h, w, ch, g.data(), n, at.data(), s1.data());
  CHECK(max_diff(s0, s1) == 0.0);
  kn::serial::bilinear_gather(h, w, ch, map.data(), n, at.data(), out.data());
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) lhs += out[i] * g[i];
  for (std::size_t i = 0; i < map.size(); ++i) rhs += map[i] * s0[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}
