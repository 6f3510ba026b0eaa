#include "doctest.h"
#include "windinr/linalg.hpp"
#include "windinr/rng.hpp"

using namespace windinr;
using linalg::Cholesky;

namespace {

Tensor random_spd(std::size_t d, Rng& rng) {
  Tensor m({d, d});
  for (double& x : m.data()) x = uniform(rng, -1.0, 1.0);
  Tensor a = linalg::matmul(linalg::transpose(m), m);
  for (std::size_t i = 0; i < d; ++i) a.at(i, i) += 1.0;
  return a;
}

double residual_ratio(const Tensor& a, const std::vector<double>& x, const std::vector<double>& b) {
  const auto ax = linalg::matvec(a, x);
  double r = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) r += (ax[i] - b[i]) * (ax[i] - b[i]);
  return std::sqrt(r) / std::sqrt(squared_norm(b));
}

}  // namespace

TEST_CASE("cholesky_solve with the identity returns b") {
  const std::vector<double> b = {0.3, -1.0, 4.5, 2.0};
  const auto x = linalg::cholesky_solve(Tensor::identity(4), b);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(x[i] == b[i]);
}

TEST_CASE("cholesky_solve with 2I") {
  Tensor a = Tensor::identity(3);
  for (double& v : a.data()) v *= 2.0;
  const auto x = linalg::cholesky_solve(a, std::vector<double>{2, 4, 6});
  CHECK(x[0] == doctest::Approx(1.0));
  CHECK(x[1] == doctest::Approx(2.0));
  CHECK(x[2] == doctest::Approx(3.0));
}

TEST_CASE("cholesky_solve residual on random SPD matrices") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_spd(8, rng);
    std::vector<double> b(8);
    for (double& v : b) v = uniform(rng, -1.0, 1.0);
    CHECK(residual_ratio(a, linalg::cholesky_solve(a, b), b) <= 1e-8);
  }
}

TEST_CASE("cholesky_solve recovers x from A x") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_spd(12, rng);
    std::vector<double> x(12);
    for (double& v : x) v = uniform(rng, -1.0, 1.0);
    const auto back = linalg::cholesky_solve(a, linalg::matvec(a, x));
    double err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(back[i] - x[i]));
    CHECK(err <= 1e-8 * std::sqrt(squared_norm(x)));
  }
}

TEST_CASE("non-SPD input reports the failing pivot") {
  const Tensor a = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 2, 0, 2, 1});
  try {
    Cholesky c(a);
    FAIL("expected NotPositiveDefinite");
  } catch (const linalg::NotPositiveDefinite& e) {
    CHECK(e.pivot() == 2);
  }
  CHECK_THROWS_AS(Cholesky(Tensor::matrix(2, 2, {1, 0, 0, -1})), linalg::NotPositiveDefinite);
}

TEST_CASE("asymmetric input is rejected") {
  CHECK_THROWS_AS(Cholesky(Tensor::matrix(2, 2, {2, 1, 0, 2})), linalg::NotSymmetric);
  // within tolerance passes
  CHECK_NOTHROW(Cholesky(Tensor::matrix(2, 2, {2, 1, 1 + 1e-12, 2})));
}

TEST_CASE("inverse quadratic form equals x^T A^{-1} x") {
  Rng rng(9);
  const Tensor a = random_spd(6, rng);
  const Cholesky c(a);
  std::vector<double> x(6);
  for (double& v : x) v = uniform(rng, -1.0, 1.0);
  const auto ainv_x = c.solve(x);
  double expected = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) expected += x[i] * ainv_x[i];
  CHECK(c.inverse_quadratic(x) == doctest::Approx(expected).epsilon(1e-12));
  const Tensor inv = c.inverse();
  CHECK(linalg::max_asymmetry(inv) == 0.0);
  CHECK(max_abs_diff(linalg::matmul(a, inv), Tensor::identity(6)) < 1e-10);
}
