#include "windinr/linalg.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "windinr/kernels.hpp"

namespace windinr::linalg {

namespace {

std::string pivot_message(std::size_t pivot, double value) {
  std::ostringstream os;
  os << "matrix is not positive definite: pivot " << pivot << " has value " << value;
  return os.str();
}

void require_square(const Tensor& a, const char* what) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw std::invalid_argument(std::string(what) + ": expected square matrix, got " + shape_string(a.shape()));
  }
}

}  // namespace

NotPositiveDefinite::NotPositiveDefinite(std::size_t pivot, double value)
    : std::runtime_error(pivot_message(pivot, value)), pivot_(pivot) {}

double max_asymmetry(const Tensor& a) {
  require_square(a, "max_asymmetry");
  double worst = 0.0;
  const std::size_t n = a.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) worst = std::max(worst, std::abs(a.at(i, j) - a.at(j, i)));
  return worst;
}

Cholesky::Cholesky(const Tensor& a, double symmetry_tolerance) : n_(0), l_({0, 0}) {
  require_square(a, "cholesky");
  if (!a.all_finite()) throw NumericalError("cholesky: non-finite matrix entry");
  const double asym = max_asymmetry(a);
  if (asym > symmetry_tolerance) {
    std::ostringstream os;
    os << "cholesky: matrix asymmetry " << asym << " exceeds " << symmetry_tolerance;
    throw NotSymmetric(os.str());
  }
  n_ = a.dim(0);
  l_ = Tensor({n_, n_});
  for (std::size_t j = 0; j < n_; ++j) {
    double d = a.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l_.at(j, k) * l_.at(j, k);
    if (!(d > 0.0)) throw NotPositiveDefinite(j, d);
    const double ljj = std::sqrt(d);
    l_.at(j, j) = ljj;
    for (std::size_t i = j + 1; i < n_; ++i) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l_.at(i, k) * l_.at(j, k);
      l_.at(i, j) = s / ljj;
    }
  }
}

std::vector<double> Cholesky::solve_lower(std::span<const double> b) const {
  if (b.size() != n_) throw std::invalid_argument("cholesky solve: dimension mismatch");
  std::vector<double> y(b.begin(), b.end());
  for (std::size_t i = 0; i < n_; ++i) {
    double s = y[i];
    for (std::size_t k = 0; k < i; ++k) s -= l_.at(i, k) * y[k];
    y[i] = s / l_.at(i, i);
  }
  return y;
}

std::vector<double> Cholesky::solve(std::span<const double> b) const {
  std::vector<double> x = solve_lower(b);
  for (std::size_t ii = n_; ii-- > 0;) {
    double s = x[ii];
    for (std::size_t k = ii + 1; k < n_; ++k) s -= l_.at(k, ii) * x[k];
    x[ii] = s / l_.at(ii, ii);
  }
  return x;
}

Tensor Cholesky::solve(const Tensor& b) const {
  if (b.rank() != 2 || b.dim(0) != n_) throw std::invalid_argument("cholesky solve: dimension mismatch");
  const std::size_t m = b.dim(1);
  Tensor x({n_, m});
  std::vector<double> col(n_);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n_; ++i) col[i] = b.at(i, j);
    const auto sol = solve(col);
    for (std::size_t i = 0; i < n_; ++i) x.at(i, j) = sol[i];
  }
  return x;
}

double Cholesky::inverse_quadratic(std::span<const double> x) const { return squared_norm(solve_lower(x)); }

Tensor Cholesky::inverse() const {
  Tensor inv = solve(Tensor::identity(n_));
  // symmetrize against roundoff so downstream Cholesky checks pass
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double v = 0.5 * (inv.at(i, j) + inv.at(j, i));
      inv.at(i, j) = v;
      inv.at(j, i) = v;
    }
  return inv;
}

double Cholesky::min_pivot() const {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n_; ++i) m = std::min(m, l_.at(i, i));
  return m;
}

std::vector<double> cholesky_solve(const Tensor& a, std::span<const double> b) { return Cholesky(a).solve(b); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  kernels::parallel::gemm_nn(a.rows(), a.cols(), b.cols(), a.raw(), b.raw(), c.raw(), false);
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

std::vector<double> matvec(const Tensor& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw std::invalid_argument("matvec: dimension mismatch");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a.at(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

std::vector<double> matvec_transposed(const Tensor& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw std::invalid_argument("matvec_transposed: dimension mismatch");
  std::vector<double> y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += a.at(i, j) * x[i];
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

}  // namespace windinr::linalg
