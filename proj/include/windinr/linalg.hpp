#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "windinr/tensor.hpp"

namespace windinr::linalg {

/// Cholesky breakdown: the leading minor ending at `pivot` is not positive.
class NotPositiveDefinite : public std::runtime_error {
 public:
  NotPositiveDefinite(std::size_t pivot, double value);
  std::size_t pivot() const { return pivot_; }

 private:
  std::size_t pivot_;
};

class NotSymmetric : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr double kSymmetryTolerance = 1e-10;

/// Lower-triangular factor L with A = L L^T.
class Cholesky {
 public:
  Cholesky() = default;
  /// Throws NotSymmetric or NotPositiveDefinite.
  explicit Cholesky(const Tensor& a, double symmetry_tolerance = kSymmetryTolerance);

  std::size_t dim() const { return n_; }
  const Tensor& factor() const { return l_; }

  std::vector<double> solve(std::span<const double> b) const;
  /// Solves A X = B column by column; B is n x m.
  Tensor solve(const Tensor& b) const;
  /// L^{-1} b
  std::vector<double> solve_lower(std::span<const double> b) const;
  /// x^T A^{-1} x via one triangular solve.
  double inverse_quadratic(std::span<const double> x) const;
  /// Explicit A^{-1}; only for building normal matrices.
  Tensor inverse() const;
  double min_pivot() const;

 private:
  std::size_t n_ = 0;
  Tensor l_;
};

std::vector<double> cholesky_solve(const Tensor& a, std::span<const double> b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
std::vector<double> matvec(const Tensor& a, std::span<const double> x);
std::vector<double> matvec_transposed(const Tensor& a, std::span<const double> x);
Tensor add(const Tensor& a, const Tensor& b);
double max_asymmetry(const Tensor& a);

}  // namespace windinr::linalg
