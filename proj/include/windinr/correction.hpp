#pragma once

// Observation-guided latent correction: the regularized MAP objective, its
// few-step Adam minimizer and the closed-form linearized update.

#include <array>
#include <memory>
#include <span>
#include <vector>

#include "windinr/field.hpp"
#include "windinr/io.hpp"
#include "windinr/prior.hpp"

namespace windinr::correction {

constexpr std::array<double, 3> kNoiseStd = {0.5, 0.5, 0.2};

struct Observation {
  QueryPoint p;
  std::array<double, 3> y = {0.0, 0.0, 0.0};
  std::array<bool, 3> mask = {true, true, true};
  std::array<double, 3> variance = {kNoiseStd[0] * kNoiseStd[0], kNoiseStd[1] * kNoiseStd[1],
                                    kNoiseStd[2] * kNoiseStd[2]};
  void validate() const;
};

struct CorrectionConfig {
  std::size_t steps = 20;
  double lr = 5e-2;
  double clip = 10.0;
  bool keep_best = true;
  void validate() const;
};

/// J(xi) = 1/2 (xi - mu)^T B^-1 (xi - mu) + 1/2 sum_n ||M_n decode(p_n, z0 + xi) - y_n||^2_{R_n^-1}.
/// mu is empty (zero) in the bias-absorbed form.
class Objective {
 public:
  Objective(const LatentField& field, const prior::PriorStats& prior, std::span<const double> z0,
            std::vector<Observation> observations, std::vector<double> mean = {});

  std::size_t dim() const { return z0_.size(); }
  double value(std::span<const double> xi) const;
  /// Value and gradient with respect to xi.
  double value_and_gradient(std::span<const double> xi, std::span<double> grad) const;

  const std::vector<double>& z0() const { return z0_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<Observation>& observations() const { return obs_; }
  const LatentField& field() const { return *field_; }
  const prior::PriorStats& prior() const { return *prior_; }

 private:
  double evaluate(std::span<const double> xi, std::span<double> grad) const;
  const LatentField* field_;
  const prior::PriorStats* prior_;
  std::vector<double> z0_, mean_;
  std::vector<Observation> obs_;
  std::unique_ptr<PointBatch> batch_;
  Tensor targets_, weights_;
};

struct TraceRow {
  std::size_t step;
  double objective;
  double grad_norm;
};

struct CorrectionResult {
  std::vector<double> z;   // z0 + xi_best
  std::vector<double> xi;
  double objective = 0.0;
  double initial_objective = 0.0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  std::vector<TraceRow> trace;
};

/// Adam on xi from xi = mu with clipping; returns the best visited iterate (first on ties).
/// Empty observations return z0 with no optimizer steps.
CorrectionResult correct_latent(const LatentField& field, std::span<const double> z0,
                                const std::vector<Observation>& observations, const prior::PriorStats& prior,
                                const CorrectionConfig& config = {}, std::span<const double> mean = {});

struct LinearizedUpdate {
  std::vector<double> delta;       // normal-equation solution
  std::vector<double> delta_gain;  // gain-form solution
  double form_gap = 0.0;           // max |delta - delta_gain|
  Tensor jacobian;                 // [observed scalars, d]
  std::vector<double> residual;    // y - H(0) over observed scalars
};

/// Solves (B^-1 + G^T R^-1 G) delta = B^-1 mu + G^T R^-1 (y - H(0)) in whitened form, plus the gain form.
LinearizedUpdate linearized_update(const LatentField& field, std::span<const double> z0,
                                   const std::vector<Observation>& observations, const prior::PriorStats& prior,
                                   std::span<const double> mean = {});

/// Jacobian rows d(M_n decode)/dz at z, one reverse pass per observed scalar.
Tensor observation_jacobian(const LatentField& field, std::span<const double> z,
                            const std::vector<Observation>& observations, std::vector<double>* h_of_z = nullptr);

io::CsvTable trace_table(const std::vector<TraceRow>& trace);

}  // namespace windinr::correction
