#pragma once

// Stage 1 (reference latent learning) and Stage 2 (no-observation latent
// prediction) training loops.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "windinr/io.hpp"
#include "windinr/model.hpp"
#include "windinr/synth.hpp"

namespace windinr::training {

struct StageConfig {
  std::size_t m_sup = 2048;
  std::size_t m_qry = 8192;
  double lambda_ref = 1e-4;
  double lambda_align = 1.0;
  double lr = 2e-4;
  double weight_decay = 1e-4;
  std::size_t batch = 2;    // cases per optimizer step
  std::size_t epochs = 30;
  std::size_t eval_every = 1;  // epochs between validation passes
  std::size_t max_steps = 0;   // 0: no cap
  std::uint64_t seed = 1;
};

struct SupportQuery {
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
};

/// Disjoint draws without replacement from [0, n_points).
SupportQuery sample_support_query(std::size_t n_points, std::size_t m_sup, std::size_t m_qry, std::uint64_t seed);

/// Pooled normalized MSE over points and components plus lambda * ||z||^2.
double loss_ref(const Tensor& pred, const Tensor& labels, const model::NormStats& norm, std::span<const double> z,
                double lambda_ref);
/// Pooled normalized MSE plus lambda * ||z_bg - z_ref||^2.
double loss_beta(const Tensor& pred, const Tensor& labels, const model::NormStats& norm,
                 std::span<const double> z_bg, std::span<const double> z_ref, double lambda_align);

ad::Var loss_ref(ad::Var pred, const Tensor& labels, const model::NormStats& norm, ad::Var z, double lambda_ref);
ad::Var loss_beta(ad::Var pred, const Tensor& labels, const model::NormStats& norm, ad::Var z_bg, ad::Var z_ref,
                  double lambda_align);

/// Physical labels [n, 3] of the selected hr samples.
Tensor labels_of(const synth::Case& c, std::span<const std::size_t> idx);
std::vector<QueryPoint> points_of(const synth::Case& c, std::span<const std::size_t> idx);

Tensor normalized_labels(const Tensor& labels, const model::NormStats& norm);

/// z_ref from the support subset of a case.
ad::Var reference_latent(model::ParamBinding& w, const model::WindModel& m, const model::Context& ctx,
                         const synth::Case& c, const SupportQuery& sq);

/// Per-case graph pieces shared by training, prior estimation and the tests.
struct CaseGraph {
  model::Context ctx;
  ad::Var z_ref;
  ad::Var z_bg;
  ad::Var loss;
};

/// Stage-1 loss of one case under the given binding.
CaseGraph stage1_case(model::ParamBinding& w, const model::WindModel& m, const model::CaseInputs& in,
                      const synth::Case& c, const SupportQuery& sq, double lambda_ref);
/// Stage-2 loss of one case under the given binding.
CaseGraph stage2_case(model::ParamBinding& w, const model::WindModel& m, const model::CaseInputs& in,
                      const synth::Case& c, const SupportQuery& sq, double lambda_align);

struct CurveRow {
  std::size_t step;
  double train_loss;
  double val_loss;
};

struct StageResult {
  model::WindModel best;
  std::vector<CurveRow> curve;
  double best_val = 0.0;
  double final_val = 0.0;
  std::size_t steps = 0;
};

using Progress = std::function<void(const CurveRow&)>;

/// Trains encoders, reference encoder and decoder; keeps the best-validation parameters.
StageResult train_stage1(const synth::Dataset& data, model::WindModel init, const StageConfig& config,
                         const Progress& progress = {});
/// Trains only the no-observation predictor; all other blocks are verified bitwise unchanged.
StageResult train_stage2(const synth::Dataset& data, model::WindModel stage1, const StageConfig& config,
                         const Progress& progress = {});

/// Deterministic support/query draw used for validation and prior estimation.
SupportQuery fixed_draw(const synth::Case& c, std::size_t case_index, const StageConfig& config);

double validation_loss(int stage, const synth::Dataset& data, const model::WindModel& m, const StageConfig& config);

io::CsvTable curve_table(const std::vector<CurveRow>& curve);

}  // namespace windinr::training
