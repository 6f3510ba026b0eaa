#pragma once

// Gaussian prior over latent corrections estimated from training-set
// discrepancies between the deployable and reference latents.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "windinr/linalg.hpp"
#include "windinr/model.hpp"
#include "windinr/synth.hpp"
#include "windinr/training.hpp"

namespace windinr::prior {

constexpr double kShrinkage = 0.1;
constexpr double kFloor = 1e-4;

enum class PriorKind { adaptive, isotropic, custom };
const char* kind_name(PriorKind k);

struct PriorStats {
  PriorKind kind = PriorKind::adaptive;
  std::vector<double> b_z;  // mean of z_bg - z_ref
  Tensor sigma_z;           // unbiased covariance of the discrepancies
  Tensor B_z;               // covariance used by the correction
  linalg::Cholesky chol;    // of B_z
  double rho = kShrinkage;
  double eps = kFloor;
  std::size_t n = 0;
  std::uint64_t checkpoint_hash = 0;

  std::size_t dim() const { return b_z.size(); }
};

/// Raised when a prior file was computed from a different checkpoint.
class PriorMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Discrepancies = std::vector<std::vector<double>>;

/// One e_z = z_bg - z_ref per training case, in split order; support draws follow training::fixed_draw.
Discrepancies collect_discrepancies(const synth::Dataset& data, const model::WindModel& model,
                                    const training::StageConfig& config);

/// b_z, Sigma_z and B_z = (1 - rho) Sigma_z + rho diag(Sigma_z) + eps I.
PriorStats estimate_prior(const Discrepancies& e, double rho = kShrinkage, double eps = kFloor);
/// B_z = max(mean diag(Sigma_z), eps) I.
PriorStats isotropic_prior(const Discrepancies& e, double eps = kFloor);
/// Prior with a given covariance (and mean b_z, zero if empty).
PriorStats custom_prior(const Tensor& B, std::vector<double> b_z = {});

/// z0 = z_bg - b_z
std::vector<double> bias_correct(std::span<const double> z_bg, const PriorStats& prior);

/// "WINDPRIO" + JSON header + f64 payload (b_z, Sigma_z, B_z).
void save_prior(const std::filesystem::path& path, const PriorStats& prior);
/// Throws PriorMismatch when expected_checkpoint_hash is given and differs.
PriorStats load_prior(const std::filesystem::path& path,
                      std::optional<std::uint64_t> expected_checkpoint_hash = std::nullopt);

}  // namespace windinr::prior
