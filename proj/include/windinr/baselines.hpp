#pragma once

// Comparison methods behind one field-accessor interface: no-observation
// decoding, IDW residual interpolation, latent correction with the adaptive or
// isotropic prior, and partial / full fine-tuning.

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "windinr/correction.hpp"
#include "windinr/model.hpp"
#include "windinr/prior.hpp"

namespace windinr::baselines {

enum class Method { noobs, idw, iso, partial_ft, full_ft, windinr };
constexpr std::array<Method, 6> kMethods = {Method::noobs,      Method::idw,     Method::iso,
                                            Method::partial_ft, Method::full_ft, Method::windinr};
const char* method_name(Method m);
/// Throws std::invalid_argument for unknown names.
Method parse_method(std::string_view name);

/// Corrected wind field: point -> (u, v, w) in m/s.
class FieldAccessor {
 public:
  virtual ~FieldAccessor() = default;
  virtual Tensor predict(std::span<const QueryPoint> points) const = 0;
};

struct BaselineResult {
  Method method = Method::noobs;
  std::shared_ptr<const FieldAccessor> field;
  double seconds = 0.0;  // wall time of the online update
  std::size_t steps = 0;
  std::vector<correction::TraceRow> trace;
  bool diverged = false;
  std::string note;
};

struct BaselineConfig {
  correction::CorrectionConfig correction;  // latent methods
  std::size_t ft_steps = 20;
  double ft_lr = 1e-3;
  double anchor = 1e-2;  // partial fine-tuning anchor weight
};

/// Shared read-only state of one case.
struct CaseSetup {
  const model::WindModel* model = nullptr;
  model::CaseInputs inputs;
  std::shared_ptr<const model::NeuralField> field;
  const prior::PriorStats* adaptive = nullptr;
  const prior::PriorStats* isotropic = nullptr;
};

CaseSetup make_setup(const model::WindModel& model, model::CaseInputs inputs, const prior::PriorStats& adaptive,
                     const prior::PriorStats* isotropic = nullptr);

/// Decoded latent field at a fixed latent.
class LatentAccessor : public FieldAccessor {
 public:
  LatentAccessor(std::shared_ptr<const LatentField> field, std::vector<double> z, std::size_t chunk = 2048);
  Tensor predict(std::span<const QueryPoint> points) const override;
  const std::vector<double>& latent() const { return z_; }

 private:
  std::shared_ptr<const LatentField> field_;
  std::vector<double> z_;
  std::size_t chunk_;
};

/// Base field plus inverse-distance (power 2) interpolated residuals per component.
class IdwAccessor : public FieldAccessor {
 public:
  IdwAccessor(std::shared_ptr<const FieldAccessor> base, const std::vector<correction::Observation>& observations);
  Tensor predict(std::span<const QueryPoint> points) const override;
  /// Interpolated residual at one point (zero for components nobody observed).
  std::array<double, 3> residual_at(const QueryPoint& p) const;

 private:
  struct Site {
    QueryPoint p;
    std::array<double, 3> r;
    std::array<double, 3> y;
    std::array<bool, 3> mask;
  };
  /// Observed value when p coincides with a site observing component c.
  std::optional<double> exact_at(const QueryPoint& p, std::size_t c) const;
  std::shared_ptr<const FieldAccessor> base_;
  std::vector<Site> sites_;
};

BaselineResult no_obs_predict(const CaseSetup& setup);
BaselineResult idw_correct(const CaseSetup& setup, const std::vector<correction::Observation>& observations);
/// Latent correction under the adaptive (windinr) or isotropic prior.
BaselineResult latent_correct(const CaseSetup& setup, const std::vector<correction::Observation>& observations,
                              bool isotropic, const correction::CorrectionConfig& config = {});
BaselineResult partial_finetune(const CaseSetup& setup, const std::vector<correction::Observation>& observations,
                                const BaselineConfig& config = {});
BaselineResult full_finetune(const CaseSetup& setup, const std::vector<correction::Observation>& observations,
                             const BaselineConfig& config = {});

BaselineResult run_method(Method m, const CaseSetup& setup, const std::vector<correction::Observation>& observations,
                          const BaselineConfig& config = {});

/// Parameters updated by partial fine-tuning: the latent-seed MLP and the final linear layer.
bool partial_subset(const std::string& name);

/// 1/2 sum over observed components of (pred - y)^2 / variance.
double observation_misfit(const FieldAccessor& field, const std::vector<correction::Observation>& observations);

}  // namespace windinr::baselines
