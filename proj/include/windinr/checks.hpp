#pragma once

// Self-contained verification suites: gradients against finite differences,
// closed-form correction oracles, mean-shift equivalence and prior arithmetic.

#include <cstdint>
#include <string>

namespace windinr::checks {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

/// Stage-1 loss, Stage-2 loss and correction objective against central differences (step 1e-5).
/// rel = |analytic - fd| / max(|analytic|, |fd|, 1e-6) must stay below 1e-4.
CheckResult gradient_suite(std::size_t instances, std::uint64_t seed);

/// Normal-equation vs gain-form updates (1e-8) and long-budget Adam vs the closed form (1e-6)
/// on random linear decoders with d <= 16 and at most 8 observations.
CheckResult oracle_suite(std::size_t instances, std::uint64_t seed, std::size_t adam_steps = 4000);

/// Bias-absorbed zero-mean correction vs explicit nonzero-mean correction (1e-8).
CheckResult mean_shift_suite(std::size_t instances, std::uint64_t seed);

/// Hand-computed shrinkage example, Cholesky success and the entrywise shrinkage identity.
CheckResult prior_suite(std::uint64_t seed);

}  // namespace windinr::checks
