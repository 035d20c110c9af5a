#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dpcn::testing {

/// Outcome of one named check. `value` is the measured error or quantity and
/// `limit` the pinned tolerance it was compared against.
struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double limit = 0.0;
  std::size_t trials = 0;
  std::string detail;
};

bool all_passed(const std::vector<CheckResult>& results);
std::string summarize_failures(const std::vector<CheckResult>& results);

// Pinned tolerances.
inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kGradStep = 1e-5;
inline constexpr std::size_t kGradTrials = 20;
inline constexpr double kLossTolerance = 1e-6;
inline constexpr double kConvOracleTolerance = 1e-5;
inline constexpr double kSoftmaxOracleTolerance = 1e-6;
inline constexpr double kBilinearTolerance = 1e-6;

/// Central-difference checks of every differentiable op, `trials` random
/// double-precision cases each.
std::vector<CheckResult> gradient_suite(std::uint64_t seed, std::size_t trials = kGradTrials);

/// Full Step-2 composite loss (both subnetworks, discriminator term, CE) on a
/// 2-sample batch, checked over random parameter subsets.
std::vector<CheckResult> composite_gradient_suite(std::uint64_t seed, std::size_t trials = kGradTrials,
                                                  std::size_t coords_per_trial = 50);

/// Discriminator-loss, Step-1 and Step-2 loss formulas against hand values.
std::vector<CheckResult> loss_formula_suite();

/// Brute-force oracles: direct-loop convolution, log-sum-exp CE, crafted
/// CIFAR byte fixtures, closed-form bilinear upsampling.
std::vector<CheckResult> oracle_suite(std::uint64_t seed, const std::string& scratch_dir);

}  // namespace dpcn::testing
