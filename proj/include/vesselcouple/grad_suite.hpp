#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace vesselcouple {

enum class GradScope { kOps, kLosses, kEnd2End };
GradScope grad_scope_from_string(const std::string& s);

inline constexpr double kOpGradTolerance = 1e-5;
inline constexpr double kLossGradTolerance = 1e-4;
inline constexpr double kEnd2EndGradTolerance = 1e-3;

struct GradSuiteResult {
  std::string name;
  double max_rel_error = 0.0;  // worst case over all trials and inputs
  double tolerance = 0.0;
  std::size_t trials = 0;
  std::size_t rejected = 0;  // end2end probes redrawn for sitting near a kink
  bool passed = false;
};

/// Central-difference checks over `seeds` random fixtures per entry, with
/// inputs kept away from the kinks of relu, clamp, min and max pooling.
/// kOps covers every autodiff op, kLosses every loss, kEnd2End the total
/// loss through the network w.r.t. 50 random parameters.
std::vector<GradSuiteResult> run_grad_suite(GradScope scope, std::size_t seeds = 100,
                                            std::uint64_t base_seed = 0);

}  // namespace vesselcouple
