#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sspcab/gradcheck.hpp"

namespace sspcab {

struct SuiteOptions {
  std::uint64_t first_seed = 7;
  std::size_t seeds = 100;
  GradCheckOptions check;
  /// Test hook: corrupts the analytic gradient of the named component so the
  /// suite must report it as failing.
  std::string inject_fault;
};

struct ComponentResult {
  std::string component;
  /// Worst relative gradient error, or worst absolute difference for the
  /// dense-kernel oracle.
  double worst = 0.0;
  double tolerance = 0.0;
  std::uint64_t worst_seed = 0;
  std::string worst_param;
  std::size_t probes = 0;
  /// Probes skipped because the perturbation crossed a ReLU kink.
  std::size_t skipped = 0;
  bool passed = true;
};

struct SuiteReport {
  std::vector<ComponentResult> components;
  bool passed = true;
};

/// Components checked, in report order.
const std::vector<std::string>& gradcheck_components();

/// Seeded random instance of one component, checked against central
/// differences.
GradCheckReport check_component(const std::string& component, std::uint64_t seed, const GradCheckOptions& options,
                                bool inject_fault = false);

/// Max |masked_conv - conv2d(dense_equivalent_kernel)| on a seeded random
/// instance; k' and d sweep {1,2,3} x {0,1,2} with the seed.
double masked_conv_oracle_gap(std::uint64_t seed, bool inject_fault = false);

SuiteReport run_gradcheck_suite(const SuiteOptions& options);

}  // namespace sspcab
