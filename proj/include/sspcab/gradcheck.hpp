#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sspcab/tensor.hpp"

namespace sspcab {

/// A scalar function of a set of parameter tensors. `params` point at tensors
/// that `value` reads; the checker perturbs them in place and restores them.
/// `gradient` returns the analytic gradient, one tensor per parameter.
///
/// For piecewise-smooth functions (anything with a ReLU) `piece` may return
/// an identifier of the smooth piece the current point lies in, e.g. a hash
/// of all ReLU sign patterns. Probes whose perturbed points leave the piece
/// straddle a kink; they are skipped and counted instead of compared.
struct DifferentiableFn {
  std::vector<Tensor*> params;
  std::vector<std::string> names;
  std::function<double()> value;
  std::function<std::vector<Tensor>()> gradient;
  std::function<std::uint64_t()> piece;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so entries whose true gradient
  /// is zero are judged by absolute error instead.
  double denominator_floor = 1e-6;
  /// Probe at most this many entries per tensor (evenly strided); 0 probes all.
  std::size_t max_probes_per_tensor = 0;
  /// The check fails when more than this fraction of probes straddle a kink.
  double max_skipped_fraction = 0.05;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t probes = 0;
  std::size_t skipped = 0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::size_t skipped = 0;
  bool passed = true;
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Compares the analytic gradient against central differences
/// (f(θ+h) - f(θ-h)) / 2h. Throws NumericError naming the parameter when a
/// non-finite value shows up.
GradCheckReport grad_check(const DifferentiableFn& f, const GradCheckOptions& options = {});

}  // namespace sspcab
