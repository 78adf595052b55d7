#include "sspcab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sspcab/errors.hpp"

namespace sspcab {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const DifferentiableFn& f, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ConfigError("grad_check: step must be > 0");
  if (f.params.size() != f.names.size()) throw ConfigError("grad_check: params and names differ in length");

  const std::vector<Tensor> analytic = f.gradient();
  if (analytic.size() != f.params.size()) {
    throw ShapeError("grad_check: gradient returned " + std::to_string(analytic.size()) + " tensors for " +
                     std::to_string(f.params.size()) + " parameters");
  }
  const std::uint64_t base_piece = f.piece ? f.piece() : 0;

  GradCheckReport report;
  for (std::size_t p = 0; p < f.params.size(); ++p) {
    Tensor& theta = *f.params[p];
    require_same_shape(theta, analytic[p], "grad_check");
    ParamCheck check{f.names[p]};

    const std::size_t count = theta.size();
    const std::size_t probes =
        options.max_probes_per_tensor == 0 ? count : std::min(count, options.max_probes_per_tensor);
    for (std::size_t k = 0; k < probes; ++k) {
      const std::size_t i = k * count / probes;
      const double saved = theta[i];
      ++check.probes;

      theta[i] = saved + options.step;
      const double plus = f.value();
      bool same_piece = !f.piece || f.piece() == base_piece;
      theta[i] = saved - options.step;
      const double minus = f.value();
      same_piece = same_piece && (!f.piece || f.piece() == base_piece);
      theta[i] = saved;

      const double numeric = (plus - minus) / (2.0 * options.step);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[p][i])) {
        throw NumericError("grad_check: non-finite value for parameter " + std::to_string(p) + " (" + f.names[p] +
                           ") at index " + std::to_string(i));
      }
      if (!same_piece) {
        ++check.skipped;
        continue;
      }
      const double err = relative_error(analytic[p][i], numeric, options.denominator_floor);
      if (err >= check.max_rel_error) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic_at_worst = analytic[p][i];
        check.numeric_at_worst = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.probes += check.probes;
    report.skipped += check.skipped;
    report.params.push_back(std::move(check));
  }
  const double skipped_fraction =
      report.probes == 0 ? 0.0 : static_cast<double>(report.skipped) / static_cast<double>(report.probes);
  report.passed = report.max_rel_error <= options.tolerance && skipped_fraction <= options.max_skipped_fraction;
  return report;
}

}  // namespace sspcab
