#include "icrl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "icrl/ops.hpp"
#include "icrl/rng.hpp"

namespace icrl {

namespace {

struct Probe {
  double value;
  std::vector<std::uint64_t> kinks;
};

Probe evaluate(const LossBuilder& build) {
  NoGradGuard no_grad;
  KinkRecorder recorder;
  Tensor64 loss = build();
  return {loss.item(), recorder.trace()};
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build, ParameterSet<double>& params,
                           const GradCheckOptions& options) {
  params.zero_grad();
  Tensor64 loss = build();
  backward(loss);

  const Probe base = evaluate(build);
  Rng rng = make_rng(options.seed, "grad_check");
  GradCheckReport report;
  for (const auto& [name, tensor_ref] : params) {
    Tensor64 tensor = tensor_ref;
    if (!tensor.requires_grad()) continue;
    std::vector<double> analytic(tensor.numel(), 0.0);
    if (tensor.has_grad()) std::copy(tensor.grad().begin(), tensor.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(tensor.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param && coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }

    std::span<double> values = tensor.mutable_data();
    for (std::size_t idx : coords) {
      const double original = values[idx];
      values[idx] = original + options.step;
      const Probe plus = evaluate(build);
      values[idx] = original - options.step;
      const Probe minus = evaluate(build);
      values[idx] = original;
      if (plus.kinks != base.kinks || minus.kinks != base.kinks) {
        ++report.skipped_nonsmooth;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.step);
      const double a = analytic[idx];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.max_rel_error) {
          report.worst_param = name;
          report.worst_index = idx;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace icrl
