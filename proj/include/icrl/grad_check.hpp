#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "icrl/params.hpp"
#include "icrl/tensor.hpp"

namespace icrl {

struct GradCheckOptions {
  double step = 1e-3;
  // Upper bound on coordinates sampled per parameter tensor; 0 checks all.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double denominator_floor = 1e-8;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +-step perturbation flipped a ReLU mask or a max-pool
  // argmax; the loss is not differentiable across that interval.
  std::size_t skipped_nonsmooth = 0;

  bool passed(double tolerance) const { return checked > 0 && max_rel_error < tolerance; }
};

using LossBuilder = std::function<Tensor64()>;

// Compares analytic gradients of `build()` against central differences
// (f(p+h) - f(p-h)) / 2h, in double precision. `build` must read the
// tensors held in `params` and be deterministic.
GradCheckReport grad_check(const LossBuilder& build, ParameterSet<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace icrl
