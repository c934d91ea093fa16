#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tflab/tensor.hpp"

namespace tflab {

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
};

// Compares reverse-mode gradients of `loss_fn` with central differences.
// The error for one coordinate is |analytic - numeric| / max(1, |analytic|).
// `loss_fn` must rebuild its graph on every call and be deterministic.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, const NamedTensors& params,
                           const GradCheckOptions& options = {});

}  // namespace tflab
