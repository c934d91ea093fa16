#include "tflab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tflab/error.hpp"
#include "tflab/random.hpp"

namespace tflab {

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, const NamedTensors& params,
                           const GradCheckOptions& options) {
  if (!(options.step > 0.0)) fail(ErrorKind::parameter, "grad_check: step must be positive");
  NamedTensors work = params;
  for (auto& p : work) p.tensor.clear_grad();

  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : work) analytic.push_back(p.tensor.grad_values());

  GradCheckResult result;
  Rng rng(options.seed);
  const double h = options.step;
  for (std::size_t k = 0; k < work.size(); ++k) {
    Tensor& t = work[k].tensor;
    const std::size_t n = t.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor && n > options.max_coords_per_tensor) {
      for (std::size_t i = 0; i < options.max_coords_per_tensor; ++i) {
        std::swap(coords[i], coords[i + uniform_index(rng, n - i)]);
      }
      coords.resize(options.max_coords_per_tensor);
    }
    for (std::size_t i : coords) {
      auto w = t.mutable_data();
      const double orig = w[i];
      double fp, fm;
      {
        NoGradGuard guard;
        w[i] = orig + h;
        fp = loss_fn().item();
        w[i] = orig - h;
        fm = loss_fn().item();
      }
      w[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > result.max_rel_error || std::isnan(err)) {
        result.max_rel_error = err;
        result.worst_param = work[k].name + "[" + std::to_string(i) + "]";
      }
      ++result.coords_checked;
    }
  }
  for (auto& p : work) p.tensor.clear_grad();
  return result;
}

}  // namespace tflab
