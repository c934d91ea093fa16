#pragma once

#include <cstdint>
#include <vector>

#include "tflab/tensor.hpp"

namespace tflab {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Updates a fixed set of named parameters in place. Parameters without a
// gradient buffer are treated as having zero gradient.
class Optimizer {
 public:
  Optimizer(NamedTensors params, OptimizerConfig config);

  void step();
  void zero_grad();

  const NamedTensors& params() const { return params_; }
  std::size_t tensor_count() const { return params_.size(); }
  std::size_t parameter_count() const { return total_numel(params_); }
  std::int64_t step_count() const { return step_count_; }
  const OptimizerConfig& config() const { return config_; }

  // Adam moments as "opt.m.<name>" / "opt.v.<name>" plus "opt.step".
  NamedTensors export_state() const;
  void import_state(const NamedTensors& state);

 private:
  NamedTensors params_;
  OptimizerConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_count_ = 0;
};

}  // namespace tflab
