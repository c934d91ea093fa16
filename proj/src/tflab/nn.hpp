#pragma once

#include <string>
#include <vector>

#include "tflab/random.hpp"
#include "tflab/tensor.hpp"

namespace tflab {

// y = x W + b, W: [in x out].
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool bias, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;

  // W = I (requires in == out), b = 0.
  void set_identity();
  void set_zero();

  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

// Linear layers with ReLU between consecutive layers and none after the last.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;

  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }

 private:
  std::vector<Linear> layers_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim, double eps = 1e-5);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;

 private:
  Tensor gamma_;
  Tensor beta_;
  double eps_ = 1e-5;
};

// Xavier-uniform matrix, requires_grad set.
Tensor xavier(std::size_t rows, std::size_t cols, Rng& rng);

void set_requires_grad(const NamedTensors& params, bool on);

}  // namespace tflab
