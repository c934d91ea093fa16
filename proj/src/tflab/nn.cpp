#include "tflab/nn.hpp"

#include <cmath>

#include "tflab/error.hpp"

namespace tflab {

Tensor xavier(std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = (2.0 * uniform01(rng) - 1.0) * a;
  return Tensor::from_data({rows, cols}, std::move(v), true);
}

void set_requires_grad(const NamedTensors& params, bool on) {
  for (auto p : params) p.tensor.set_requires_grad(on);
}

Linear::Linear(std::size_t in, std::size_t out, bool bias, Rng& rng)
    : weight_(xavier(in, out, rng)) {
  if (bias) bias_ = Tensor::zeros({out}, true);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? add_bias(y, bias_) : y;
}

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.push_back({prefix + ".W", weight_});
  if (bias_.defined()) out.push_back({prefix + ".b", bias_});
}

void Linear::set_identity() {
  const std::size_t n = weight_.dim(0);
  if (weight_.dim(1) != n) fail(ErrorKind::dimension, "set_identity: weight is not square");
  auto w = weight_.mutable_data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w[i * n + j] = i == j ? 1.0 : 0.0;
  if (bias_.defined()) {
    auto b = bias_.mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
  }
}

void Linear::set_zero() {
  auto w = weight_.mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  if (bias_.defined()) {
    auto b = bias_.mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
  }
}

Mlp::Mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng) {
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    layers_.emplace_back(prev, h, true, rng);
    prev = h;
  }
  layers_.emplace_back(prev, out, true, rng);
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) h = relu(h);
  }
  return h;
}

void Mlp::collect(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect(prefix + ".L" + std::to_string(i), out);
  }
}

LayerNorm::LayerNorm(std::size_t dim, double eps)
    : gamma_(Tensor::full({dim}, 1.0, true)), beta_(Tensor::zeros({dim}, true)), eps_(eps) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma_, beta_, eps_); }

void LayerNorm::collect(const std::string& prefix, NamedTensors& out) const {
  out.push_back({prefix + ".gamma", gamma_});
  out.push_back({prefix + ".beta", beta_});
}

}  // namespace tflab
