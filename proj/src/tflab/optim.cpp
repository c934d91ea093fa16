#include "tflab/optim.hpp"

#include <cmath>
#include <map>

#include "tflab/error.hpp"

namespace tflab {

Optimizer::Optimizer(NamedTensors params, OptimizerConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate >= 0.0)) {
    fail(ErrorKind::parameter, "optimizer: learning rate must be non-negative");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Optimizer::step() {
  ++step_count_;
  const double lr = config_.learning_rate;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& t = params_[k].tensor;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto w = t.mutable_data();
    if (config_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
      continue;
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

NamedTensors Optimizer::export_state() const {
  NamedTensors out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& shape = params_[k].tensor.shape();
    out.push_back({"opt.m." + params_[k].name, Tensor::from_data(shape, m_[k])});
    out.push_back({"opt.v." + params_[k].name, Tensor::from_data(shape, v_[k])});
  }
  out.push_back({"opt.step", Tensor::from_data({1}, {static_cast<double>(step_count_)})});
  return out;
}

void Optimizer::import_state(const NamedTensors& state) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& s : state) by_name[s.name] = &s.tensor;
  auto fetch = [&](const std::string& name, const Shape& shape) {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail(ErrorKind::format, "optimizer state: missing " + name);
    if (it->second->shape() != shape) {
      fail(ErrorKind::format, "optimizer state: shape mismatch for " + name);
    }
    return it->second->values();
  };
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& shape = params_[k].tensor.shape();
    m_[k] = fetch("opt.m." + params_[k].name, shape);
    v_[k] = fetch("opt.v." + params_[k].name, shape);
  }
  step_count_ = static_cast<std::int64_t>(fetch("opt.step", {1})[0]);
}

}  // namespace tflab
