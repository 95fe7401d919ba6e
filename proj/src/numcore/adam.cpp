#include "dfe/numcore/adam.hpp"

#include <cmath>

namespace dfe::nc {

Adam::Adam(AdamConfig config, std::vector<Parameter*> params) : config_(config), params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    if (!p) throw ContractViolation("Adam: null parameter");
    m_.push_back(Tensor::like(p->value));
    v_.push_back(Tensor::like(p->value));
    if (p->grad.shape() != p->value.shape()) p->grad = Tensor::like(p->value);
  }
}

void Adam::step() {
  for (Parameter* p : params_) {
    if (p->grad.shape() != p->value.shape()) throw ContractViolation("Adam: gradient shape mismatch for '" + p->name + "'");
    if (!p->grad.all_finite()) throw NonFiniteGradient(p->name);
  }
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t_));
  const double c2 = 1.0 - std::pow(b2, double(t_));
  const double lr = config_.lr;
  const double decay = lr * config_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& w = params_[k]->value;
    const Tensor& g = params_[k]->grad;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      if (decay != 0.0) w[i] -= decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::reset_rows(const Parameter& p, std::span<const std::size_t> rows) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (params_[k] != &p) continue;
    for (std::size_t r : rows) {
      for (double& x : m_[k].row(r)) x = 0.0;
      for (double& x : v_[k].row(r)) x = 0.0;
    }
    return;
  }
  throw ContractViolation("Adam::reset_rows: parameter '" + p.name + "' is not optimised here");
}

}  // namespace dfe::nc
