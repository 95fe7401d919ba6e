#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dfe/numcore/errors.hpp"
#include "dfe/numcore/tape.hpp"

namespace dfe::nc {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled (AdamW-style) decay: p -= lr * weight_decay * p before the moment update.
  double weight_decay = 0.0;
};

class NonFiniteGradient : public NumericFault {
 public:
  explicit NonFiniteGradient(std::string parameter)
      : NumericFault("adam_step", "non-finite gradient for parameter '" + parameter + "'"), parameter_(std::move(parameter)) {}
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string parameter_;
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(AdamConfig config, std::vector<Parameter*> params);

  /// Applies one update from the parameters' accumulated `grad`. If any
  /// gradient is non-finite nothing is modified and NonFiniteGradient is thrown.
  void step();
  void zero_grad();

  std::uint64_t steps() const noexcept { return t_; }
  void set_steps(std::uint64_t t) noexcept { t_ = t; }
  const AdamConfig& config() const noexcept { return config_; }
  void set_lr(double lr) noexcept { config_.lr = lr; }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& param(std::size_t i) { return *params_[i]; }
  Tensor& first_moment(std::size_t i) { return m_[i]; }
  Tensor& second_moment(std::size_t i) { return v_[i]; }
  const Tensor& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor& second_moment(std::size_t i) const { return v_[i]; }

  /// Clears the moments of selected rows of `p` (used after re-seeding codebook rows).
  void reset_rows(const Parameter& p, std::span<const std::size_t> rows);

 private:
  AdamConfig config_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t t_ = 0;
};

}  // namespace dfe::nc
