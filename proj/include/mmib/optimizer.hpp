#pragma once

// AdamW with decoupled weight decay: each step first shrinks every parameter
// by (1 - lr * weight_decay), then applies the bias-corrected Adam update.

#include <string>
#include <vector>

#include "mmib/autodiff.hpp"

namespace mmib::optim {

struct AdamWConfig {
  double learning_rate = 3e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm, 0 disables
};

struct StepResult {
  bool applied = true;
  std::string reason;  // set when the step was aborted
  double grad_norm = 0.0;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  /// Updates every parameter from its grad. A non-finite gradient aborts
  /// the step before anything is modified.
  StepResult step(ad::ParameterStore& params);

  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace mmib::optim
