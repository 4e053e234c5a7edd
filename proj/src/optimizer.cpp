#include "mmib/optimizer.hpp"

#include <cmath>

#include "mmib/error.hpp"

namespace mmib::optim {

StepResult AdamW::step(ad::ParameterStore& params) {
  StepResult r;
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.at(i);
    if (!all_finite(p.grad)) {
      r.applied = false;
      r.reason = "non-finite gradient in " + p.name;
      return r;
    }
    for (double g : p.grad.values()) sq += g * g;
  }
  r.grad_norm = std::sqrt(sq);
  const double clip = cfg_.grad_clip > 0.0 && r.grad_norm > cfg_.grad_clip ? cfg_.grad_clip / r.grad_norm : 1.0;

  if (m_.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params.at(i).value.rows(), params.at(i).value.cols());
      v_.emplace_back(params.at(i).value.rows(), params.at(i).value.cols());
    }
  }
  if (m_.size() != params.size()) throw ContractError("optimizer state does not match the parameter set");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double shrink = 1.0 - cfg_.learning_rate * cfg_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i);
    auto& w = p.value.values();
    const auto& g = p.grad.values();
    auto& m = m_[i].values();
    auto& v = v_[i].values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] * clip;
      w[k] *= shrink;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      w[k] -= cfg_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
  return r;
}

}  // namespace mmib::optim
