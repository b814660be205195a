#include "pcn/sgd.hpp"

#include <cmath>

namespace pcn {

void SgdConfig::validate() const {
  // lr == 0 is a legal degenerate config (no-op steps)
  if (learning_rate < 0.0) throw ContractError("SgdConfig: learning_rate must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractError("SgdConfig: momentum must be in [0,1)");
  if (schedule == LrSchedule::kCosine && total_steps <= 0) {
    throw ContractError("SgdConfig: cosine schedule needs total_steps > 0");
  }
}

double SgdConfig::lr_at(int step) const {
  if (schedule == LrSchedule::kFixed) return learning_rate;
  if (step >= total_steps) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

void sgd_step(std::vector<Tensor>& params, std::vector<std::vector<double>>& velocity,
              const SgdConfig& config, int step) {
  if (velocity.size() != params.size()) {
    velocity.assign(params.size(), {});
    for (size_t p = 0; p < params.size(); ++p) velocity[p].assign(params[p].size(), 0.0);
  }
  const double lr = config.lr_at(step);
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p];
    if (!t.requires_grad()) continue;  // frozen params are a no-op
    if (t.node()->grad.empty()) {
      throw ContractError("sgd_step: parameter has no gradient (backward not run?)");
    }
    auto& data = t.mutable_data();
    auto& grad = t.mutable_grad();
    auto& vel = velocity[p];
    if (config.momentum == 0.0) {
      for (size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
    } else {
      for (size_t i = 0; i < data.size(); ++i) {
        vel[i] = config.momentum * vel[i] + grad[i];
        data[i] -= lr * vel[i];
      }
    }
    t.zero_grad();
  }
}

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, SgdConfig config)
    : params_(std::move(params)), config_(config) {
  config_.validate();
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

void SgdOptimizer::step() { step_at(step_count_++); }

void SgdOptimizer::step_at(int step) { sgd_step(params_, velocity_, config_, step); }

}  // namespace pcn
