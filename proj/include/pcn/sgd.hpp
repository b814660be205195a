#pragma once

#include <vector>

#include "pcn/tensor.hpp"

namespace pcn {

enum class LrSchedule { kFixed, kCosine };

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.0;  // in [0, 1)
  LrSchedule schedule = LrSchedule::kFixed;
  int total_steps = 0;  // cosine only; lr reaches 0 at total_steps

  double lr_at(int step) const;
  void validate() const;
};

// Momentum SGD: v <- momentum*v + grad; p <- p - lr(step)*v; grads zeroed.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, SgdConfig config);

  void step();                // uses and advances the internal step counter
  void step_at(int step);     // explicit step index (does not advance counter)
  int steps_taken() const { return step_count_; }
  const SgdConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  SgdConfig config_;
  int step_count_ = 0;
};

// One-shot form of the same update for callers that manage step indices.
void sgd_step(std::vector<Tensor>& params, std::vector<std::vector<double>>& velocity,
              const SgdConfig& config, int step);

}  // namespace pcn
