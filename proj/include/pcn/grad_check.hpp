#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pcn/tensor.hpp"

namespace pcn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  int checked_values = 0;
};

// Compares tape gradients of build_loss(leaves) against central finite
// differences with step eps. build_loss must be a pure function of the leaf
// values. Relative error: |a-f| / max(|a|, |f|, floor).
GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& build_loss,
    std::vector<Tensor> leaves, double eps = 1e-5, double floor = 1e-6);

struct GradCheckCase {
  std::string name;
  double max_rel_error;
  bool passed;
};

// The full op battery plus the calibration-composite case; used by the CLI
// `grad-check` subcommand and the acceptance suite.
std::vector<GradCheckCase> run_grad_check_battery(uint64_t seed, int trials,
                                                  double tolerance);

}  // namespace pcn
