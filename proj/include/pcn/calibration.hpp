#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pcn/checkpoint.hpp"
#include "pcn/fusion.hpp"
#include "pcn/rng.hpp"
#include "pcn/tensor.hpp"

namespace pcn {

// Feature-score cross-covariance transformer. Tokens are class-score rows
// (query side) and feature-channel rows (key/value side); every head is a
// single affine map shared across its tokens, so the parameter count is
// independent of both the class count and the feature channel count.
struct CalibConfig {
  int token_len = 256;  // hw, the flattened latent grid
  int dim = 16;         // d
  // Eq. as written divides by sqrt(d) after the softmax; flag flips it to
  // the conventional pre-softmax scaling for comparison.
  bool scale_before_softmax = false;
};

class CalibTransformer {
 public:
  CalibTransformer(const CalibConfig& cfg, Rng& rng);

  const CalibConfig& config() const { return cfg_; }

  std::vector<Tensor> params();
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  void load_params(const Checkpoint& ckpt);
  void freeze();

  Tensor query_w, query_b;  // Omega: [hw,d], [d]
  Tensor key_w, key_b;      // Gamma: [hw,d], [d]
  Tensor value_w, value_b;  // Lambda: [hw,d], [d]
  Tensor calib_w, calib_b;  // Delta: [d,hw], [hw]; zero-initialized

 private:
  CalibConfig cfg_;
};

// sigma = Omega(y) . Gamma(f)^T, shape [c, m].
Tensor cross_covariance(const Tensor& y, const Tensor& f, const CalibTransformer& t);

// Full Eq. 4-6 path: attention over feature-channel tokens, value transform,
// offset head, residual add. Differentiable w.r.t. the transformer params.
ScoreStack calibrate(const ScoreStack& stack, const Tensor& f, const CalibTransformer& t);

// Table-6 ablation: one shared fully-connected layer on each pixel's class
// vector. The trained matrix is tied to its training-time class layout; when
// applied to a differently sized stack it is expanded role-blockwise
// (bg/base/novel), which is part of why this baseline transfers poorly.
class LinearCalibrator {
 public:
  LinearCalibrator(int num_base, int num_novel, bool residual);

  bool residual() const { return residual_; }
  int param_count() const;

  std::vector<Tensor> params() { return {weight_, bias_}; }
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  void load_params(const Checkpoint& ckpt);
  void freeze();

  // [c',c'] map aligned to the stack's class layout (expanded if needed).
  std::pair<Tensor, Tensor> aligned_map(int num_base, int num_novel) const;

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;  // [c,c]; zero-init with residual, identity without
  Tensor bias_;    // [c]
  int num_base_, num_novel_;
  bool residual_;
};

ScoreStack calibrate_linear(const ScoreStack& stack, const LinearCalibrator& cal);

// Table-6 ablation: same head structure but keys/values come from the score
// rows themselves, sigma in R^{c x c}.
class SelfAttnCalibrator {
 public:
  SelfAttnCalibrator(const CalibConfig& cfg, Rng& rng);

  const CalibConfig& config() const { return cfg_; }
  std::vector<Tensor> params();
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  void load_params(const Checkpoint& ckpt);
  void freeze();

  Tensor query_w, query_b, key_w, key_b, value_w, value_b, calib_w, calib_b;

 private:
  CalibConfig cfg_;
};

ScoreStack calibrate_selfattn(const ScoreStack& stack, const SelfAttnCalibrator& cal);

// Uniform handle used by the episodic trainer and the evaluator.
class Calibrator {
 public:
  virtual ~Calibrator() = default;
  virtual std::string kind() const = 0;
  virtual ScoreStack apply(const ScoreStack& stack, const Tensor& tap_features) const = 0;
  virtual std::vector<Tensor> params() = 0;
  virtual std::vector<std::pair<std::string, Tensor>> named_params() const = 0;
  virtual void load_params(const Checkpoint& ckpt) = 0;
  virtual void freeze() = 0;
};

struct CalibratorInit {
  int token_len = 256;
  int dim = 16;
  int num_base = 0;   // training-time class layout (linear variant)
  int num_novel = 0;
  bool scale_before_softmax = false;
};

// kind: pcn | linear | linear_nores | selfattn
std::unique_ptr<Calibrator> make_calibrator(const std::string& kind,
                                            const CalibratorInit& init, Rng& rng);

}  // namespace pcn
