#include "pcn/calibration.hpp"

#include <cmath>

#include "pcn/ops.hpp"

namespace pcn {

namespace {

Tensor kaiming_linear(int in, int out, Rng& rng) {
  const double std = std::sqrt(2.0 / in);
  std::vector<double> data(static_cast<size_t>(in) * out);
  for (double& v : data) v = std * rng.normal();
  Tensor t = Tensor::from_data({in, out}, std::move(data));
  t.set_requires_grad(true);
  return t;
}

Tensor zero_param(std::vector<int> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

void load_named(const std::vector<std::pair<std::string, Tensor>>& named,
                const Checkpoint& ckpt) {
  for (auto& [name, tensor] : named) {
    const Tensor& src = ckpt.require(name);
    if (src.shape() != tensor.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(src.shape()) + ", expected " + shape_str(tensor.shape()));
    }
    Tensor dst = tensor;
    dst.mutable_data() = src.data();
  }
}

// token rows -> [tokens, d]
Tensor head(const Tensor& tokens, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(tokens, w), b);
}

Tensor attention_weights(const Tensor& sigma, bool scale_before, int dim) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));
  if (scale_before) return softmax(scale(sigma, inv_sqrt_d), 1);
  return scale(softmax(sigma, 1), inv_sqrt_d);
}

}  // namespace

CalibTransformer::CalibTransformer(const CalibConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.token_len < 1 || cfg.dim < 1) throw ConfigError("CalibConfig: bad dimensions");
  query_w = kaiming_linear(cfg.token_len, cfg.dim, rng);
  query_b = zero_param({cfg.dim});
  key_w = kaiming_linear(cfg.token_len, cfg.dim, rng);
  key_b = zero_param({cfg.dim});
  value_w = kaiming_linear(cfg.token_len, cfg.dim, rng);
  value_b = zero_param({cfg.dim});
  // zero offset head: training starts exactly at the fused solution
  calib_w = zero_param({cfg.dim, cfg.token_len});
  calib_b = zero_param({cfg.token_len});
}

std::vector<Tensor> CalibTransformer::params() {
  return {query_w, query_b, key_w, key_b, value_w, value_b, calib_w, calib_b};
}

std::vector<std::pair<std::string, Tensor>> CalibTransformer::named_params() const {
  return {{"calib.query.weight", query_w}, {"calib.query.bias", query_b},
          {"calib.key.weight", key_w},     {"calib.key.bias", key_b},
          {"calib.value.weight", value_w}, {"calib.value.bias", value_b},
          {"calib.offset.weight", calib_w}, {"calib.offset.bias", calib_b}};
}

void CalibTransformer::load_params(const Checkpoint& ckpt) { load_named(named_params(), ckpt); }

void CalibTransformer::freeze() {
  for (Tensor& t : params()) t.set_requires_grad(false);
}

Tensor cross_covariance(const Tensor& y, const Tensor& f, const CalibTransformer& t) {
  if (y.rank() != 2 || f.rank() != 2) {
    throw DimensionError("cross_covariance: want [c,hw] scores and [m,hw] features");
  }
  if (y.dim(1) != t.config().token_len || f.dim(1) != t.config().token_len) {
    throw DimensionError("cross_covariance: token length mismatch, heads expect " +
                         std::to_string(t.config().token_len));
  }
  Tensor queries = head(y, t.query_w, t.query_b);  // [c,d]
  Tensor keys = head(f, t.key_w, t.key_b);         // [m,d]
  return matmul(queries, transpose(keys));         // [c,m]
}

ScoreStack calibrate(const ScoreStack& stack, const Tensor& f, const CalibTransformer& t) {
  if (!stack.fused.defined()) throw ContractError("calibrate: fused scores absent");
  Tensor sigma = cross_covariance(stack.fused, f, t);
  Tensor attn = attention_weights(sigma, t.config().scale_before_softmax, t.config().dim);
  Tensor values = head(f, t.value_w, t.value_b);  // [m,d]
  Tensor v = matmul(attn, values);                // [c,d]
  Tensor delta = head(v, t.calib_w, t.calib_b);   // [c,hw]

  ScoreStack out = stack;
  out.delta = delta;
  out.calibrated = add(stack.fused, delta);
  return out;
}

// -------- linear ablation --------

LinearCalibrator::LinearCalibrator(int num_base, int num_novel, bool residual)
    : num_base_(num_base), num_novel_(num_novel), residual_(residual) {
  const int c = 1 + num_base + num_novel;
  if (c < 2) throw ConfigError("LinearCalibrator: degenerate class layout");
  weight_ = zero_param({c, c});
  if (!residual) {
    // identity start: output equals the fused scores
    auto& w = weight_.mutable_data();
    for (int i = 0; i < c; ++i) w[static_cast<size_t>(i) * c + i] = 1.0;
  }
  bias_ = zero_param({c});
}

int LinearCalibrator::param_count() const {
  const int c = weight_.dim(0);
  return c * c + c;
}

std::vector<std::pair<std::string, Tensor>> LinearCalibrator::named_params() const {
  return {{"calib.linear.weight", weight_}, {"calib.linear.bias", bias_}};
}

void LinearCalibrator::load_params(const Checkpoint& ckpt) { load_named(named_params(), ckpt); }

void LinearCalibrator::freeze() {
  weight_.set_requires_grad(false);
  bias_.set_requires_grad(false);
}

std::pair<Tensor, Tensor> LinearCalibrator::aligned_map(int num_base, int num_novel) const {
  if (num_base == num_base_ && num_novel == num_novel_) return {weight_, bias_};

  // The trained map is tied to its [bg | base | novel] layout. Expand it
  // role-blockwise onto the requested layout: same-role diagonals take the
  // trained block's diagonal mean, everything else the block mean.
  const int c_tr = 1 + num_base_ + num_novel_;
  const int c_te = 1 + num_base + num_novel;
  auto role_tr = [&](int i) { return i == 0 ? 0 : (i <= num_base_ ? 1 : 2); };
  auto role_te = [&](int i) { return i == 0 ? 0 : (i <= num_base ? 1 : 2); };

  const auto& w = weight_.data();
  const auto& b = bias_.data();
  double block_sum[3][3] = {};
  double block_cnt[3][3] = {};
  double diag_sum[3] = {};
  double diag_cnt[3] = {};
  for (int i = 0; i < c_tr; ++i) {
    for (int j = 0; j < c_tr; ++j) {
      const int r = role_tr(i), s = role_tr(j);
      if (r == s && i == j) {
        diag_sum[r] += w[static_cast<size_t>(i) * c_tr + j];
        diag_cnt[r] += 1.0;
      } else {
        block_sum[r][s] += w[static_cast<size_t>(i) * c_tr + j];
        block_cnt[r][s] += 1.0;
      }
    }
  }
  double bias_sum[3] = {}, bias_cnt[3] = {};
  for (int i = 0; i < c_tr; ++i) {
    bias_sum[role_tr(i)] += b[i];
    bias_cnt[role_tr(i)] += 1.0;
  }

  std::vector<double> w_out(static_cast<size_t>(c_te) * c_te, 0.0);
  std::vector<double> b_out(c_te, 0.0);
  for (int i = 0; i < c_te; ++i) {
    const int r = role_te(i);
    b_out[i] = bias_cnt[r] > 0 ? bias_sum[r] / bias_cnt[r] : 0.0;
    for (int j = 0; j < c_te; ++j) {
      const int s = role_te(j);
      if (r == s && i == j) {
        w_out[static_cast<size_t>(i) * c_te + j] = diag_cnt[r] > 0 ? diag_sum[r] / diag_cnt[r] : 0.0;
      } else {
        w_out[static_cast<size_t>(i) * c_te + j] =
            block_cnt[r][s] > 0 ? block_sum[r][s] / block_cnt[r][s] : 0.0;
      }
    }
  }
  return {Tensor::from_data({c_te, c_te}, std::move(w_out)),
          Tensor::from_data({c_te}, std::move(b_out))};
}

ScoreStack calibrate_linear(const ScoreStack& stack, const LinearCalibrator& cal) {
  if (!stack.fused.defined()) throw ContractError("calibrate_linear: fused scores absent");
  auto [w, b] = cal.aligned_map(stack.num_base, stack.num_novel);
  Tensor mapped = add_channel_bias(matmul(w, stack.fused), b);  // [c,hw]

  ScoreStack out = stack;
  if (cal.residual()) {
    out.delta = mapped;
    out.calibrated = add(stack.fused, mapped);
  } else {
    out.delta = Tensor();  // no residual structure to preserve
    out.calibrated = mapped;
  }
  return out;
}

// -------- self-attention ablation --------

SelfAttnCalibrator::SelfAttnCalibrator(const CalibConfig& cfg, Rng& rng) : cfg_(cfg) {
  query_w = kaiming_linear(cfg.token_len, cfg.dim, rng);
  query_b = zero_param({cfg.dim});
  key_w = kaiming_linear(cfg.token_len, cfg.dim, rng);
  key_b = zero_param({cfg.dim});
  value_w = kaiming_linear(cfg.token_len, cfg.dim, rng);
  value_b = zero_param({cfg.dim});
  calib_w = zero_param({cfg.dim, cfg.token_len});
  calib_b = zero_param({cfg.token_len});
}

std::vector<Tensor> SelfAttnCalibrator::params() {
  return {query_w, query_b, key_w, key_b, value_w, value_b, calib_w, calib_b};
}

std::vector<std::pair<std::string, Tensor>> SelfAttnCalibrator::named_params() const {
  return {{"calib.sa.query.weight", query_w}, {"calib.sa.query.bias", query_b},
          {"calib.sa.key.weight", key_w},     {"calib.sa.key.bias", key_b},
          {"calib.sa.value.weight", value_w}, {"calib.sa.value.bias", value_b},
          {"calib.sa.offset.weight", calib_w}, {"calib.sa.offset.bias", calib_b}};
}

void SelfAttnCalibrator::load_params(const Checkpoint& ckpt) { load_named(named_params(), ckpt); }

void SelfAttnCalibrator::freeze() {
  for (Tensor& t : params()) t.set_requires_grad(false);
}

ScoreStack calibrate_selfattn(const ScoreStack& stack, const SelfAttnCalibrator& cal) {
  if (!stack.fused.defined()) throw ContractError("calibrate_selfattn: fused scores absent");
  const Tensor& y = stack.fused;
  if (y.dim(1) != cal.config().token_len) {
    throw DimensionError("calibrate_selfattn: token length mismatch");
  }
  Tensor queries = head(y, cal.query_w, cal.query_b);  // [c,d]
  Tensor keys = head(y, cal.key_w, cal.key_b);         // [c,d]
  Tensor sigma = matmul(queries, transpose(keys));     // [c,c]
  Tensor attn = attention_weights(sigma, cal.config().scale_before_softmax, cal.config().dim);
  Tensor v = matmul(attn, head(y, cal.value_w, cal.value_b));  // [c,d]
  Tensor delta = head(v, cal.calib_w, cal.calib_b);            // [c,hw]

  ScoreStack out = stack;
  out.delta = delta;
  out.calibrated = add(y, delta);
  return out;
}

// -------- uniform handle --------

namespace {

class PcnCalibrator : public Calibrator {
 public:
  PcnCalibrator(const CalibConfig& cfg, Rng& rng) : transformer_(cfg, rng) {}
  std::string kind() const override { return "pcn"; }
  ScoreStack apply(const ScoreStack& stack, const Tensor& tap_features) const override {
    return calibrate(stack, tap_features, transformer_);
  }
  std::vector<Tensor> params() override { return transformer_.params(); }
  std::vector<std::pair<std::string, Tensor>> named_params() const override {
    return transformer_.named_params();
  }
  void load_params(const Checkpoint& ckpt) override { transformer_.load_params(ckpt); }
  void freeze() override { transformer_.freeze(); }

 private:
  CalibTransformer transformer_;
};

class LinearWrap : public Calibrator {
 public:
  LinearWrap(int num_base, int num_novel, bool residual)
      : cal_(num_base, num_novel, residual), residual_(residual) {}
  std::string kind() const override { return residual_ ? "linear" : "linear_nores"; }
  ScoreStack apply(const ScoreStack& stack, const Tensor&) const override {
    return calibrate_linear(stack, cal_);
  }
  std::vector<Tensor> params() override { return cal_.params(); }
  std::vector<std::pair<std::string, Tensor>> named_params() const override {
    return cal_.named_params();
  }
  void load_params(const Checkpoint& ckpt) override { cal_.load_params(ckpt); }
  void freeze() override { cal_.freeze(); }

 private:
  LinearCalibrator cal_;
  bool residual_;
};

class SelfAttnWrap : public Calibrator {
 public:
  SelfAttnWrap(const CalibConfig& cfg, Rng& rng) : cal_(cfg, rng) {}
  std::string kind() const override { return "selfattn"; }
  ScoreStack apply(const ScoreStack& stack, const Tensor&) const override {
    return calibrate_selfattn(stack, cal_);
  }
  std::vector<Tensor> params() override { return cal_.params(); }
  std::vector<std::pair<std::string, Tensor>> named_params() const override {
    return cal_.named_params();
  }
  void load_params(const Checkpoint& ckpt) override { cal_.load_params(ckpt); }
  void freeze() override { cal_.freeze(); }

 private:
  SelfAttnCalibrator cal_;
};

}  // namespace

std::unique_ptr<Calibrator> make_calibrator(const std::string& kind,
                                            const CalibratorInit& init, Rng& rng) {
  CalibConfig cfg{init.token_len, init.dim, init.scale_before_softmax};
  if (kind == "pcn") return std::make_unique<PcnCalibrator>(cfg, rng);
  if (kind == "linear") return std::make_unique<LinearWrap>(init.num_base, init.num_novel, true);
  if (kind == "linear_nores") {
    return std::make_unique<LinearWrap>(init.num_base, init.num_novel, false);
  }
  if (kind == "selfattn") return std::make_unique<SelfAttnWrap>(cfg, rng);
  throw ConfigError("unknown calibration variant '" + kind + "'");
}

}  // namespace pcn
