#include "pcn/grad_check.hpp"

#include <cmath>
#include <memory>

#include "pcn/calibration.hpp"
#include "pcn/ops.hpp"
#include "pcn/rng.hpp"

namespace pcn {

GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& build_loss,
    std::vector<Tensor> leaves, double eps, double floor) {
  for (Tensor& l : leaves) l.set_requires_grad(true);

  Tape::current().reset();
  Tensor loss = build_loss(leaves);
  for (Tensor& l : leaves) l.zero_grad();
  backward(loss);

  GradCheckReport report;
  for (Tensor& leaf : leaves) {
    const std::vector<double> analytic = leaf.grad();
    auto& data = leaf.mutable_data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      Tape::current().reset();
      data[i] = saved + eps;
      const double up = build_loss(leaves).value();
      Tape::current().reset();
      data[i] = saved - eps;
      const double down = build_loss(leaves).value();
      data[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(fd), floor});
      const double rel = std::abs(analytic[i] - fd) / denom;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.checked_values;
    }
  }
  Tape::current().reset();
  return report;
}

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data));
}

// Values bounded away from zero so relu's kink never sits on a sample point.
Tensor random_tensor_off_zero(std::vector<int> shape, Rng& rng) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) {
    const double mag = 0.2 + rng.uniform();
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

Tensor random_labels(int n, int classes, Rng& rng) {
  std::vector<double> data(n);
  for (double& v : data) v = static_cast<double>(rng.uniform_int(0, classes - 1));
  return Tensor::from_data({n}, std::move(data));
}

}  // namespace

std::vector<GradCheckCase> run_grad_check_battery(uint64_t seed, int trials,
                                                  double tolerance) {
  struct Case {
    std::string name;
    std::function<GradCheckReport(Rng&)> run;
  };

  std::vector<Case> cases;

  cases.push_back({"matmul", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 5}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      return sum(mul(matmul(ls[0], ls[1]), matmul(ls[0], ls[1])));
    }, {a, b});
  }});

  cases.push_back({"transpose", [](Rng& rng) {
    auto a = random_tensor({3, 5}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      return sum(mul(transpose(ls[0]), transpose(ls[0])));
    }, {a});
  }});

  cases.push_back({"add_sub_mul_scale", [](Rng& rng) {
    auto a = random_tensor({2, 3}, rng);
    auto b = random_tensor({2, 3}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      Tensor t = add(scale(ls[0], 1.7), mul(ls[1], sub(ls[0], ls[1])));
      return sum(mul(t, t));
    }, {a, b});
  }});

  cases.push_back({"add_rowvec", [](Rng& rng) {
    auto m = random_tensor({3, 4}, rng);
    auto v = random_tensor({4}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      Tensor t = add_rowvec(ls[0], ls[1]);
      return sum(mul(t, t));
    }, {m, v});
  }});

  cases.push_back({"add_channel_bias", [](Rng& rng) {
    auto t = random_tensor({3, 2, 2}, rng);
    auto b = random_tensor({3}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      Tensor u = add_channel_bias(ls[0], ls[1]);
      return sum(mul(u, u));
    }, {t, b});
  }});

  cases.push_back({"relu", [](Rng& rng) {
    auto a = random_tensor_off_zero({4, 5}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      Tensor t = relu(ls[0]);
      return sum(mul(t, t));
    }, {a});
  }});

  cases.push_back({"softmax", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng, -2.0, 2.0);
    auto w = random_tensor({3, 4}, rng);
    return grad_check([w](const std::vector<Tensor>& ls) {
      return sum(mul(softmax(ls[0], 0), w));
    }, {a});
  }});

  cases.push_back({"softmax_axis1", [](Rng& rng) {
    auto a = random_tensor({2, 5}, rng, -2.0, 2.0);
    return grad_check([](const std::vector<Tensor>& ls) {
      Tensor s = softmax(ls[0], 1);
      return sum(mul(s, s));
    }, {a});
  }});

  cases.push_back({"cross_entropy", [](Rng& rng) {
    auto s = random_tensor({4, 6}, rng, -2.0, 2.0);
    auto t = random_labels(6, 4, rng);
    return grad_check([t](const std::vector<Tensor>& ls) {
      return cross_entropy(ls[0], t);
    }, {s});
  }});

  cases.push_back({"cross_entropy_weighted_ignore", [](Rng& rng) {
    auto s = random_tensor({3, 8}, rng, -2.0, 2.0);
    std::vector<double> labels = {0, 1, 2, 0, 9, 1, 2, 9};  // 9 = ignored
    auto t = Tensor::from_data({8}, labels);
    auto w = Tensor::from_data({3}, {0.5, 2.0, 1.5});
    return grad_check([t, w](const std::vector<Tensor>& ls) {
      return cross_entropy(ls[0], t, w, 9);
    }, {s});
  }});

  cases.push_back({"softmax_cross_entropy_composite", [](Rng& rng) {
    auto s = random_tensor({3, 5}, rng, -2.0, 2.0);
    auto t = random_labels(5, 3, rng);
    return grad_check([t](const std::vector<Tensor>& ls) {
      // softmax feeding CE-on-logits exercises both backward paths
      Tensor p = softmax(ls[0], 0);
      return cross_entropy(scale(p, 3.0), t);
    }, {s});
  }});

  cases.push_back({"conv2d_k3", [](Rng& rng) {
    auto in = random_tensor({2, 5, 5}, rng);
    auto k = random_tensor({3, 2, 3, 3}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      Tensor y = conv2d(ls[0], ls[1], 1, 1);
      return sum(mul(y, y));
    }, {in, k});
  }});

  cases.push_back({"conv2d_k3_stride2", [](Rng& rng) {
    auto in = random_tensor({2, 6, 6}, rng);
    auto k = random_tensor({2, 2, 3, 3}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      Tensor y = conv2d(ls[0], ls[1], 1, 2);
      return sum(mul(y, y));
    }, {in, k});
  }});

  cases.push_back({"conv2d_k1", [](Rng& rng) {
    auto in = random_tensor({3, 4, 4}, rng);
    auto k = random_tensor({2, 3, 1, 1}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      Tensor y = conv2d(ls[0], ls[1], 0, 1);
      return sum(mul(y, y));
    }, {in, k});
  }});

  cases.push_back({"concat_reshape", [](Rng& rng) {
    auto a = random_tensor({2, 3}, rng);
    auto b = random_tensor({2, 3}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      Tensor t = concat({ls[0], ls[1]}, 1);
      Tensor u = reshape(t, {3, 4});
      return sum(mul(u, u));
    }, {a, b});
  }});

  cases.push_back({"adaptive_avg_pool", [](Rng& rng) {
    auto t = random_tensor({2, 5, 7}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      Tensor p = adaptive_avg_pool(ls[0], 2, 3);
      return sum(mul(p, p));
    }, {t});
  }});

  cases.push_back({"upsample_nearest", [](Rng& rng) {
    auto t = random_tensor({2, 3, 3}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      Tensor u = upsample_nearest(ls[0], 2);
      return sum(mul(u, u));
    }, {t});
  }});

  cases.push_back({"mean", [](Rng& rng) {
    auto t = random_tensor({3, 4}, rng);
    return grad_check([](const std::vector<Tensor>& ls) {
      return mean(mul(ls[0], ls[0]));
    }, {t});
  }});

  // tiny-episode composite: cross covariance, value transform, offset head,
  // residual add, then pixel cross entropy; gradients w.r.t. all head params
  cases.push_back({"calibration_composite", [](Rng& rng) {
    const int c = 4, m = 6, hw = 9, d = 3;
    CalibConfig cc{hw, d, false};
    Rng init(rng.next_u64());
    auto t = std::make_shared<CalibTransformer>(cc, init);
    // a zero offset head would zero out the other heads' gradients; give it
    // random weights so every path carries signal
    for (Tensor& p : std::vector<Tensor>{t->calib_w, t->calib_b}) {
      for (double& v : p.mutable_data()) v = 0.5 * rng.normal();
    }
    ScoreStack stack;
    stack.fused = random_tensor({c, hw}, rng, 0.0, 1.0);
    stack.num_base = 2;
    stack.num_novel = 1;
    stack.latent_h = 3;
    stack.latent_w = 3;
    Tensor f = random_tensor({m, hw}, rng);
    Tensor targets = random_labels(hw * 4, c, rng);  // after 2x upsampling
    return grad_check([t, stack, f, targets](const std::vector<Tensor>&) {
      ScoreStack out = calibrate(stack, f, *t);
      Tensor grid = reshape(out.calibrated, {out.num_classes(), 3, 3});
      Tensor up = upsample_nearest(grid, 2);
      return cross_entropy(reshape(up, {out.num_classes(), 36}), targets);
    }, t->params());
  }});

  cases.push_back({"selfattn_composite", [](Rng& rng) {
    const int c = 4, hw = 9, d = 3;
    CalibConfig cc{hw, d, false};
    Rng init(rng.next_u64());
    auto cal = std::make_shared<SelfAttnCalibrator>(cc, init);
    for (Tensor& p : std::vector<Tensor>{cal->calib_w, cal->calib_b}) {
      for (double& v : p.mutable_data()) v = 0.5 * rng.normal();
    }
    ScoreStack stack;
    stack.fused = random_tensor({c, hw}, rng, 0.0, 1.0);
    stack.num_base = 2;
    stack.num_novel = 1;
    stack.latent_h = 3;
    stack.latent_w = 3;
    Tensor targets = random_labels(hw, c, rng);
    return grad_check([cal, stack, targets](const std::vector<Tensor>&) {
      ScoreStack out = calibrate_selfattn(stack, *cal);
      return cross_entropy(out.calibrated, targets);
    }, cal->params());
  }});

  cases.push_back({"linear_calibrator", [](Rng& rng) {
    auto cal = std::make_shared<LinearCalibrator>(2, 1, true);
    for (Tensor& p : cal->params()) {
      for (double& v : p.mutable_data()) v = 0.5 * rng.normal();
    }
    ScoreStack stack;
    stack.fused = random_tensor({4, 9}, rng, 0.0, 1.0);
    stack.num_base = 2;
    stack.num_novel = 1;
    stack.latent_h = 3;
    stack.latent_w = 3;
    Tensor targets = random_labels(9, 4, rng);
    return grad_check([cal, stack, targets](const std::vector<Tensor>&) {
      ScoreStack out = calibrate_linear(stack, *cal);
      return cross_entropy(out.calibrated, targets);
    }, cal->params());
  }});

  std::vector<GradCheckCase> results;
  for (const Case& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
      Rng rng(derive_seed(seed, streams::kGradCheck, static_cast<uint64_t>(trial)));
      worst = std::max(worst, c.run(rng).max_rel_error);
    }
    results.push_back({c.name, worst, worst <= tolerance});
  }
  return results;
}

}  // namespace pcn
