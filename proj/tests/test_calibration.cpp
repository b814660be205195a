#include <doctest.h>

#include <cmath>

#include "pcn/calibration.hpp"
#include "pcn/ops.hpp"

using namespace pcn;

namespace {

ScoreStack random_stack(int nb, int nn, int h, int w, Rng& rng) {
  const int c = 1 + nb + nn;
  const int hw = h * w;
  std::vector<double> d(static_cast<size_t>(c) * hw);
  for (double& v : d) v = rng.uniform(0, 1);
  ScoreStack s;
  s.fused = Tensor::from_data({c, hw}, std::move(d));
  s.num_base = nb;
  s.num_novel = nn;
  s.latent_h = h;
  s.latent_w = w;
  return s;
}

Tensor random_features(int m, int hw, Rng& rng) {
  std::vector<double> d(static_cast<size_t>(m) * hw);
  for (double& v : d) v = rng.uniform(-1, 1);
  return Tensor::from_data({m, hw}, std::move(d));
}

Tensor permute_rows(const Tensor& t, const std::vector<int>& perm) {
  const int rows = t.dim(0), cols = t.dim(1);
  std::vector<double> out(static_cast<size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    std::copy(t.data().begin() + static_cast<size_t>(perm[r]) * cols,
              t.data().begin() + static_cast<size_t>(perm[r] + 1) * cols,
              out.begin() + static_cast<size_t>(r) * cols);
  }
  return Tensor::from_data({rows, cols}, std::move(out));
}

}  // namespace

TEST_CASE("cross_covariance: shape contract and zero case") {
  const int hw = 12, d = 4;
  Rng rng(1);
  CalibTransformer t({hw, d, false}, rng);
  Rng data_rng(2);
  ScoreStack stack = random_stack(3, 2, 3, 4, data_rng);
  Tensor f = random_features(7, hw, data_rng);

  Tensor sigma = cross_covariance(stack.fused, f, t);
  CHECK(sigma.shape() == std::vector<int>{6, 7});  // c x m

  // zero scores with zero query bias give zero sigma
  Tensor zy = Tensor::zeros({6, hw});
  Tensor zsigma = cross_covariance(zy, f, t);  // query bias is zero-initialized
  for (double v : zsigma.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(cross_covariance(stack.fused, random_features(7, 9, data_rng), t),
                  DimensionError);
}

TEST_CASE("cross_covariance: hand-computed 2x3 oracle") {
  const int c = 2, m = 3, hw = 4, d = 2;
  Rng rng(3);
  CalibTransformer t({hw, d, false}, rng);
  // hand-set heads
  std::vector<double> wq = {1, 0, 0, 1, 1, -1, 0, 2};   // [4,2]
  std::vector<double> bq = {0.5, -0.5};
  std::vector<double> wk = {0, 1, 1, 0, 2, 0, 0, -1};   // [4,2]
  std::vector<double> bk = {1.0, 0.0};
  t.query_w.mutable_data() = wq;
  t.query_b.mutable_data() = bq;
  t.key_w.mutable_data() = wk;
  t.key_b.mutable_data() = bk;

  std::vector<double> yd = {1, 2, 3, 4, -1, 0, 1, 2};       // [2,4]
  std::vector<double> fd = {1, 1, 0, 0, 0, 1, 0, 1, 2, 0, 1, -1};  // [3,4]

  // independent little oracle: row-by-row affine then dot products
  auto affine = [](const std::vector<double>& rows, int nrows, const std::vector<double>& w,
                   const std::vector<double>& b, int in, int out) {
    std::vector<double> res(static_cast<size_t>(nrows) * out, 0.0);
    for (int r = 0; r < nrows; ++r)
      for (int o = 0; o < out; ++o) {
        double acc = b[o];
        for (int i = 0; i < in; ++i) acc += rows[r * in + i] * w[i * out + o];
        res[r * out + o] = acc;
      }
    return res;
  };
  auto q = affine(yd, c, wq, bq, hw, d);
  auto k = affine(fd, m, wk, bk, hw, d);
  std::vector<double> want(c * m);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < m; ++j) want[i * m + j] = q[i * d] * k[j * d] + q[i * d + 1] * k[j * d + 1];

  Tensor sigma = cross_covariance(Tensor::from_data({c, hw}, yd),
                                  Tensor::from_data({m, hw}, fd), t);
  for (int i = 0; i < c * m; ++i) CHECK(sigma.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("calibrate: zero offset head reproduces the fused scores bit-for-bit") {
  const int hw = 16;
  Rng rng(4);
  CalibTransformer t({hw, 8, false}, rng);  // offset head zero-initialized
  Rng data_rng(5);
  ScoreStack stack = random_stack(4, 2, 4, 4, data_rng);
  Tensor f = random_features(6, hw, data_rng);

  ScoreStack out = calibrate(stack, f, t);
  CHECK(out.calibrated.data() == stack.fused.data());  // bitwise
  for (double v : out.delta.data()) CHECK(v == 0.0);
}

TEST_CASE("calibrate: residual structure is exact") {
  const int hw = 16;
  Rng rng(6);
  CalibTransformer t({hw, 8, false}, rng);
  // non-trivial offset head
  for (double& v : t.calib_w.mutable_data()) v = 0.3 * rng.normal();
  for (double& v : t.calib_b.mutable_data()) v = 0.3 * rng.normal();

  Rng data_rng(7);
  ScoreStack stack = random_stack(3, 2, 4, 4, data_rng);
  Tensor f = random_features(5, hw, data_rng);
  ScoreStack out = calibrate(stack, f, t);

  REQUIRE(out.delta.defined());
  for (int i = 0; i < out.calibrated.size(); ++i) {
    // y_calib == y_fused + delta with identical rounding
    CHECK(out.calibrated.data()[i] == stack.fused.data()[i] + out.delta.data()[i]);
  }
}

TEST_CASE("calibrate: feature-channel permutation invariance within 1e-9") {
  const int hw = 16, m = 7;
  Rng rng(8);
  CalibTransformer t({hw, 6, false}, rng);
  for (double& v : t.calib_w.mutable_data()) v = 0.3 * rng.normal();

  Rng data_rng(9);
  ScoreStack stack = random_stack(3, 1, 4, 4, data_rng);
  Tensor f = random_features(m, hw, data_rng);

  std::vector<int> perm = {3, 0, 6, 2, 5, 1, 4};
  Tensor fp = permute_rows(f, perm);

  ScoreStack a = calibrate(stack, f, t);
  ScoreStack b = calibrate(stack, fp, t);
  for (int i = 0; i < a.calibrated.size(); ++i) {
    CHECK(std::abs(a.calibrated.data()[i] - b.calibrated.data()[i]) < 1e-9);
  }
}

TEST_CASE("calibrate: class-token permutation equivariance within 1e-9") {
  const int hw = 16;
  Rng rng(10);
  CalibTransformer t({hw, 6, false}, rng);
  for (double& v : t.calib_w.mutable_data()) v = 0.3 * rng.normal();
  for (double& v : t.calib_b.mutable_data()) v = 0.3 * rng.normal();

  Rng data_rng(11);
  ScoreStack stack = random_stack(3, 1, 4, 4, data_rng);  // c = 5
  Tensor f = random_features(4, hw, data_rng);

  std::vector<int> perm = {4, 2, 0, 3, 1};
  ScoreStack permuted = stack;
  permuted.fused = permute_rows(stack.fused, perm);

  Tensor delta = calibrate(stack, f, t).delta;
  Tensor delta_p = calibrate(permuted, f, t).delta;
  Tensor want = permute_rows(delta, perm);
  for (int i = 0; i < want.size(); ++i) {
    CHECK(std::abs(delta_p.data()[i] - want.data()[i]) < 1e-9);
  }
}

TEST_CASE("calibrate: sqrt(d) placement flag changes the result") {
  const int hw = 9;
  Rng rng(12);
  CalibTransformer post({hw, 4, false}, rng);
  CalibTransformer pre({hw, 4, true}, rng);
  // same weights in both
  auto src = post.named_params();
  auto dst = pre.named_params();
  for (size_t i = 0; i < src.size(); ++i) {
    Tensor d = dst[i].second;
    d.mutable_data() = src[i].second.data();
  }
  for (Tensor p : {post.calib_w, pre.calib_w}) {
    for (double& v : p.mutable_data()) v = 0.5;
  }

  Rng data_rng(13);
  ScoreStack stack = random_stack(2, 1, 3, 3, data_rng);
  Tensor f = random_features(5, hw, data_rng);
  Tensor a = calibrate(stack, f, post).calibrated;
  Tensor b = calibrate(stack, f, pre).calibrated;
  double diff = 0;
  for (int i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a.data()[i] - b.data()[i]));
  CHECK(diff > 1e-9);  // the two placements are genuinely different operators
}

TEST_CASE("calibrate_linear: identity and zero starts, parameter count") {
  Rng data_rng(14);
  ScoreStack stack = random_stack(2, 1, 3, 3, data_rng);  // c = 4

  LinearCalibrator with_res(2, 1, true);  // zero map start
  ScoreStack a = calibrate_linear(stack, with_res);
  CHECK(a.calibrated.data() == stack.fused.data());
  CHECK(a.delta.defined());

  LinearCalibrator no_res(2, 1, false);  // identity map start
  ScoreStack b = calibrate_linear(stack, no_res);
  for (int i = 0; i < b.calibrated.size(); ++i) {
    CHECK(b.calibrated.data()[i] == doctest::Approx(stack.fused.data()[i]).epsilon(1e-12));
  }
  CHECK(!b.delta.defined());

  CHECK(with_res.param_count() == 4 * 4 + 4);  // c^2 + c
}

TEST_CASE("calibrate_linear: role-block expansion to a larger class layout") {
  LinearCalibrator cal(2, 1, true);  // trained at c = 4
  {
    Tensor w = cal.params()[0];
    auto& wd = w.mutable_data();
    // block structure: distinct diag/off-diag values inside base-base block
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) wd[i * 4 + j] = (i == j) ? 2.0 : 0.5;
  }
  auto [w, b] = cal.aligned_map(3, 2);  // expand to c = 6
  CHECK(w.shape() == std::vector<int>{6, 6});
  CHECK(w.data()[0] == doctest::Approx(2.0));          // bg diag
  CHECK(w.data()[1 * 6 + 1] == doctest::Approx(2.0));  // base diag
  CHECK(w.data()[1 * 6 + 2] == doctest::Approx(0.5));  // base off-diag
  CHECK(w.data()[4 * 6 + 4] == doctest::Approx(2.0));  // novel diag
  CHECK(b.shape() == std::vector<int>{6});

  // applying to the larger stack works end to end
  Rng data_rng(15);
  ScoreStack big = random_stack(3, 2, 3, 3, data_rng);
  ScoreStack out = calibrate_linear(big, cal);
  CHECK(out.calibrated.shape() == big.fused.shape());
}

TEST_CASE("calibrate_selfattn: sigma is c x c, zero offset start, equivariance") {
  const int hw = 9;
  Rng rng(16);
  SelfAttnCalibrator cal({hw, 4, false}, rng);
  Rng data_rng(17);
  ScoreStack stack = random_stack(3, 1, 3, 3, data_rng);  // c = 5

  ScoreStack out = calibrate_selfattn(stack, cal);
  CHECK(out.calibrated.data() == stack.fused.data());  // zero offset head

  // sigma shape: queries x keys over class tokens
  Tensor q = add_rowvec(matmul(stack.fused, cal.query_w), cal.query_b);
  Tensor k = add_rowvec(matmul(stack.fused, cal.key_w), cal.key_b);
  CHECK(matmul(q, transpose(k)).shape() == std::vector<int>{5, 5});

  // class-row permutation equivariance of the offset
  for (double& v : cal.calib_w.mutable_data()) v = 0.4 * rng.normal();
  std::vector<int> perm = {1, 0, 4, 3, 2};
  ScoreStack permuted = stack;
  permuted.fused = permute_rows(stack.fused, perm);
  Tensor delta = calibrate_selfattn(stack, cal).delta;
  Tensor delta_p = calibrate_selfattn(permuted, cal).delta;
  Tensor want = permute_rows(delta, perm);
  for (int i = 0; i < want.size(); ++i) {
    CHECK(std::abs(delta_p.data()[i] - want.data()[i]) < 1e-9);
  }
}

TEST_CASE("make_calibrator dispatch and checkpoint round trip") {
  CalibratorInit init;
  init.token_len = 9;
  init.dim = 4;
  init.num_base = 2;
  init.num_novel = 1;
  Rng rng(18);
  for (const std::string kind : {"pcn", "linear", "linear_nores", "selfattn"}) {
    auto cal = make_calibrator(kind, init, rng);
    CHECK(cal->kind() == kind);
    CHECK(!cal->params().empty());
  }
  CHECK_THROWS_AS(make_calibrator("what", init, rng), ConfigError);
}
