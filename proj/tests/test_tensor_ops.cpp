#include <doctest.h>

#include <cmath>

#include "pcn/ops.hpp"
#include "pcn/rng.hpp"

using namespace pcn;

namespace {

// independent sliding-window oracle for conv2d
std::vector<double> conv_oracle(const std::vector<double>& in, int cin, int h, int w,
                                const std::vector<double>& k, int cout, int ks,
                                int pad, int stride) {
  const int oh = (h + 2 * pad - ks) / stride + 1;
  const int ow = (w + 2 * pad - ks) / stride + 1;
  std::vector<double> out(static_cast<size_t>(cout) * oh * ow, 0.0);
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < ks; ++ky)
            for (int kx = 0; kx < ks; ++kx) {
              const int iy = oy * stride + ky - pad;
              const int ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += k[((co * cin + ci) * ks + ky) * ks + kx] * in[(ci * h + iy) * w + ix];
            }
        out[(co * oh + oy) * ow + ox] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("matmul worked example and identities") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(a, b);
  CHECK(c.data() == std::vector<double>{19, 22, 43, 50});

  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(a, eye).data() == a.data());
  Tensor zero = Tensor::zeros({2, 3});
  Tensor az = matmul(a, zero);
  for (double v : az.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("conv2d trivial and derived examples") {
  // 1x1 identity kernel passes input through
  Tensor in = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  Tensor k1 = Tensor::from_data({1, 1, 1, 1}, {1});
  CHECK(conv2d(in, k1, 0, 1).data() == in.data());

  // all-zero kernel gives all-zero output
  Tensor kz = Tensor::zeros({2, 1, 3, 3});
  Tensor zout = conv2d(in, kz, 1, 1);
  for (double v : zout.data()) CHECK(v == 0.0);

  // constant-1 5x5 input, 3x3 ones kernel, padding 1: interior 9, corners 4
  Tensor ones = Tensor::full({1, 5, 5}, 1.0);
  Tensor k3 = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor out = conv2d(ones, k3, 1, 1);
  CHECK(out.at({0, 2, 2}) == 9.0);
  CHECK(out.at({0, 0, 0}) == 4.0);
  CHECK(out.at({0, 0, 2}) == 6.0);

  // random case against the brute-force oracle
  Rng rng(7);
  std::vector<double> ind(2 * 6 * 5), kd(3 * 2 * 3 * 3);
  for (double& v : ind) v = rng.normal();
  for (double& v : kd) v = rng.normal();
  Tensor rin = Tensor::from_data({2, 6, 5}, ind);
  Tensor rk = Tensor::from_data({3, 2, 3, 3}, kd);
  for (int stride : {1, 2}) {
    Tensor got = conv2d(rin, rk, 1, stride);
    auto want = conv_oracle(ind, 2, 6, 5, kd, 3, 3, 1, stride);
    REQUIRE(got.data().size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) CHECK(got.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(conv2d(in, Tensor::zeros({1, 2, 3, 3}), 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(in, Tensor::zeros({1, 1, 5, 5}), 2, 1), DimensionError);
}

TEST_CASE("softmax examples and stability") {
  Tensor flat = softmax(Tensor::from_data({3}, {0, 0, 0}), 0);
  for (double v : flat.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // exp-normalize oracle for [2,1,0]
  const double e2 = std::exp(2.0), e1 = std::exp(1.0), e0 = 1.0;
  const double z = e2 + e1 + e0;
  Tensor s = softmax(Tensor::from_data({3}, {2, 1, 0}), 0);
  CHECK(s.data()[0] == doctest::Approx(e2 / z).epsilon(1e-14));
  CHECK(s.data()[1] == doctest::Approx(e1 / z).epsilon(1e-14));
  CHECK(s.data()[2] == doctest::Approx(e0 / z).epsilon(1e-14));
  CHECK(s.data()[0] == doctest::Approx(0.66524).epsilon(1e-4));
  CHECK(s.data()[1] == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(s.data()[2] == doctest::Approx(0.09003).epsilon(1e-4));

  // shift invariance
  Rng rng(3);
  std::vector<double> logits(12);
  for (double& v : logits) v = rng.uniform(-3, 3);
  Tensor base = softmax(Tensor::from_data({3, 4}, logits), 0);
  for (double& v : logits) v += 17.25;
  Tensor shifted = softmax(Tensor::from_data({3, 4}, logits), 0);
  for (size_t i = 0; i < base.data().size(); ++i) {
    CHECK(base.data()[i] == doctest::Approx(shifted.data()[i]).epsilon(1e-12));
  }

  // columns sum to 1 within 1e-9 even for magnitude-1e3 logits
  Tensor big = softmax(Tensor::from_data({3, 2}, {1000, -1000, 0, 500, 250, -750}), 0);
  for (int col = 0; col < 2; ++col) {
    double sum = 0;
    for (int row = 0; row < 3; ++row) sum += big.data()[row * 2 + col];
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }

  CHECK_THROWS_AS(softmax(Tensor::from_data({2}, {std::nan(""), 0.0}), 0), NumericError);
  CHECK_THROWS_AS(softmax(flat, 3), DimensionError);
}

TEST_CASE("cross_entropy examples") {
  // uniform scores over 3 classes -> ln 3
  Tensor uni = Tensor::zeros({3, 4});
  Tensor target = Tensor::from_data({4}, {0, 1, 2, 1});
  CHECK(cross_entropy(uni, target).value() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  // one-hot-correct huge margin -> loss ~ 0
  Tensor sharp = Tensor::from_data({2, 1}, {100.0, -100.0});
  CHECK(cross_entropy(sharp, Tensor::from_data({1}, {0})).value() < 1e-12);

  // weighted two-pixel oracle: (1*L1 + 2*L2) / 3
  Tensor scores = Tensor::from_data({2, 2}, {0.3, -0.2, -1.1, 0.9});
  Tensor tgt = Tensor::from_data({2}, {0, 1});
  Tensor w = Tensor::from_data({2}, {1.0, 2.0});
  auto pixel_loss = [&](int pix, int label) {
    const double a = scores.data()[pix], b = scores.data()[2 + pix];
    const double lse = std::log(std::exp(a) + std::exp(b));
    return lse - (label == 0 ? a : b);
  };
  const double expected = (1.0 * pixel_loss(0, 0) + 2.0 * pixel_loss(1, 1)) / 3.0;
  CHECK(cross_entropy(scores, tgt, w).value() == doctest::Approx(expected).epsilon(1e-12));

  // uniform weights match the unweighted loss exactly
  Tensor ones = Tensor::from_data({2}, {1.0, 1.0});
  CHECK(cross_entropy(scores, tgt, ones).value() == cross_entropy(scores, tgt).value());

  // ignore_id drops pixels
  Tensor tgt_ign = Tensor::from_data({2}, {0, 9});
  const double only_first = pixel_loss(0, 0);
  CHECK(cross_entropy(scores, tgt_ign, std::nullopt, 9).value() ==
        doctest::Approx(only_first).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy(scores, Tensor::from_data({2}, {0, 5})), LabelError);
}

TEST_CASE("elementwise and shape ops") {
  Tensor r = relu(Tensor::from_data({3}, {-1, 0, 2}));
  CHECK(r.data() == std::vector<double>{0, 0, 2});

  // adaptive pool of a constant map is constant for any bin grid
  Tensor cmap = Tensor::full({2, 6, 6}, 3.25);
  for (int bins : {1, 2, 3}) {
    Tensor pooled_const = adaptive_avg_pool(cmap, bins, bins);
    for (double v : pooled_const.data()) CHECK(v == doctest::Approx(3.25));
  }
  // uneven partitions: windows [floor(i*n/b), ceil((i+1)*n/b)) overlap on odd sizes
  Tensor grid = Tensor::from_data({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor pooled = adaptive_avg_pool(grid, 2, 2);
  CHECK(pooled.at({0, 0, 0}) == doctest::Approx((1. + 2 + 4 + 5) / 4));
  CHECK(pooled.at({0, 1, 1}) == doctest::Approx((5. + 6 + 8 + 9) / 4));

  // index-replication oracle for upsample
  Tensor up = upsample_nearest(Tensor::from_data({1, 2, 2}, {1, 2, 3, 4}), 2);
  CHECK(up.data() == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});

  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(transpose(t).data() == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(reshape(t, {3, 2}).data() == t.data());
  CHECK_THROWS_AS(reshape(t, {4, 2}), DimensionError);

  Tensor cat = concat({t, t}, 0);
  CHECK(cat.shape() == std::vector<int>{4, 3});
  Tensor cat1 = concat({t, t}, 1);
  CHECK(cat1.shape() == std::vector<int>{2, 6});
  CHECK(cat1.at({1, 3}) == 4.0);

  CHECK(add_rowvec(t, Tensor::from_data({3}, {10, 20, 30})).data() ==
        std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(add_channel_bias(t, Tensor::from_data({2}, {1, -1})).data() ==
        std::vector<double>{2, 3, 4, 3, 4, 5});

  CHECK_THROWS_AS(add(t, Tensor::zeros({3, 2})), DimensionError);
  CHECK(sum(t).value() == 21.0);
  CHECK(mean(t).value() == 3.5);
}
