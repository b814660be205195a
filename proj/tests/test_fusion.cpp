#include <doctest.h>

#include <cmath>

#include "pcn/fusion.hpp"
#include "pcn/ops.hpp"
#include "pcn/rng.hpp"

using namespace pcn;

namespace {

Tensor logits_from_probs(std::vector<double> probs, int rows, int cols) {
  for (double& v : probs) v = std::log(v);
  return Tensor::from_data({rows, cols}, std::move(probs));
}

}  // namespace

TEST_CASE("fuse_nsf: union column and background argmax") {
  // one pixel; log-probs reproduce the target softmax outputs
  Tensor base = logits_from_probs({0.7, 0.2, 0.1}, 3, 1);   // bg, b1, b2
  Tensor novel = logits_from_probs({0.4, 0.6}, 2, 1);       // bg, n1
  ScoreStack stack = fuse_nsf(base, novel, 1, 1);

  REQUIRE(stack.fused.shape() == std::vector<int>{4, 1});
  CHECK(stack.fused.data()[0] == doctest::Approx(0.7));
  CHECK(stack.fused.data()[1] == doctest::Approx(0.2));
  CHECK(stack.fused.data()[2] == doctest::Approx(0.1));
  CHECK(stack.fused.data()[3] == doctest::Approx(0.6));

  // columns of the union do NOT sum to 1 (two independent softmaxes)
  double col = 0;
  for (double v : stack.fused.data()) col += v;
  CHECK(col == doctest::Approx(1.6));

  Tensor seg = argmax_segment(stack, ScoreField::kFused);
  CHECK(seg.data()[0] == 0.0);  // background wins
}

TEST_CASE("fuse_nsf: block normalization within 1e-9 and symmetry") {
  Rng rng(3);
  std::vector<double> ld(3 * 5);
  for (double& v : ld) v = rng.uniform(-4, 4);
  Tensor logits = Tensor::from_data({3, 5}, ld);
  ScoreStack stack = fuse_nsf(logits, logits, 1, 5);

  // identical logits into both equal-size blocks give identical softmaxes
  CHECK(stack.base_probs.data() == stack.novel_probs.data());
  for (int col = 0; col < 5; ++col) {
    double sb = 0, sn = 0;
    for (int row = 0; row < 3; ++row) {
      sb += stack.base_probs.data()[row * 5 + col];
      sn += stack.novel_probs.data()[row * 5 + col];
    }
    CHECK(std::abs(sb - 1.0) < 1e-9);
    CHECK(std::abs(sn - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(fuse_nsf(logits, Tensor::zeros({3, 4}), 1, 5), DimensionError);
}

TEST_CASE("fuse_plain: uniform on equal logits, shift invariance, argmax order") {
  Tensor base = Tensor::full({3, 2}, 1.5);
  Tensor novel = Tensor::full({2, 2}, 1.5);
  ScoreStack stack = fuse_plain(base, novel, 1, 2);
  for (double v : stack.fused.data()) CHECK(v == doctest::Approx(0.25));

  Rng rng(9);
  std::vector<double> bd(3 * 4), nd(2 * 4);
  for (double& v : bd) v = rng.uniform(-2, 2);
  for (double& v : nd) v = rng.uniform(-2, 2);
  Tensor b1 = Tensor::from_data({3, 4}, bd);
  Tensor n1 = Tensor::from_data({2, 4}, nd);
  ScoreStack s1 = fuse_plain(b1, n1, 1, 4);

  for (double& v : bd) v += 3.5;
  for (double& v : nd) v += 3.5;
  ScoreStack s2 = fuse_plain(Tensor::from_data({3, 4}, bd), Tensor::from_data({2, 4}, nd), 1, 4);
  for (size_t i = 0; i < s1.fused.data().size(); ++i) {
    CHECK(s1.fused.data()[i] == doctest::Approx(s2.fused.data()[i]).epsilon(1e-9));
  }

  // argmax of the softmax equals argmax of concatenated raw logits
  Tensor seg = argmax_segment(s1, ScoreField::kFused);
  for (int i = 0; i < 4; ++i) {
    double best_v = -1e300;
    int best = -1;
    auto consider = [&](double v, int slot) {
      if (v > best_v) {
        best_v = v;
        best = slot;
      }
    };
    for (int r = 0; r < 3; ++r) consider(b1.data()[r * 4 + i], r);
    consider(n1.data()[4 + i], 3);
    CHECK(static_cast<int>(seg.data()[i]) == best);
  }
}

TEST_CASE("fuse_npf: scale invariance and degenerate zero row") {
  const int m = 8;
  // Tensor handles share storage, so build independent twins from one seed
  auto make_base = [&]() {
    Rng r(12);
    return BaseClassifier(m, 2, r);
  };
  Rng aux(13);
  NovelClassifier novel_clf(m, 1, aux);
  std::vector<double> fd(m * 4 * 4);
  for (double& v : fd) v = aux.uniform(0, 1);
  Tensor feats = Tensor::from_data({m, 4, 4}, fd);

  BaseClassifier base_clf = make_base();
  ScoreStack a = fuse_npf(base_clf, novel_clf, feats);
  CHECK(a.fused.shape() == std::vector<int>{4, 16});
  for (int col = 0; col < 16; ++col) {
    double s = 0;
    for (int row = 0; row < 4; ++row) s += a.fused.data()[row * 16 + col];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }

  // scaling one class's weight vector by 10 changes nothing
  BaseClassifier scaled = make_base();
  {
    Tensor w = scaled.weight();
    auto& wd = w.mutable_data();
    for (int k = 0; k < m; ++k) wd[1 * m + k] *= 10.0;
  }
  ScoreStack b = fuse_npf(scaled, novel_clf, feats);
  for (size_t i = 0; i < a.fused.data().size(); ++i) {
    CHECK(a.fused.data()[i] == doctest::Approx(b.fused.data()[i]).epsilon(1e-12));
  }

  // zero weight vector is reported
  BaseClassifier zeroed = make_base();
  {
    Tensor w = zeroed.weight();
    auto& wd = w.mutable_data();
    for (int k = 0; k < m; ++k) wd[0 * m + k] = 0.0;
  }
  CHECK_THROWS_AS(fuse_npf(zeroed, novel_clf, feats), NumericError);
}

TEST_CASE("argmax_segment: tie-break to lowest slot and missing-field error") {
  ScoreStack stack;
  stack.num_base = 2;
  stack.num_novel = 1;
  stack.latent_h = 1;
  stack.latent_w = 2;
  stack.fused = Tensor::from_data({4, 2}, {0.5, 0.1, 0.9, 0.9, 0.9, 0.2, 0.1, 0.9});
  Tensor seg = argmax_segment(stack, ScoreField::kFused);
  CHECK(seg.data()[0] == 1.0);  // slots 1 and 2 tie at 0.9 -> slot 1
  CHECK(seg.data()[1] == 1.0);  // slots 1 and 3 tie at 0.9 -> slot 1

  CHECK_THROWS_AS(argmax_segment(stack, ScoreField::kCalibrated), ContractError);
}
