#include <doctest.h>

#include <cmath>

#include "pcn/classifiers.hpp"
#include "pcn/ops.hpp"
#include "pcn/synth_data.hpp"

using namespace pcn;

namespace {

SynthConfig one_class_config() {
  SynthConfig cfg;
  cfg.image_size = 32;  // latent 16: boundary cells stay a small fraction
  cfg.num_classes = 2;  // one base class, one held-out novel
  cfg.novel_ids = {2};
  cfg.train_images = 12;
  cfg.test_images = 4;
  cfg.noise_sigma = 0.02;
  return cfg;
}

BackboneConfig small_backbone() {
  BackboneConfig cfg;
  cfg.trunk_channels = {8, 8, 16};
  cfg.fused_channels = 16;
  cfg.ppm_branch_channels = 8;
  cfg.input_size = 32;
  return cfg;
}

double pixel_accuracy(const Backbone& bb, const BaseClassifier& clf, const SegDataset& ds) {
  const LabelSpace space(ds.split.base_ids);
  const int up = bb.config().input_size / bb.latent_h();
  int64_t hits = 0, total = 0;
  for (const SegSample& s : ds.train) {
    Tensor lg = upsample_nearest(clf.logits(bb.features(s.image)), up);
    Tensor want = space.relabel(s.mask, false);
    const int c = lg.dim(0), hw = lg.dim(1) * lg.dim(2);
    for (int i = 0; i < hw; ++i) {
      int best = 0;
      for (int k = 1; k < c; ++k) {
        if (lg.data()[k * hw + i] > lg.data()[best * hw + i]) best = k;
      }
      hits += best == static_cast<int>(want.data()[i]);
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

// synthetic separable features: class-k pixels spike channel k
std::pair<Tensor, Tensor> synthetic_support(int m, int latent, int up, int num_classes,
                                            Rng& rng) {
  std::vector<double> feats(static_cast<size_t>(m) * latent * latent);
  std::vector<double> mask(static_cast<size_t>(latent * up) * latent * up, 0.0);
  for (int y = 0; y < latent; ++y) {
    for (int x = 0; x < latent; ++x) {
      int label = 0;
      if (x >= latent / 2 && y < latent / 2) label = 1;
      if (x < latent / 2 && y >= latent / 2 && num_classes >= 2) label = 2;
      for (int ch = 0; ch < m; ++ch) {
        const double base = (ch == label) ? 2.0 : 0.0;
        feats[(static_cast<size_t>(ch) * latent + y) * latent + x] = base + 0.1 * rng.normal();
      }
      for (int dy = 0; dy < up; ++dy)
        for (int dx = 0; dx < up; ++dx)
          mask[(static_cast<size_t>(y * up + dy)) * (latent * up) + x * up + dx] = label;
    }
  }
  return {Tensor::from_data({m, latent, latent}, std::move(feats)),
          Tensor::from_data({latent * up, latent * up}, std::move(mask))};
}

}  // namespace

TEST_CASE("train_base: separable one-class set reaches 95% pixel accuracy") {
  SegDataset ds = generate_dataset(one_class_config(), 21);
  Rng bb_rng(1), clf_rng(2), train_rng(3);
  Backbone bb(small_backbone(), bb_rng);
  BaseClassifier clf(16, ds.split.n_base(), clf_rng);

  TrainBaseConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 6;
  cfg.learning_rate = 0.05;
  auto curve = train_base(ds, bb, clf, cfg, train_rng);

  REQUIRE(!curve.empty());
  CHECK(curve.back() < curve.front());  // loss decreased
  CHECK(pixel_accuracy(bb, clf, ds) >= 0.95);
  CHECK(bb.frozen());

  // post-freeze updates are no-ops
  std::vector<std::vector<double>> before;
  for (Tensor& p : bb.params()) before.push_back(p.data());
  auto params = bb.params();
  SgdOptimizer opt(params, {0.5, 0.0, LrSchedule::kFixed, 0});
  opt.step();
  auto after = bb.params();
  for (size_t i = 0; i < after.size(); ++i) CHECK(after[i].data() == before[i]);
}

TEST_CASE("train_base: novel ids in the training masks are rejected") {
  SegDataset ds = generate_dataset(one_class_config(), 22);
  // corrupt one mask with a novel id
  Tensor bad = ds.train[0].mask;
  bad.mutable_data()[5] = 2.0;
  Rng r1(1), r2(2), r3(3);
  Backbone bb(small_backbone(), r1);
  BaseClassifier clf(16, ds.split.n_base(), r2);
  TrainBaseConfig cfg;
  CHECK_THROWS_AS(train_base(ds, bb, clf, cfg, r3), LabelError);
}

TEST_CASE("predict_scores: shape, zero case, determinism") {
  Rng rng(5);
  BaseClassifier clf(16, 4, rng);  // 4 base classes -> 5 outputs
  CHECK(clf.num_outputs() == 5);

  // zero features and zero bias give zero logits
  Tensor zf = Tensor::zeros({16, 8, 8});
  Tensor lg = clf.logits(zf);
  CHECK(lg.shape() == std::vector<int>{5, 8, 8});
  for (double v : lg.data()) CHECK(v == 0.0);

  Rng frng(6);
  std::vector<double> fd(16 * 8 * 8);
  for (double& v : fd) v = frng.normal();
  Tensor feats = Tensor::from_data({16, 8, 8}, fd);
  Tensor a = clf.logits(feats);
  Tensor b = clf.logits(feats);
  CHECK(a.data() == b.data());

  CHECK_THROWS_AS(clf.logits(Tensor::zeros({8, 8, 8})), DimensionError);
}

TEST_CASE("select_slots is pure row selection") {
  Rng rng(7);
  BaseClassifier clf(8, 5, rng);
  Rng frng(8);
  std::vector<double> fd(8 * 4 * 4);
  for (double& v : fd) v = frng.normal();
  Tensor feats = Tensor::from_data({8, 4, 4}, fd);

  Tensor full = clf.logits(feats);
  BaseClassifier sub = clf.select_slots({2, 4, 5});
  Tensor part = sub.logits(feats);
  CHECK(part.shape() == std::vector<int>{4, 4, 4});

  const int hw = 16;
  const int rows[4] = {0, 2, 4, 5};
  for (int r = 0; r < 4; ++r)
    for (int i = 0; i < hw; ++i)
      CHECK(part.data()[r * hw + i] == full.data()[rows[r] * hw + i]);  // bitwise
}

TEST_CASE("train_novel: separable 1-shot support fits to 90%+ accuracy") {
  const int m = 8, latent = 8, up = 2;
  Rng rng(31);
  auto [feats, mask] = synthetic_support(m, latent, up, 2, rng);
  Rng init_rng(32);
  TrainNovelConfig cfg;
  NovelClassifier clf = train_novel({{feats, mask}}, m, 2, cfg, init_rng);

  Tensor lg = upsample_nearest(clf.logits(feats), up);
  const int c = lg.dim(0), hw = lg.dim(1) * lg.dim(2);
  int64_t hits = 0;
  for (int i = 0; i < hw; ++i) {
    int best = 0;
    for (int k = 1; k < c; ++k)
      if (lg.data()[k * hw + i] > lg.data()[best * hw + i]) best = k;
    hits += best == static_cast<int>(mask.data()[i]);
  }
  CHECK(static_cast<double>(hits) / hw >= 0.90);
}

TEST_CASE("train_novel: zero learning rate returns the initialization") {
  const int m = 8, latent = 8, up = 2;
  Rng rng(41);
  auto [feats, mask] = synthetic_support(m, latent, up, 2, rng);

  TrainNovelConfig cfg;
  cfg.learning_rate = 0.0;
  Rng init_a(99);
  NovelClassifier trained = train_novel({{feats, mask}}, m, 2, cfg, init_a);
  Rng init_b(99);
  NovelClassifier fresh(m, 2, init_b);

  auto pa = trained.params();
  auto pb = fresh.params();
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].data() == pb[i].data());
}

TEST_CASE("train_novel: empty support is a contract error") {
  TrainNovelConfig cfg;
  Rng rng(1);
  CHECK_THROWS_AS(train_novel({}, 8, 2, cfg, rng), ContractError);
}

TEST_CASE("train_novel: 5-shot support loss <= 1-shot on average (paired seeds)") {
  const int m = 8, latent = 8, up = 2;
  double sum_1 = 0.0, sum_5 = 0.0;
  const int tasks = 20;
  for (int t = 0; t < tasks; ++t) {
    Rng data_rng(1000 + t);
    std::vector<std::pair<Tensor, Tensor>> shots;
    for (int s = 0; s < 5; ++s) shots.push_back(synthetic_support(m, latent, up, 2, data_rng));

    TrainNovelConfig cfg;
    double loss1 = 0.0, loss5 = 0.0;
    Rng init1(2000 + t);
    train_novel({shots[0]}, m, 2, cfg, init1, &loss1);
    Rng init5(2000 + t);
    train_novel(shots, m, 2, cfg, init5, &loss5);
    sum_1 += loss1;
    sum_5 += loss5;
  }
  CHECK(sum_5 / tasks <= sum_1 / tasks);
}

TEST_CASE("support_class_weights: inverse frequency, mean-1, clipped") {
  // 3 slots; slot 0 dominates
  Tensor m1 = Tensor::from_data({2, 4}, {0, 0, 0, 0, 0, 1, 2, 2});
  Tensor w = support_class_weights({m1}, 3, 0.1, 10.0);
  // counts: bg 5, c1 1, c2 2 -> inv freq 8/5, 8, 4 -> mean (1.6+8+4)/3
  const double mean = (8.0 / 5 + 8.0 + 4.0) / 3.0;
  CHECK(w.data()[0] == doctest::Approx(8.0 / 5 / mean));
  CHECK(w.data()[1] == doctest::Approx(8.0 / mean));
  CHECK(w.data()[2] == doctest::Approx(4.0 / mean));

  // the dominant background hits the lower clip under extreme imbalance
  std::vector<double> lop(256, 0.0);
  lop[0] = 1.0;
  Tensor m2 = Tensor::from_data({16, 16}, lop);
  Tensor w2 = support_class_weights({m2}, 2, 0.1, 10.0);
  CHECK(w2.data()[0] == 0.1);
  CHECK(w2.data()[1] <= 10.0);

  // weights stay inside the clip range for arbitrary masks
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> md(64);
    for (double& v : md) v = rng.uniform_int(0, 3);
    Tensor m3 = Tensor::from_data({8, 8}, md);
    Tensor w3 = support_class_weights({m3}, 4, 0.1, 10.0);
    for (double v : w3.data()) {
      CHECK(v >= 0.1);
      CHECK(v <= 10.0);
    }
  }
}
