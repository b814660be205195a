#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pcn/episodic.hpp"
#include "pcn/ops.hpp"

using namespace pcn;

namespace {

SynthConfig tiny_data() {
  SynthConfig cfg;
  cfg.image_size = 16;
  cfg.num_classes = 5;
  cfg.novel_ids = {5};
  cfg.train_images = 30;
  cfg.test_images = 16;
  cfg.noise_sigma = 0.04;
  return cfg;
}

BackboneConfig tiny_backbone() {
  BackboneConfig cfg;
  cfg.trunk_channels = {8, 8, 16};
  cfg.fused_channels = 16;
  cfg.ppm_branch_channels = 8;
  cfg.input_size = 16;
  return cfg;
}

MetaTrainConfig tiny_meta() {
  MetaTrainConfig cfg;
  cfg.iterations = 6;
  cfg.inner.iterations = 10;
  return cfg;
}

ModelBundle frozen_bundle(const SegDataset& ds, uint64_t seed) {
  Rng bb_rng(derive_seed(seed, streams::kBackboneInit));
  Backbone bb(tiny_backbone(), bb_rng);
  Rng clf_rng(derive_seed(seed, streams::kBaseClfInit));
  BaseClassifier clf(16, ds.split.n_base(), clf_rng);
  bb.freeze();
  clf.freeze();
  return ModelBundle(std::move(bb), std::move(clf), ds.split);
}

std::vector<std::vector<double>> snapshot(std::vector<Tensor> params) {
  std::vector<std::vector<double>> out;
  for (Tensor& p : params) out.push_back(p.data());
  return out;
}

}  // namespace

TEST_CASE("sample_episode: determinism and Eq.-7 set sizes") {
  SegDataset ds = generate_dataset(tiny_data(), 1);
  MetaTrainConfig cfg = tiny_meta();

  Episode a = sample_episode(ds, cfg, 77);
  Episode b = sample_episode(ds, cfg, 77);
  CHECK(a.fake_novel_ids == b.fake_novel_ids);
  CHECK(a.support_indices == b.support_indices);
  CHECK(a.query_indices == b.query_indices);

  CHECK(a.support.size() == static_cast<size_t>(cfg.n_fake_novel * 1));      // N_fn * K
  CHECK(a.query.size() == static_cast<size_t>(2 * cfg.n_fake_novel * cfg.queries_per_class));

  // support and query images are disjoint
  for (int s : a.support_indices) {
    CHECK(std::find(a.query_indices.begin(), a.query_indices.end(), s) == a.query_indices.end());
  }
}

TEST_CASE("sample_episode: C_fn and C_rb partition the base classes (1000 draws)") {
  SegDataset ds = generate_dataset(tiny_data(), 2);
  MetaTrainConfig cfg = tiny_meta();
  for (int i = 0; i < 1000; ++i) {
    Episode ep = sample_episode(ds, cfg, derive_seed(5, streams::kEpisodeSample, i));
    for (int fn : ep.fake_novel_ids) {
      CHECK(ds.split.is_base(fn));
      CHECK(std::find(ep.remaining_base_ids.begin(), ep.remaining_base_ids.end(), fn) ==
            ep.remaining_base_ids.end());
    }
    CHECK(ep.fake_novel_ids.size() + ep.remaining_base_ids.size() ==
          static_cast<size_t>(ds.split.n_base()));
  }
}

TEST_CASE("sample_episode: support masks contain only bg and fake-novel ids") {
  SegDataset ds = generate_dataset(tiny_data(), 3);
  MetaTrainConfig cfg = tiny_meta();
  for (int i = 0; i < 20; ++i) {
    Episode ep = sample_episode(ds, cfg, derive_seed(9, streams::kEpisodeSample, i));
    for (const SegSample& s : ep.support) {
      for (double v : s.mask.data()) {
        const int id = static_cast<int>(v);
        const bool ok = id == kBackgroundId ||
                        std::find(ep.fake_novel_ids.begin(), ep.fake_novel_ids.end(), id) !=
                            ep.fake_novel_ids.end();
        CHECK(ok);
      }
    }
  }
}

TEST_CASE("run_episode_update: zero lr leaves the calibrator untouched, loss finite") {
  SegDataset ds = generate_dataset(tiny_data(), 4);
  ModelBundle bundle = frozen_bundle(ds, 10);
  MetaTrainConfig cfg = tiny_meta();
  FeatureCache cache(bundle.backbone, ds.train, cfg.feature_tap);

  Episode ep = sample_episode(ds, cfg, 123);
  EpisodeArtifacts art = build_episode_artifacts(ep, bundle, cache, cfg, 456);
  CHECK(std::isfinite(art.inner_final_loss));

  CalibratorInit init{64, 8, ds.split.n_base() - 1, 1, false};
  Rng cal_rng(20);
  auto cal = make_calibrator("pcn", init, cal_rng);
  auto before = snapshot(cal->params());

  SgdOptimizer opt(cal->params(), {0.0, 0.9, LrSchedule::kFixed, 0});
  const double loss = run_episode_update(art, *cal, opt);
  CHECK(std::isfinite(loss));
  auto after = snapshot(cal->params());
  CHECK(before == after);
}

TEST_CASE("run_episode_update: only calibrator params move; frozen stack is bit-stable") {
  SegDataset ds = generate_dataset(tiny_data(), 5);
  ModelBundle bundle = frozen_bundle(ds, 11);
  MetaTrainConfig cfg = tiny_meta();
  FeatureCache cache(bundle.backbone, ds.train, cfg.feature_tap);

  auto backbone_before = snapshot(bundle.backbone.params());
  auto clf_before = snapshot(bundle.base_clf.params());

  Episode ep = sample_episode(ds, cfg, 321);
  EpisodeArtifacts art = build_episode_artifacts(ep, bundle, cache, cfg, 654);

  CalibratorInit init{64, 8, ds.split.n_base() - 1, 1, false};
  Rng cal_rng(21);
  auto cal = make_calibrator("pcn", init, cal_rng);
  auto cal_before = snapshot(cal->params());

  SgdOptimizer opt(cal->params(), {0.05, 0.9, LrSchedule::kFixed, 0});
  run_episode_update(art, *cal, opt);

  CHECK(snapshot(bundle.backbone.params()) == backbone_before);
  CHECK(snapshot(bundle.base_clf.params()) == clf_before);
  CHECK(snapshot(cal->params()) != cal_before);  // offset head received gradient
}

TEST_CASE("meta_train: bit-identical parameters across same-seed runs, log shape") {
  SegDataset ds = generate_dataset(tiny_data(), 6);
  ModelBundle bundle = frozen_bundle(ds, 12);
  MetaTrainConfig cfg = tiny_meta();

  auto run = [&](int threads) {
    MetaTrainConfig c = cfg;
    c.threads = threads;
    CalibratorInit init{64, 8, ds.split.n_base() - 1, 1, false};
    Rng cal_rng(30);
    auto cal = make_calibrator("pcn", init, cal_rng);
    auto logs = meta_train(ds, bundle, {cal.get()}, c, /*master_seed=*/99);
    return std::make_pair(snapshot(cal->params()), logs[0]);
  };

  auto [params1, log1] = run(1);
  auto [params2, log2] = run(1);
  CHECK(params1 == params2);  // bitwise determinism
  CHECK(log1.size() == static_cast<size_t>(cfg.iterations));
  for (int i = 0; i < cfg.iterations; ++i) {
    CHECK(log1[i].episode == i);
    CHECK(std::isfinite(log1[i].meta_loss));
    CHECK(log1[i].meta_loss == log2[i].meta_loss);
  }

  // worker-thread artifact prefetch must not change the stream
  auto [params3, log3] = run(2);
  CHECK(params1 == params3);
}

TEST_CASE("meta_train: frozen backbone and base classifier are bit-identical after") {
  SegDataset ds = generate_dataset(tiny_data(), 7);
  ModelBundle bundle = frozen_bundle(ds, 13);
  auto bb_before = snapshot(bundle.backbone.params());
  auto clf_before = snapshot(bundle.base_clf.params());

  MetaTrainConfig cfg = tiny_meta();
  CalibratorInit init{64, 8, ds.split.n_base() - 1, 1, false};
  Rng cal_rng(31);
  auto cal = make_calibrator("pcn", init, cal_rng);
  meta_train(ds, bundle, {cal.get()}, cfg, 100);

  CHECK(snapshot(bundle.backbone.params()) == bb_before);
  CHECK(snapshot(bundle.base_clf.params()) == clf_before);
}

TEST_CASE("meta_train: unfrozen backbone is a contract error") {
  SegDataset ds = generate_dataset(tiny_data(), 8);
  Rng bb_rng(1), clf_rng(2);
  Backbone bb(tiny_backbone(), bb_rng);
  BaseClassifier clf(16, ds.split.n_base(), clf_rng);
  ModelBundle bundle(std::move(bb), std::move(clf), ds.split);

  MetaTrainConfig cfg = tiny_meta();
  CalibratorInit init{64, 8, 3, 1, false};
  Rng cal_rng(32);
  auto cal = make_calibrator("pcn", init, cal_rng);
  CHECK_THROWS_AS(meta_train(ds, bundle, {cal.get()}, cfg, 1), ContractError);
}

TEST_CASE("meta_train: shared episode stream across jointly trained variants") {
  SegDataset ds = generate_dataset(tiny_data(), 9);
  ModelBundle bundle = frozen_bundle(ds, 14);
  MetaTrainConfig cfg = tiny_meta();
  CalibratorInit init{64, 8, ds.split.n_base() - 1, 1, false};

  // trained alone
  Rng r1(40);
  auto solo = make_calibrator("pcn", init, r1);
  meta_train(ds, bundle, {solo.get()}, cfg, 555);

  // trained next to another variant: identical result
  Rng r2(40);
  auto joint = make_calibrator("pcn", init, r2);
  Rng r3(41);
  auto other = make_calibrator("selfattn", init, r3);
  meta_train(ds, bundle, {joint.get(), other.get()}, cfg, 555);

  CHECK(snapshot(solo->params()) == snapshot(joint->params()));
}
