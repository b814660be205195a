#include <doctest.h>

#include <filesystem>

#include "pcn/backbone.hpp"
#include "pcn/checkpoint.hpp"
#include "pcn/sgd.hpp"

using namespace pcn;

namespace {

BackboneConfig small_config() {
  BackboneConfig cfg;
  cfg.trunk_channels = {8, 8, 16};
  cfg.fused_channels = 16;
  cfg.ppm_branch_channels = 8;
  cfg.input_size = 16;
  return cfg;
}

}  // namespace

TEST_CASE("backbone: zero input with zero biases gives zero features") {
  Rng rng(1);
  Backbone bb(small_config(), rng);  // biases start at zero
  Tensor zero_img = Tensor::zeros({3, 16, 16});
  Tensor feats = bb.features(zero_img);
  for (double v : feats.data()) CHECK(v == 0.0);
  for (FeatureTap tap : all_feature_taps()) {
    Tensor tf = bb.tap_features(zero_img, tap);
    for (double v : tf.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("backbone: deterministic features and default output shape") {
  Rng rng(2);
  BackboneConfig cfg;  // defaults: 32x32 input, m=32
  Backbone bb(cfg, rng);
  Rng img_rng(3);
  std::vector<double> data(3 * 32 * 32);
  for (double& v : data) v = img_rng.uniform();
  Tensor img = Tensor::from_data({3, 32, 32}, data);

  Tensor f1 = bb.features(img);
  Tensor f2 = bb.features(img);
  CHECK(f1.shape() == std::vector<int>{32, 16, 16});
  CHECK(f1.data() == f2.data());  // bitwise
}

TEST_CASE("backbone: taps share the latent grid and differ only in channels") {
  Rng rng(4);
  BackboneConfig cfg = small_config();
  Backbone bb(cfg, rng);
  Rng img_rng(5);
  std::vector<double> data(3 * 16 * 16);
  for (double& v : data) v = img_rng.uniform();
  Tensor img = Tensor::from_data({3, 16, 16}, data);

  for (FeatureTap tap : all_feature_taps()) {
    Tensor f = bb.tap_features(img, tap);
    CHECK(f.dim(1) == bb.latent_h());
    CHECK(f.dim(2) == bb.latent_w());
    CHECK(f.dim(0) == bb.tap_channels(tap));
  }
  CHECK(bb.tap_channels(FeatureTap::kLayer2) == 8);
  CHECK(bb.tap_channels(FeatureTap::kHigh) == 16);  // 2 bins x 8 branch channels
  CHECK(bb.tap_channels(FeatureTap::kLayer4High) == 16);

  auto [fused, tapped] = bb.features_and_tap(img, FeatureTap::kLayer3);
  Tensor fused_direct = bb.features(img);
  Tensor tapped_direct = bb.tap_features(img, FeatureTap::kLayer3);
  CHECK(fused.data() == fused_direct.data());
  CHECK(tapped.data() == tapped_direct.data());
}

TEST_CASE("backbone: wrong input shape raises a dimension error") {
  Rng rng(6);
  Backbone bb(small_config(), rng);
  CHECK_THROWS_AS(bb.features(Tensor::zeros({3, 8, 8})), DimensionError);
  CHECK_THROWS_AS(bb.features(Tensor::zeros({1, 16, 16})), DimensionError);
}

TEST_CASE("backbone: freeze makes sgd a no-op and params stay bit-identical") {
  Rng rng(7);
  Backbone bb(small_config(), rng);
  std::vector<std::vector<double>> before;
  for (Tensor& p : bb.params()) before.push_back(p.data());

  bb.freeze();
  CHECK(bb.frozen());
  auto params = bb.params();
  SgdOptimizer opt(params, {0.5, 0.9, LrSchedule::kFixed, 0});
  opt.step();  // frozen params are skipped even without grads

  auto after = bb.params();
  for (size_t i = 0; i < after.size(); ++i) CHECK(after[i].data() == before[i]);
}

TEST_CASE("backbone: checkpoint round-trip is bit-exact") {
  const std::string path = (std::filesystem::temp_directory_path() / "bb_test.ckpt").string();
  Rng rng(8);
  BackboneConfig cfg = small_config();
  Backbone bb(cfg, rng);
  save_checkpoint(path, bb.named_params(), {{"backbone_config", backbone_config_to_json(cfg)}});

  Checkpoint ckpt = load_checkpoint(path);
  BackboneConfig cfg2 = backbone_config_from_json(ckpt.require_meta("backbone_config"));
  Backbone restored(cfg2, ckpt);

  auto a = bb.named_params();
  auto b = restored.named_params();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.data() == b[i].second.data());  // bitwise
  }
  std::filesystem::remove(path);
}
