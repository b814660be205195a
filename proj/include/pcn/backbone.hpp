#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pcn/checkpoint.hpp"
#include "pcn/rng.hpp"
#include "pcn/tensor.hpp"

namespace pcn {

// Which feature map feeds the calibration transformer's cross-attention.
// Classifiers always consume the fused (kLayer4High) map.
enum class FeatureTap { kLayer2, kLayer3, kLayer4, kHigh, kLayer4High };

FeatureTap feature_tap_from_string(const std::string& s);
std::string feature_tap_to_string(FeatureTap tap);
const std::vector<FeatureTap>& all_feature_taps();  // ablation row order

struct BackboneConfig {
  int in_channels = 3;
  std::vector<int> trunk_channels = {16, 16, 32};  // stage 1 applies stride 2
  int fused_channels = 32;                         // m
  int ppm_branch_channels = 16;
  std::vector<int> ppm_bins = {1, 2};
  FeatureTap feature_tap = FeatureTap::kLayer4High;
  int input_size = 32;

  int latent_size() const { return input_size / 2; }
  void validate() const;
};

// Small conv trunk plus a pooled-context branch; all spatial maps share the
// latent size so the hw -> d projection heads see a fixed token length.
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, Rng& rng);
  Backbone(const BackboneConfig& cfg, const Checkpoint& ckpt);

  // Fused multi-level feature map [m, h, w]; the classifier input.
  Tensor features(const Tensor& image) const;
  // Feature map at the given tap; kLayer4High returns the fused map.
  Tensor tap_features(const Tensor& image, FeatureTap tap) const;
  // Both in one trunk pass (cache fill).
  std::pair<Tensor, Tensor> features_and_tap(const Tensor& image, FeatureTap tap) const;

  void freeze();
  bool frozen() const { return frozen_; }

  std::vector<Tensor> params();
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  void load_params(const Checkpoint& ckpt);

  int feature_channels() const { return cfg_.fused_channels; }
  int tap_channels(FeatureTap tap) const;
  int latent_h() const { return cfg_.latent_size(); }
  int latent_w() const { return cfg_.latent_size(); }
  const BackboneConfig& config() const { return cfg_; }

 private:
  struct Maps {
    Tensor layer2, layer3, layer4, high, fused;
  };
  Maps run_trunk(const Tensor& image, bool need_high, bool need_fused) const;

  BackboneConfig cfg_;
  std::vector<Tensor> trunk_w_, trunk_b_;
  std::vector<Tensor> ppm_w_, ppm_b_;
  Tensor fuse_w_, fuse_b_;
  bool frozen_ = false;
};

std::string backbone_config_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const std::string& text);

}  // namespace pcn
