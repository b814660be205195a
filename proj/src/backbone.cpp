#include "pcn/backbone.hpp"

#include <cmath>

#include <json.hpp>

#include "pcn/ops.hpp"

using nlohmann::json;

namespace pcn {

FeatureTap feature_tap_from_string(const std::string& s) {
  if (s == "layer2") return FeatureTap::kLayer2;
  if (s == "layer3") return FeatureTap::kLayer3;
  if (s == "layer4") return FeatureTap::kLayer4;
  if (s == "high") return FeatureTap::kHigh;
  if (s == "layer4+high") return FeatureTap::kLayer4High;
  throw ConfigError("unknown feature tap '" + s + "'");
}

std::string feature_tap_to_string(FeatureTap tap) {
  switch (tap) {
    case FeatureTap::kLayer2: return "layer2";
    case FeatureTap::kLayer3: return "layer3";
    case FeatureTap::kLayer4: return "layer4";
    case FeatureTap::kHigh: return "high";
    case FeatureTap::kLayer4High: return "layer4+high";
  }
  throw ContractError("invalid feature tap");
}

const std::vector<FeatureTap>& all_feature_taps() {
  static const std::vector<FeatureTap> taps = {
      FeatureTap::kLayer2, FeatureTap::kLayer3, FeatureTap::kLayer4,
      FeatureTap::kHigh, FeatureTap::kLayer4High};
  return taps;
}

void BackboneConfig::validate() const {
  if (in_channels != 3) throw ConfigError("BackboneConfig: in_channels must be 3");
  if (trunk_channels.size() != 3) throw ConfigError("BackboneConfig: need exactly 3 trunk stages");
  for (int c : trunk_channels) {
    if (c < 1) throw ConfigError("BackboneConfig: non-positive trunk channel count");
  }
  if (fused_channels < 1) throw ConfigError("BackboneConfig: fused_channels must be positive");
  if (ppm_branch_channels < 1) throw ConfigError("BackboneConfig: ppm_branch_channels must be positive");
  if (input_size < 4 || input_size % 2 != 0) {
    throw ConfigError("BackboneConfig: input_size must be even and >= 4");
  }
  if (ppm_bins.empty()) throw ConfigError("BackboneConfig: need at least one PPM bin");
  for (int b : ppm_bins) {
    if (b < 1 || latent_size() % b != 0) {
      throw ConfigError("BackboneConfig: PPM bin " + std::to_string(b) +
                        " must divide latent size " + std::to_string(latent_size()));
    }
  }
}

namespace {

Tensor kaiming_conv(int cout, int cin, int k, Rng& rng) {
  const double std = std::sqrt(2.0 / (cin * k * k));
  std::vector<double> data(static_cast<size_t>(cout) * cin * k * k);
  for (double& v : data) v = std * rng.normal();
  Tensor t = Tensor::from_data({cout, cin, k, k}, std::move(data));
  t.set_requires_grad(true);
  return t;
}

Tensor zero_bias(int c) {
  Tensor t = Tensor::zeros({c});
  t.set_requires_grad(true);
  return t;
}

}  // namespace

Backbone::Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  int cin = cfg_.in_channels;
  for (int stage = 0; stage < 3; ++stage) {
    const int cout = cfg_.trunk_channels[stage];
    trunk_w_.push_back(kaiming_conv(cout, cin, 3, rng));
    trunk_b_.push_back(zero_bias(cout));
    cin = cout;
  }
  const int c4 = cfg_.trunk_channels[2];
  for (size_t i = 0; i < cfg_.ppm_bins.size(); ++i) {
    ppm_w_.push_back(kaiming_conv(cfg_.ppm_branch_channels, c4, 1, rng));
    ppm_b_.push_back(zero_bias(cfg_.ppm_branch_channels));
  }
  const int concat_c = c4 + static_cast<int>(cfg_.ppm_bins.size()) * cfg_.ppm_branch_channels;
  fuse_w_ = kaiming_conv(cfg_.fused_channels, concat_c, 1, rng);
  fuse_b_ = zero_bias(cfg_.fused_channels);
}

Backbone::Backbone(const BackboneConfig& cfg, const Checkpoint& ckpt) : cfg_(cfg) {
  cfg_.validate();
  Rng dummy(0);
  *this = Backbone(cfg, dummy);
  load_params(ckpt);
}

Backbone::Maps Backbone::run_trunk(const Tensor& image, bool need_high,
                                   bool need_fused) const {
  if (image.rank() != 3 || image.dim(0) != cfg_.in_channels ||
      image.dim(1) != cfg_.input_size || image.dim(2) != cfg_.input_size) {
    throw DimensionError("backbone: expected image [" + std::to_string(cfg_.in_channels) +
                         "," + std::to_string(cfg_.input_size) + "," +
                         std::to_string(cfg_.input_size) + "], got " + shape_str(image.shape()));
  }
  Maps m;
  m.layer2 = relu(add_channel_bias(conv2d(image, trunk_w_[0], 1, 2), trunk_b_[0]));
  m.layer3 = relu(add_channel_bias(conv2d(m.layer2, trunk_w_[1], 1, 1), trunk_b_[1]));
  m.layer4 = relu(add_channel_bias(conv2d(m.layer3, trunk_w_[2], 1, 1), trunk_b_[2]));
  if (!need_high && !need_fused) return m;

  const int latent = cfg_.latent_size();
  std::vector<Tensor> branches;
  for (size_t i = 0; i < cfg_.ppm_bins.size(); ++i) {
    const int bin = cfg_.ppm_bins[i];
    Tensor pooled = adaptive_avg_pool(m.layer4, bin, bin);
    Tensor mixed = relu(add_channel_bias(conv2d(pooled, ppm_w_[i], 0, 1), ppm_b_[i]));
    branches.push_back(upsample_nearest(mixed, latent / bin));
  }
  // high-level context: pooled branches concatenated, no trunk mixing
  m.high = branches.size() == 1 ? branches[0] : concat(branches, 0);
  if (need_fused) {
    std::vector<Tensor> parts = {m.layer4};
    parts.insert(parts.end(), branches.begin(), branches.end());
    Tensor stacked = concat(parts, 0);
    m.fused = relu(add_channel_bias(conv2d(stacked, fuse_w_, 0, 1), fuse_b_));
  }
  return m;
}

Tensor Backbone::features(const Tensor& image) const {
  return run_trunk(image, false, true).fused;
}

Tensor Backbone::tap_features(const Tensor& image, FeatureTap tap) const {
  switch (tap) {
    case FeatureTap::kLayer2: return run_trunk(image, false, false).layer2;
    case FeatureTap::kLayer3: return run_trunk(image, false, false).layer3;
    case FeatureTap::kLayer4: return run_trunk(image, false, false).layer4;
    case FeatureTap::kHigh: return run_trunk(image, true, false).high;
    case FeatureTap::kLayer4High: return run_trunk(image, false, true).fused;
  }
  throw ContractError("invalid feature tap");
}

std::pair<Tensor, Tensor> Backbone::features_and_tap(const Tensor& image,
                                                     FeatureTap tap) const {
  Maps m = run_trunk(image, tap == FeatureTap::kHigh, true);
  Tensor tapped;
  switch (tap) {
    case FeatureTap::kLayer2: tapped = m.layer2; break;
    case FeatureTap::kLayer3: tapped = m.layer3; break;
    case FeatureTap::kLayer4: tapped = m.layer4; break;
    case FeatureTap::kHigh: tapped = m.high; break;
    case FeatureTap::kLayer4High: tapped = m.fused; break;
  }
  return {m.fused, tapped};
}

int Backbone::tap_channels(FeatureTap tap) const {
  switch (tap) {
    case FeatureTap::kLayer2: return cfg_.trunk_channels[0];
    case FeatureTap::kLayer3: return cfg_.trunk_channels[1];
    case FeatureTap::kLayer4: return cfg_.trunk_channels[2];
    case FeatureTap::kHigh:
      return static_cast<int>(cfg_.ppm_bins.size()) * cfg_.ppm_branch_channels;
    case FeatureTap::kLayer4High: return cfg_.fused_channels;
  }
  throw ContractError("invalid feature tap");
}

void Backbone::freeze() {
  for (Tensor& t : params()) t.set_requires_grad(false);
  frozen_ = true;
}

std::vector<Tensor> Backbone::params() {
  std::vector<Tensor> all;
  for (size_t i = 0; i < trunk_w_.size(); ++i) {
    all.push_back(trunk_w_[i]);
    all.push_back(trunk_b_[i]);
  }
  for (size_t i = 0; i < ppm_w_.size(); ++i) {
    all.push_back(ppm_w_[i]);
    all.push_back(ppm_b_[i]);
  }
  all.push_back(fuse_w_);
  all.push_back(fuse_b_);
  return all;
}

std::vector<std::pair<std::string, Tensor>> Backbone::named_params() const {
  std::vector<std::pair<std::string, Tensor>> named;
  for (size_t i = 0; i < trunk_w_.size(); ++i) {
    named.emplace_back("backbone.stage" + std::to_string(i + 1) + ".weight", trunk_w_[i]);
    named.emplace_back("backbone.stage" + std::to_string(i + 1) + ".bias", trunk_b_[i]);
  }
  for (size_t i = 0; i < ppm_w_.size(); ++i) {
    named.emplace_back("backbone.ppm" + std::to_string(i) + ".weight", ppm_w_[i]);
    named.emplace_back("backbone.ppm" + std::to_string(i) + ".bias", ppm_b_[i]);
  }
  named.emplace_back("backbone.fuse.weight", fuse_w_);
  named.emplace_back("backbone.fuse.bias", fuse_b_);
  return named;
}

void Backbone::load_params(const Checkpoint& ckpt) {
  for (auto& [name, tensor] : named_params()) {
    const Tensor& src = ckpt.require(name);
    if (src.shape() != tensor.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(src.shape()) + ", expected " + shape_str(tensor.shape()));
    }
    Tensor dst = tensor;  // shared handle onto the live parameter
    dst.mutable_data() = src.data();
  }
}

std::string backbone_config_to_json(const BackboneConfig& cfg) {
  json j{{"in_channels", cfg.in_channels},
         {"trunk_channels", cfg.trunk_channels},
         {"fused_channels", cfg.fused_channels},
         {"ppm_branch_channels", cfg.ppm_branch_channels},
         {"ppm_bins", cfg.ppm_bins},
         {"feature_tap", feature_tap_to_string(cfg.feature_tap)},
         {"input_size", cfg.input_size}};
  return j.dump();
}

BackboneConfig backbone_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad backbone config json: ") + e.what());
  }
  BackboneConfig cfg;
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.trunk_channels = j.at("trunk_channels").get<std::vector<int>>();
  cfg.fused_channels = j.at("fused_channels").get<int>();
  cfg.ppm_branch_channels = j.at("ppm_branch_channels").get<int>();
  cfg.ppm_bins = j.at("ppm_bins").get<std::vector<int>>();
  cfg.feature_tap = feature_tap_from_string(j.at("feature_tap").get<std::string>());
  cfg.input_size = j.at("input_size").get<int>();
  return cfg;
}

}  // namespace pcn
