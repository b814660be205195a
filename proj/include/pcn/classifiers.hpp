#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pcn/backbone.hpp"
#include "pcn/class_split.hpp"
#include "pcn/rng.hpp"
#include "pcn/sgd.hpp"
#include "pcn/synth_data.hpp"
#include "pcn/tensor.hpp"

namespace pcn {

// Maps dataset class ids onto classifier output slots. Slot 0 is always
// background; class rows follow in the order given at construction.
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<int> class_ids);  // foreground ids, slot i+1

  int num_slots() const { return static_cast<int>(ids_.size()) + 1; }
  int slot_of(int class_id) const;              // -1 when absent
  int class_at(int slot) const;                 // slot >= 1
  const std::vector<int>& class_ids() const { return ids_; }

  // mask of dataset ids -> mask of slots. Unknown ids map to background when
  // allowed, otherwise raise LabelError.
  Tensor relabel(const Tensor& mask, bool unknown_to_background) const;

 private:
  std::vector<int> ids_;
};

// One 1x1 convolution over the fused features: [bg, base classes...].
class BaseClassifier {
 public:
  BaseClassifier(int feature_channels, int num_classes, Rng& rng);

  Tensor logits(const Tensor& features) const;  // [(n+1), h, w]
  // Pure row selection: slot 0 plus the given slots, in the given order.
  BaseClassifier select_slots(const std::vector<int>& slots) const;

  int num_outputs() const { return weight_.dim(0); }
  int feature_channels() const { return weight_.dim(1); }

  void freeze();
  std::vector<Tensor> params() { return {weight_, bias_}; }
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  void load_params(const Checkpoint& ckpt);

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  BaseClassifier() = default;
  Tensor weight_;  // [(n+1), m, 1, 1]
  Tensor bias_;    // [(n+1)]
};

// 3x3 conv (m->m) -> relu -> 1x1 conv (m->n+1): [bg, novel classes...].
class NovelClassifier {
 public:
  NovelClassifier(int feature_channels, int num_classes, Rng& rng);

  Tensor logits(const Tensor& features) const;
  // Activation feeding the final 1x1 layer (needed by parameter fusion).
  Tensor mixed_features(const Tensor& features) const;

  int num_outputs() const { return head_w_.dim(0); }
  int feature_channels() const { return mix_w_.dim(1); }

  void freeze();
  std::vector<Tensor> params() { return {mix_w_, mix_b_, head_w_, head_b_}; }

  const Tensor& head_weight() const { return head_w_; }
  const Tensor& head_bias() const { return head_b_; }

 private:
  Tensor mix_w_, mix_b_;    // [m,m,3,3], [m]
  Tensor head_w_, head_b_;  // [(n+1),m,1,1], [(n+1)]
};

struct TrainBaseConfig {
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 0.05;
  double momentum = 0.9;  // cosine-decayed over all steps
};

// Stage 1: joint backbone + base classifier training on the base split.
// Freezes both on completion and returns the per-step loss curve.
std::vector<double> train_base(const SegDataset& dataset, Backbone& backbone,
                               BaseClassifier& clf, const TrainBaseConfig& cfg,
                               Rng& rng);

struct TrainNovelConfig {
  int iterations = 50;
  // fixed rate; 0.01 suits this backbone's feature scale (0.1 collapses the
  // relu units of a freshly initialized head at desk scale)
  double learning_rate = 0.01;
  double weight_clip_lo = 0.1;
  double weight_clip_hi = 10.0;
};

// Support samples carry frozen features plus masks already relabeled into
// the classifier's local slots (image resolution). Weighted CE: inverse
// pixel frequency, normalized to mean 1 over present classes, clipped.
NovelClassifier train_novel(
    const std::vector<std::pair<Tensor, Tensor>>& support_features_and_slots,
    int feature_channels, int num_classes, const TrainNovelConfig& cfg, Rng& rng,
    double* final_loss = nullptr);

// Inverse-frequency weights used by train_novel, exposed for tests.
Tensor support_class_weights(const std::vector<Tensor>& slot_masks, int num_slots,
                             double clip_lo, double clip_hi);

}  // namespace pcn
