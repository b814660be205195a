#include "pcn/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcn/ops.hpp"

namespace pcn {

LabelSpace::LabelSpace(std::vector<int> class_ids) : ids_(std::move(class_ids)) {
  for (int id : ids_) {
    if (id == kBackgroundId) throw LabelError("LabelSpace: background cannot be a class slot");
  }
}

int LabelSpace::slot_of(int class_id) const {
  if (class_id == kBackgroundId) return 0;
  auto it = std::find(ids_.begin(), ids_.end(), class_id);
  return it == ids_.end() ? -1 : static_cast<int>(it - ids_.begin()) + 1;
}

int LabelSpace::class_at(int slot) const {
  if (slot < 1 || slot > static_cast<int>(ids_.size())) {
    throw LabelError("LabelSpace: slot " + std::to_string(slot) + " out of range");
  }
  return ids_[slot - 1];
}

Tensor LabelSpace::relabel(const Tensor& mask, bool unknown_to_background) const {
  std::vector<double> out(mask.data().size());
  const auto& md = mask.data();
  for (size_t i = 0; i < md.size(); ++i) {
    const int id = static_cast<int>(md[i]);
    const int slot = slot_of(id);
    if (slot < 0) {
      if (!unknown_to_background) {
        throw LabelError("relabel: class id " + std::to_string(id) + " not in label space");
      }
      out[i] = 0.0;
    } else {
      out[i] = static_cast<double>(slot);
    }
  }
  return Tensor::from_data(mask.shape(), std::move(out));
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

BaseClassifier::BaseClassifier(int feature_channels, int num_classes, Rng& rng) {
  weight_ = kaiming_conv(num_classes + 1, feature_channels, 1, rng);
  bias_ = zero_bias(num_classes + 1);
}

Tensor BaseClassifier::logits(const Tensor& features) const {
  if (features.rank() != 3 || features.dim(0) != feature_channels()) {
    throw DimensionError("BaseClassifier: want [" + std::to_string(feature_channels()) +
                         ",h,w] features, got " + shape_str(features.shape()));
  }
  return add_channel_bias(conv2d(features, weight_, 0, 1), bias_);
}

BaseClassifier BaseClassifier::select_slots(const std::vector<int>& slots) const {
  const int m = feature_channels();
  std::vector<double> w(static_cast<size_t>(slots.size() + 1) * m);
  std::vector<double> b(slots.size() + 1);
  auto copy_row = [&](int dst, int src) {
    if (src < 0 || src >= num_outputs()) {
      throw ContractError("select_slots: slot " + std::to_string(src) + " out of range");
    }
    std::copy(weight_.data().begin() + static_cast<size_t>(src) * m,
              weight_.data().begin() + static_cast<size_t>(src + 1) * m,
              w.begin() + static_cast<size_t>(dst) * m);
    b[dst] = bias_.data()[src];
  };
  copy_row(0, 0);  // background always survives
  for (size_t i = 0; i < slots.size(); ++i) copy_row(static_cast<int>(i) + 1, slots[i]);

  BaseClassifier out;
  out.weight_ = Tensor::from_data({static_cast<int>(slots.size()) + 1, m, 1, 1}, std::move(w));
  out.bias_ = Tensor::from_data({static_cast<int>(slots.size()) + 1}, std::move(b));
  return out;
}

void BaseClassifier::freeze() {
  weight_.set_requires_grad(false);
  bias_.set_requires_grad(false);
}

std::vector<std::pair<std::string, Tensor>> BaseClassifier::named_params() const {
  return {{"base_clf.weight", weight_}, {"base_clf.bias", bias_}};
}

void BaseClassifier::load_params(const Checkpoint& ckpt) {
  for (auto& [name, tensor] : named_params()) {
    const Tensor& src = ckpt.require(name);
    if (src.shape() != tensor.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' shape mismatch");
    }
    Tensor dst = tensor;
    dst.mutable_data() = src.data();
  }
}

NovelClassifier::NovelClassifier(int feature_channels, int num_classes, Rng& rng) {
  mix_w_ = kaiming_conv(feature_channels, feature_channels, 3, rng);
  mix_b_ = zero_bias(feature_channels);
  head_w_ = kaiming_conv(num_classes + 1, feature_channels, 1, rng);
  head_b_ = zero_bias(num_classes + 1);
}

Tensor NovelClassifier::mixed_features(const Tensor& features) const {
  if (features.rank() != 3 || features.dim(0) != feature_channels()) {
    throw DimensionError("NovelClassifier: want [" + std::to_string(feature_channels()) +
                         ",h,w] features, got " + shape_str(features.shape()));
  }
  return relu(add_channel_bias(conv2d(features, mix_w_, 1, 1), mix_b_));
}

Tensor NovelClassifier::logits(const Tensor& features) const {
  return add_channel_bias(conv2d(mixed_features(features), head_w_, 0, 1), head_b_);
}

void NovelClassifier::freeze() {
  for (Tensor& t : params()) t.set_requires_grad(false);
}

std::vector<double> train_base(const SegDataset& dataset, Backbone& backbone,
                               BaseClassifier& clf, const TrainBaseConfig& cfg,
                               Rng& rng) {
  if (dataset.train.empty()) throw ContractError("train_base: empty training split");
  const LabelSpace space(dataset.split.base_ids);
  // guard: a base-training set must not leak novel classes
  for (const auto& sample : dataset.train) {
    for (double v : sample.mask.data()) {
      const int id = static_cast<int>(v);
      if (id != kBackgroundId && space.slot_of(id) < 0) {
        throw LabelError("train_base: mask contains id " + std::to_string(id) +
                         " outside the base split");
      }
    }
  }

  const int n = static_cast<int>(dataset.train.size());
  const int batch = std::min(cfg.batch_size, n);
  const int steps_per_epoch = (n + batch - 1) / batch;
  const int total_steps = cfg.epochs * steps_per_epoch;

  std::vector<Tensor> params = backbone.params();
  for (Tensor& p : clf.params()) params.push_back(p);
  SgdConfig sgd{cfg.learning_rate, cfg.momentum, LrSchedule::kCosine, total_steps};
  SgdOptimizer opt(params, sgd);

  // Logits live on the latent grid; the loss is taken at image resolution
  // after nearest upsampling, as in the evaluation path.
  const int image_hw = backbone.config().input_size * backbone.config().input_size;
  const int up = backbone.config().input_size / backbone.latent_h();
  std::vector<Tensor> slot_masks;
  slot_masks.reserve(n);
  for (const auto& sample : dataset.train) {
    slot_masks.push_back(reshape(space.relabel(sample.mask, false), {image_hw}));
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> loss_curve;
  loss_curve.reserve(total_steps);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (int step = 0; step < steps_per_epoch; ++step) {
      Tape::current().reset();
      std::vector<Tensor> scores, targets;
      for (int b = 0; b < batch; ++b) {
        const int idx = order[(step * batch + b) % n];
        Tensor feats = backbone.features(dataset.train[idx].image);
        Tensor lg = upsample_nearest(clf.logits(feats), up);
        scores.push_back(reshape(lg, {clf.num_outputs(), image_hw}));
        targets.push_back(slot_masks[idx]);
      }
      Tensor loss = cross_entropy(concat(scores, 1), concat(targets, 0));
      if (!std::isfinite(loss.value())) throw NumericError("train_base: non-finite loss");
      loss_curve.push_back(loss.value());
      backward(loss);
      opt.step();
    }
  }
  Tape::current().reset();
  backbone.freeze();
  clf.freeze();
  return loss_curve;
}

Tensor support_class_weights(const std::vector<Tensor>& slot_masks, int num_slots,
                             double clip_lo, double clip_hi) {
  std::vector<double> counts(num_slots, 0.0);
  double total = 0.0;
  for (const Tensor& m : slot_masks) {
    for (double v : m.data()) {
      counts[static_cast<int>(v)] += 1.0;
      total += 1.0;
    }
  }
  std::vector<double> w(num_slots, 1.0);
  double present_sum = 0.0;
  int present = 0;
  for (int k = 0; k < num_slots; ++k) {
    if (counts[k] > 0.0) {
      w[k] = total / counts[k];  // inverse frequency
      present_sum += w[k];
      ++present;
    }
  }
  if (present == 0) throw ContractError("support_class_weights: empty masks");
  const double mean_w = present_sum / present;
  for (int k = 0; k < num_slots; ++k) {
    if (counts[k] > 0.0) {
      w[k] = std::clamp(w[k] / mean_w, clip_lo, clip_hi);
    }
    // absent classes never appear as targets; weight value is irrelevant
  }
  return Tensor::from_data({num_slots}, std::move(w));
}

NovelClassifier train_novel(
    const std::vector<std::pair<Tensor, Tensor>>& support_features_and_slots,
    int feature_channels, int num_classes, const TrainNovelConfig& cfg, Rng& rng,
    double* final_loss) {
  if (support_features_and_slots.empty()) {
    throw ContractError("train_novel: empty support set");
  }
  NovelClassifier clf(feature_channels, num_classes, rng);

  std::vector<Tensor> slot_masks, flat_targets;
  int up = 1;
  for (const auto& [feats, slots] : support_features_and_slots) {
    if (slots.rank() != 2 || slots.dim(0) % feats.dim(1) != 0 ||
        slots.dim(0) / feats.dim(1) != slots.dim(1) / feats.dim(2)) {
      throw DimensionError("train_novel: support mask " + shape_str(slots.shape()) +
                           " does not align with feature grid " + shape_str(feats.shape()));
    }
    up = slots.dim(0) / feats.dim(1);
    slot_masks.push_back(slots);
    flat_targets.push_back(reshape(slots, {static_cast<int>(slots.size())}));
  }
  const Tensor weights = support_class_weights(slot_masks, num_classes + 1,
                                               cfg.weight_clip_lo, cfg.weight_clip_hi);
  const Tensor target = concat(flat_targets, 0);

  SgdConfig sgd{cfg.learning_rate, 0.0, LrSchedule::kFixed, 0};
  SgdOptimizer opt(clf.params(), sgd);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    Tape::current().reset();
    std::vector<Tensor> scores;
    for (const auto& [feats, slots] : support_features_and_slots) {
      Tensor lg = upsample_nearest(clf.logits(feats), up);
      scores.push_back(reshape(lg, {clf.num_outputs(), lg.dim(1) * lg.dim(2)}));
    }
    Tensor loss = cross_entropy(concat(scores, 1), target, weights);
    if (!std::isfinite(loss.value())) throw NumericError("train_novel: non-finite loss");
    if (final_loss) *final_loss = loss.value();
    backward(loss);
    opt.step();
  }
  Tape::current().reset();
  return clf;
}

}  // namespace pcn
