#include "pcn/fusion.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pcn/image_io.hpp"
#include "pcn/ops.hpp"

namespace fs = std::filesystem;

namespace pcn {

namespace {

void check_logit_blocks(const Tensor& base_logits, const Tensor& novel_logits) {
  if (base_logits.rank() != 2 || novel_logits.rank() != 2) {
    throw DimensionError("fusion: logit blocks must be [c',hw]");
  }
  if (base_logits.dim(1) != novel_logits.dim(1)) {
    throw DimensionError("fusion: pixel count mismatch, " + shape_str(base_logits.shape()) +
                         " vs " + shape_str(novel_logits.shape()));
  }
  if (base_logits.dim(0) < 2 || novel_logits.dim(0) < 2) {
    throw DimensionError("fusion: each block needs background plus >= 1 class row");
  }
}

// rows [from, to) of a [r, cols] matrix, as plain data
Tensor take_rows(const Tensor& t, int from, int to) {
  const int cols = t.dim(1);
  std::vector<double> out(t.data().begin() + static_cast<size_t>(from) * cols,
                          t.data().begin() + static_cast<size_t>(to) * cols);
  return Tensor::from_data({to - from, cols}, std::move(out));
}

}  // namespace

ScoreStack fuse_nsf(const Tensor& base_logits, const Tensor& novel_logits,
                    int latent_h, int latent_w) {
  check_logit_blocks(base_logits, novel_logits);
  ScoreStack stack;
  stack.num_base = base_logits.dim(0) - 1;
  stack.num_novel = novel_logits.dim(0) - 1;
  stack.latent_h = latent_h;
  stack.latent_w = latent_w;
  stack.base_probs = softmax(base_logits, 0);
  stack.novel_probs = softmax(novel_logits, 0);
  stack.fused = concat({stack.base_probs, take_rows(stack.novel_probs, 1, stack.num_novel + 1)}, 0);
  return stack;
}

ScoreStack fuse_plain(const Tensor& base_logits, const Tensor& novel_logits,
                      int latent_h, int latent_w) {
  check_logit_blocks(base_logits, novel_logits);
  ScoreStack stack;
  stack.num_base = base_logits.dim(0) - 1;
  stack.num_novel = novel_logits.dim(0) - 1;
  stack.latent_h = latent_h;
  stack.latent_w = latent_w;
  Tensor joint = concat({base_logits, take_rows(novel_logits, 1, stack.num_novel + 1)}, 0);
  stack.fused = softmax(joint, 0);
  return stack;
}

namespace {

// rows of a final 1x1 layer, L2-normalized across feature channels
Tensor l2_normalized_rows(const Tensor& conv_weight) {
  const int rows = conv_weight.dim(0), m = conv_weight.dim(1);
  std::vector<double> out(conv_weight.data());
  for (int r = 0; r < rows; ++r) {
    double norm2 = 0.0;
    for (int k = 0; k < m; ++k) {
      const double v = out[static_cast<size_t>(r) * m + k];
      norm2 += v * v;
    }
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) {
      throw NumericError("fuse_npf: zero weight vector for class row " + std::to_string(r));
    }
    for (int k = 0; k < m; ++k) out[static_cast<size_t>(r) * m + k] /= norm;
  }
  return Tensor::from_data({rows, m}, std::move(out));
}

}  // namespace

ScoreStack fuse_npf(const BaseClassifier& base_clf, const NovelClassifier& novel_clf,
                    const Tensor& features) {
  if (features.rank() != 3) throw DimensionError("fuse_npf: want [m,h,w] features");
  const int m = features.dim(0);
  const int h = features.dim(1), w = features.dim(2);
  if (base_clf.feature_channels() != m || novel_clf.feature_channels() != m) {
    throw DimensionError("fuse_npf: classifier/feature channel mismatch");
  }
  const int hw = h * w;
  Tensor flat = reshape(features, {m, hw});

  // base block on fused features
  Tensor base_w = l2_normalized_rows(reshape(base_clf.weight(), {base_clf.num_outputs(), m}));
  Tensor base_logits = add_channel_bias(matmul(base_w, flat), base_clf.bias());

  // novel block on the classifier's own mixed map
  Tensor mixed = reshape(novel_clf.mixed_features(features), {m, hw});
  Tensor novel_w = l2_normalized_rows(reshape(novel_clf.head_weight(), {novel_clf.num_outputs(), m}));
  Tensor novel_logits = add_channel_bias(matmul(novel_w, mixed), novel_clf.head_bias());

  return fuse_plain(base_logits, novel_logits, h, w);
}

Tensor argmax_segment(const ScoreStack& stack, ScoreField field) {
  const Tensor& scores = field == ScoreField::kCalibrated ? stack.calibrated : stack.fused;
  if (!scores.defined()) {
    throw ContractError("argmax_segment: requested score field is absent");
  }
  const int c = scores.dim(0);
  const int hw = scores.dim(1);
  if (hw != stack.latent_h * stack.latent_w) {
    throw DimensionError("argmax_segment: stack latent dims inconsistent");
  }
  std::vector<double> out(hw);
  const auto& sd = scores.data();
  for (int i = 0; i < hw; ++i) {
    int best = 0;
    double best_v = sd[i];
    for (int k = 1; k < c; ++k) {
      const double v = sd[static_cast<size_t>(k) * hw + i];
      if (v > best_v) {  // strict: ties keep the lowest slot
        best_v = v;
        best = k;
      }
    }
    out[i] = static_cast<double>(best);
  }
  return Tensor::from_data({stack.latent_h, stack.latent_w}, std::move(out));
}

void export_heatmaps(const ScoreStack& stack, ScoreField field,
                     const std::string& dir, const std::string& prefix) {
  const Tensor& scores = field == ScoreField::kCalibrated ? stack.calibrated : stack.fused;
  if (!scores.defined()) throw ContractError("export_heatmaps: score field absent");
  fs::create_directories(dir);
  const int c = scores.dim(0), hw = scores.dim(1);
  const auto& sd = scores.data();
  double lo = sd[0], hi = sd[0];
  for (double v : sd) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (int k = 0; k < c; ++k) {
    std::vector<double> plane(sd.begin() + static_cast<size_t>(k) * hw,
                              sd.begin() + static_cast<size_t>(k + 1) * hw);
    const std::string name = prefix + "_class" + std::to_string(k) + ".pgm";
    write_pgm16((fs::path(dir) / name).string(), plane, stack.latent_h, stack.latent_w, lo, hi);
  }
  std::ofstream csv(fs::path(dir) / (prefix + "_scores.csv"));
  if (!csv) throw FormatError("export_heatmaps: cannot write CSV in '" + dir + "'");
  csv << "class_slot,y,x,value\n";
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < stack.latent_h; ++y)
      for (int x = 0; x < stack.latent_w; ++x)
        csv << k << "," << y << "," << x << ","
            << sd[(static_cast<size_t>(k) * stack.latent_h + y) * stack.latent_w + x] << "\n";
}

}  // namespace pcn
