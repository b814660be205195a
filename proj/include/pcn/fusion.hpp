#pragma once

#include <string>

#include "pcn/classifiers.hpp"
#include "pcn/tensor.hpp"

namespace pcn {

// Per-pixel prediction scores with provenance. `fused` is the score the
// calibrator consumes: the NSF union for fuse_nsf, a joint softmax for the
// plain and NPF baselines. Row order is always [background, base classes,
// novel classes]; the novel classifier's background row is dropped at fusion
// (the base model's background estimate survives).
struct ScoreStack {
  Tensor base_probs;   // [(nb+1), hw]; per-block softmax (NSF only)
  Tensor novel_probs;  // [(nn+1), hw]; per-block softmax (NSF only)
  Tensor fused;        // [c, hw], c = 1 + nb + nn
  Tensor delta;        // calibration offset, present after a residual calibrator
  Tensor calibrated;   // fused + delta

  int num_base = 0;   // base class rows (background excluded)
  int num_novel = 0;  // novel class rows
  int latent_h = 0;
  int latent_w = 0;

  int num_classes() const { return 1 + num_base + num_novel; }
};

// Eq.-style normalized score fusion: each block softmaxed over its own class
// axis per pixel, then concatenated. Columns of `fused` sum to ~2 - 1/(...)
// by construction; this is intentional (two independent softmaxes).
ScoreStack fuse_nsf(const Tensor& base_logits, const Tensor& novel_logits,
                    int latent_h, int latent_w);

// Baseline: concatenate raw logits (novel background dropped), one softmax
// over the union.
ScoreStack fuse_plain(const Tensor& base_logits, const Tensor& novel_logits,
                      int latent_h, int latent_w);

// Baseline: L2-normalize every final-layer class weight vector across
// feature channels, recompute logits, then one joint softmax.
ScoreStack fuse_npf(const BaseClassifier& base_clf, const NovelClassifier& novel_clf,
                    const Tensor& features);

enum class ScoreField { kFused, kCalibrated };

// Per-pixel argmax over class rows; ties break toward the lowest slot.
// Returns a [latent_h, latent_w] map of slot indices.
Tensor argmax_segment(const ScoreStack& stack, ScoreField field);

// Fig.-style inspection dump: one 16-bit PGM per class row plus a CSV of raw
// values for the chosen field.
void export_heatmaps(const ScoreStack& stack, ScoreField field,
                     const std::string& dir, const std::string& prefix);

}  // namespace pcn
