#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "pcn/bundle.hpp"
#include "pcn/calibration.hpp"
#include "pcn/synth_data.hpp"

namespace pcn {

struct MetaTrainConfig {
  int iterations = 2000;
  double learning_rate = 1e-2;  // alpha_t, cosine-decayed
  double momentum = 0.9;
  int n_fake_novel = 1;      // N_fn
  int queries_per_class = 1;  // Q
  TrainNovelConfig inner;    // 50 iterations at fixed lr 0.1
  FeatureTap feature_tap = FeatureTap::kLayer4High;
  int threads = 1;  // episode artifacts may be built ahead on workers

  void validate(const ClassSplit& split) const;
};

// One meta-training episode: fake-novel supports plus balanced queries.
struct Episode {
  std::vector<int> fake_novel_ids;      // C_fn, sampled order
  std::vector<int> remaining_base_ids;  // C_rb, base order
  std::vector<int> support_indices;     // into dataset.train
  std::vector<int> query_indices;       // fake-novel queries then base queries
  std::vector<SegSample> support;       // masks relabeled to {bg} + C_fn ids
  std::vector<SegSample> query;         // masks untouched ({bg} + base ids)
  int shots = 1;
  int queries_per_class = 1;
  uint64_t seed = 0;

  // episode label space: [bg, C_rb..., C_fn...]
  LabelSpace label_space() const;
};

Episode sample_episode(const SegDataset& ds, const MetaTrainConfig& cfg,
                       uint64_t episode_seed, int shots = 1);

// Frozen-backbone feature memo, shared across episodes and tasks.
class FeatureCache {
 public:
  FeatureCache(const Backbone& backbone, const std::vector<SegSample>& samples,
               FeatureTap tap);
  // (fused classifier features, tap features) for sample `idx`.
  std::pair<Tensor, Tensor> get(int idx);
  FeatureTap tap() const { return tap_; }

 private:
  const Backbone* backbone_;
  const std::vector<SegSample>* samples_;
  FeatureTap tap_;
  std::vector<char> ready_;
  std::vector<Tensor> fused_, tapped_;
  std::mutex mu_;
};

// Everything a calibrator update needs from one episode; independent of any
// calibrator state, so several variants can train on the identical stream.
struct QueryArtifact {
  ScoreStack stack;     // NSF of activated-base and fake-novel blocks
  Tensor tap_features;  // [m_tap, hw]
  Tensor target_slots;  // [H*W] episode-space slot ids
};

struct EpisodeArtifacts {
  Episode episode;
  double inner_final_loss = 0.0;
  std::vector<QueryArtifact> queries;
  int upsample_factor = 1;  // latent -> image grid
};

EpisodeArtifacts build_episode_artifacts(Episode episode, const ModelBundle& bundle,
                                         FeatureCache& cache, const MetaTrainConfig& cfg,
                                         uint64_t novel_init_seed);

// Eq.-9 step: calibrated scores -> pixel cross entropy -> one SGD step on the
// calibrator parameters only. Returns the loss value.
double run_episode_update(const EpisodeArtifacts& artifacts, Calibrator& calibrator,
                          SgdOptimizer& optimizer);

struct MetaLogRow {
  int episode;
  std::vector<int> fake_novel_ids;
  double inner_final_loss;
  double meta_loss;
  double lr;
};

// Full Algorithm-1 loop. All calibrators ride the identical episode stream
// (artifacts are calibrator-independent); each gets its own optimizer.
// Returns one log per calibrator.
std::vector<std::vector<MetaLogRow>> meta_train(const SegDataset& ds,
                                                const ModelBundle& bundle,
                                                const std::vector<Calibrator*>& calibrators,
                                                const MetaTrainConfig& cfg,
                                                uint64_t master_seed);

void write_meta_log_csv(const std::string& path, const std::vector<MetaLogRow>& log);

}  // namespace pcn
