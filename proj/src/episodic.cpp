#include "pcn/episodic.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <future>

#include "pcn/ops.hpp"

namespace pcn {

void MetaTrainConfig::validate(const ClassSplit& split) const {
  if (iterations < 0) throw ConfigError("MetaTrainConfig: negative iterations");
  if (learning_rate < 0) throw ConfigError("MetaTrainConfig: negative learning rate");
  if (n_fake_novel < 1) throw ConfigError("MetaTrainConfig: N_fn must be >= 1");
  if (n_fake_novel >= split.n_base()) {
    throw ConfigError("MetaTrainConfig: N_fn must leave at least one remaining base class");
  }
  if (queries_per_class < 1) throw ConfigError("MetaTrainConfig: Q must be >= 1");
  if (inner.iterations < 0) throw ConfigError("MetaTrainConfig: negative inner iterations");
  if (threads < 1) throw ConfigError("MetaTrainConfig: threads must be >= 1");
}

LabelSpace Episode::label_space() const {
  std::vector<int> ids = remaining_base_ids;
  ids.insert(ids.end(), fake_novel_ids.begin(), fake_novel_ids.end());
  return LabelSpace(std::move(ids));
}

namespace {

// Distinct draws from `pool`, excluding `used`; DataError when exhausted.
int draw_image(const std::vector<int>& pool, const std::vector<char>& used, Rng& rng,
               const std::string& what) {
  int available = 0;
  for (int idx : pool) {
    if (!used[idx]) ++available;
  }
  if (available == 0) throw DataError("sample_episode: no remaining image for " + what);
  int pick = rng.uniform_int(0, available - 1);
  for (int idx : pool) {
    if (used[idx] && pick >= 0) continue;
    if (pick == 0) return idx;
    --pick;
  }
  throw DataError("sample_episode: draw failed for " + what);
}

}  // namespace

Episode sample_episode(const SegDataset& ds, const MetaTrainConfig& cfg,
                       uint64_t episode_seed, int shots) {
  cfg.validate(ds.split);
  if (shots < 1) throw ConfigError("sample_episode: shots must be >= 1");
  Rng rng(episode_seed);

  Episode ep;
  ep.seed = episode_seed;
  ep.shots = shots;
  ep.queries_per_class = cfg.queries_per_class;

  // uniform fake-novel choice
  std::vector<int> base = ds.split.base_ids;
  rng.shuffle(base);
  ep.fake_novel_ids.assign(base.begin(), base.begin() + cfg.n_fake_novel);
  for (int id : ds.split.base_ids) {
    if (std::find(ep.fake_novel_ids.begin(), ep.fake_novel_ids.end(), id) ==
        ep.fake_novel_ids.end()) {
      ep.remaining_base_ids.push_back(id);
    }
  }

  std::vector<char> used(ds.train.size(), 0);
  for (int fn : ep.fake_novel_ids) {
    for (int s = 0; s < shots; ++s) {
      const int idx = draw_image(ds.train_by_class[fn], used, rng,
                                 "support of class " + std::to_string(fn));
      used[idx] = 1;
      ep.support_indices.push_back(idx);
    }
  }
  // fake-novel queries, then the same number of remaining-base queries
  for (int fn : ep.fake_novel_ids) {
    for (int q = 0; q < cfg.queries_per_class; ++q) {
      const int idx = draw_image(ds.train_by_class[fn], used, rng,
                                 "query of class " + std::to_string(fn));
      used[idx] = 1;
      ep.query_indices.push_back(idx);
    }
  }
  const int base_queries = cfg.n_fake_novel * cfg.queries_per_class;
  for (int q = 0; q < base_queries; ++q) {
    const int rb = ep.remaining_base_ids[rng.uniform_int(
        0, static_cast<int>(ep.remaining_base_ids.size()) - 1)];
    const int idx = draw_image(ds.train_by_class[rb], used, rng,
                               "query of class " + std::to_string(rb));
    used[idx] = 1;
    ep.query_indices.push_back(idx);
  }

  // support masks: fake-novel ids survive, everything else is background
  const LabelSpace support_ids(ep.fake_novel_ids);
  for (int idx : ep.support_indices) {
    const SegSample& s = ds.train[idx];
    std::vector<double> mask(s.mask.data());
    for (double& v : mask) {
      if (support_ids.slot_of(static_cast<int>(v)) <= 0) v = kBackgroundId;
    }
    ep.support.push_back({s.image, Tensor::from_data(s.mask.shape(), std::move(mask))});
  }
  for (int idx : ep.query_indices) ep.query.push_back(ds.train[idx]);
  return ep;
}

FeatureCache::FeatureCache(const Backbone& backbone, const std::vector<SegSample>& samples,
                           FeatureTap tap)
    : backbone_(&backbone), samples_(&samples), tap_(tap),
      ready_(samples.size(), 0), fused_(samples.size()), tapped_(samples.size()) {
  if (!backbone.frozen()) {
    throw ContractError("FeatureCache: backbone must be frozen before caching features");
  }
}

std::pair<Tensor, Tensor> FeatureCache::get(int idx) {
  if (idx < 0 || idx >= static_cast<int>(samples_->size())) {
    throw ContractError("FeatureCache: index out of range");
  }
  std::lock_guard<std::mutex> lock(mu_);
  if (!ready_[idx]) {
    auto [fused, tapped] = backbone_->features_and_tap((*samples_)[idx].image, tap_);
    fused_[idx] = fused;
    tapped_[idx] = tapped;
    ready_[idx] = 1;
  }
  return {fused_[idx], tapped_[idx]};
}

EpisodeArtifacts build_episode_artifacts(Episode episode, const ModelBundle& bundle,
                                         FeatureCache& cache, const MetaTrainConfig& cfg,
                                         uint64_t novel_init_seed) {
  if (!bundle.backbone.frozen()) {
    throw ContractError("build_episode_artifacts: backbone must be frozen");
  }
  const LabelSpace base_space = bundle.base_space();
  const LabelSpace episode_space = episode.label_space();
  const int latent_h = bundle.backbone.latent_h();
  const int latent_w = bundle.backbone.latent_w();
  const int hw = latent_h * latent_w;
  const int image_size = bundle.backbone.config().input_size;

  // activate G_rb: pure row selection from the frozen base classifier
  std::vector<int> rb_slots;
  for (int id : episode.remaining_base_ids) rb_slots.push_back(base_space.slot_of(id));
  BaseClassifier g_rb = bundle.base_clf.select_slots(rb_slots);

  // fresh fake-novel classifier fitted on the support set
  const LabelSpace fn_space(episode.fake_novel_ids);
  std::vector<std::pair<Tensor, Tensor>> support;
  for (size_t s = 0; s < episode.support.size(); ++s) {
    support.emplace_back(cache.get(episode.support_indices[s]).first,
                         fn_space.relabel(episode.support[s].mask, true));
  }
  Rng novel_rng(novel_init_seed);
  EpisodeArtifacts art;
  NovelClassifier g_fn = train_novel(support, bundle.backbone.feature_channels(),
                                     static_cast<int>(episode.fake_novel_ids.size()),
                                     cfg.inner, novel_rng, &art.inner_final_loss);

  art.upsample_factor = image_size / latent_h;
  for (size_t q = 0; q < episode.query.size(); ++q) {
    auto [fused, tapped] = cache.get(episode.query_indices[q]);
    Tensor base_logits = reshape(g_rb.logits(fused), {g_rb.num_outputs(), hw});
    Tensor novel_logits = reshape(g_fn.logits(fused), {g_fn.num_outputs(), hw});
    QueryArtifact qa;
    qa.stack = fuse_nsf(base_logits, novel_logits, latent_h, latent_w);
    qa.tap_features = reshape(tapped, {tapped.dim(0), hw});
    qa.target_slots = reshape(episode_space.relabel(episode.query[q].mask, false),
                              {image_size * image_size});
    art.queries.push_back(std::move(qa));
  }
  art.episode = std::move(episode);
  return art;
}

double run_episode_update(const EpisodeArtifacts& artifacts, Calibrator& calibrator,
                          SgdOptimizer& optimizer) {
  Tape::current().reset();
  std::vector<Tensor> scores, targets;
  for (const QueryArtifact& qa : artifacts.queries) {
    ScoreStack calibrated = calibrator.apply(qa.stack, qa.tap_features);
    Tensor grid = reshape(calibrated.calibrated,
                          {calibrated.num_classes(), qa.stack.latent_h, qa.stack.latent_w});
    Tensor up = upsample_nearest(grid, artifacts.upsample_factor);
    scores.push_back(reshape(up, {calibrated.num_classes(), up.dim(1) * up.dim(2)}));
    targets.push_back(qa.target_slots);
  }
  Tensor loss = cross_entropy(concat(scores, 1), concat(targets, 0));
  const double value = loss.value();
  if (!std::isfinite(value)) throw NumericError("run_episode_update: non-finite loss");
  backward(loss);
  optimizer.step();
  Tape::current().reset();
  return value;
}

std::vector<std::vector<MetaLogRow>> meta_train(const SegDataset& ds,
                                                const ModelBundle& bundle,
                                                const std::vector<Calibrator*>& calibrators,
                                                const MetaTrainConfig& cfg,
                                                uint64_t master_seed) {
  cfg.validate(ds.split);
  if (!bundle.backbone.frozen()) throw ContractError("meta_train: backbone must be frozen");
  if (calibrators.empty()) throw ContractError("meta_train: no calibrators given");

  FeatureCache cache(bundle.backbone, ds.train, cfg.feature_tap);
  SgdConfig sgd{cfg.learning_rate, cfg.momentum, LrSchedule::kCosine, cfg.iterations};
  std::vector<std::unique_ptr<SgdOptimizer>> opts;
  for (Calibrator* cal : calibrators) {
    opts.push_back(std::make_unique<SgdOptimizer>(cal->params(), sgd));
  }

  auto make_artifacts = [&](int i) {
    Episode ep = sample_episode(ds, cfg, derive_seed(master_seed, streams::kEpisodeSample,
                                                     static_cast<uint64_t>(i)));
    return build_episode_artifacts(std::move(ep), bundle, cache, cfg,
                                   derive_seed(master_seed, streams::kNovelInit,
                                               static_cast<uint64_t>(i)));
  };

  std::vector<std::vector<MetaLogRow>> logs(calibrators.size());
  const int window = std::max(1, cfg.threads);
  std::deque<std::future<EpisodeArtifacts>> pipeline;
  int launched = 0;
  auto launch_next = [&]() {
    if (launched < cfg.iterations) {
      const int i = launched++;
      pipeline.push_back(std::async(std::launch::async, make_artifacts, i));
    }
  };
  if (cfg.threads > 1) {
    for (int i = 0; i < window; ++i) launch_next();
  }

  for (int i = 0; i < cfg.iterations; ++i) {
    EpisodeArtifacts art;
    if (cfg.threads > 1) {
      art = pipeline.front().get();
      pipeline.pop_front();
      launch_next();
    } else {
      art = make_artifacts(i);
    }
    const double lr = sgd.lr_at(i);
    for (size_t c = 0; c < calibrators.size(); ++c) {
      const double loss = run_episode_update(art, *calibrators[c], *opts[c]);
      logs[c].push_back({i, art.episode.fake_novel_ids, art.inner_final_loss, loss, lr});
    }
  }
  return logs;
}

void write_meta_log_csv(const std::string& path, const std::vector<MetaLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write training log '" + path + "'");
  out << "episode,fake_novel_ids,inner_final_loss,meta_loss,lr\n";
  out.precision(17);
  for (const MetaLogRow& row : log) {
    out << row.episode << ",";
    for (size_t i = 0; i < row.fake_novel_ids.size(); ++i) {
      if (i) out << ";";
      out << row.fake_novel_ids[i];
    }
    out << "," << row.inner_final_loss << "," << row.meta_loss << "," << row.lr << "\n";
  }
}

}  // namespace pcn
