#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pcn/bundle.hpp"
#include "pcn/calibration.hpp"
#include "pcn/episodic.hpp"
#include "pcn/evaluation.hpp"
#include "pcn/synth_data.hpp"

namespace pcn {

// One structured config file drives every subcommand. Unknown keys are a
// hard error; the resolved config is written beside every run's outputs.
struct ExperimentConfig {
  uint64_t seed = 0;
  std::string out_root = "runs";
  std::optional<std::string> dataset_path;  // load instead of generating
  SynthConfig dataset;
  BackboneConfig backbone;
  TrainBaseConfig base_training;
  MetaTrainConfig meta;
  std::string calibration = "pcn";  // pcn | linear | linear_nores | selfattn
  int calib_dim = 16;
  bool scale_before_softmax = false;
  EvalConfig evaluation;
  std::vector<std::string> eval_modes = {"plain", "npf", "nsf", "pcn"};
  int heatmap_queries = 0;  // dump heatmaps for the first N query images

  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_json_text(const std::string& text);
  std::string to_json_text() const;  // canonical (sorted keys)
  std::string config_hash() const;
  void validate() const;
};

// Never reuses an existing run directory: appends -2, -3, ... until free.
std::string resolve_run_dir(const std::string& base);

// Dataset per config: generate deterministically or load dataset_path.
SegDataset obtain_dataset(const ExperimentConfig& cfg);

struct GenDataResult {
  std::string dir;
  std::string sha256;
};
GenDataResult cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_dir);

struct TrainBaseResult {
  std::string checkpoint_path;
  std::vector<double> loss_curve;
};
TrainBaseResult cmd_train_base(const ExperimentConfig& cfg, const std::string& out_dir);

// Reassembles the frozen bundle from a stage-1 checkpoint.
ModelBundle load_bundle(const std::string& base_checkpoint);

struct MetaTrainResult {
  std::string checkpoint_path;
  std::string log_path;
  std::vector<MetaLogRow> log;
};
MetaTrainResult cmd_meta_train(const ExperimentConfig& cfg, const std::string& base_checkpoint,
                               const std::string& out_dir);

// Restores a trained calibrator from its checkpoint (variant in the meta).
std::unique_ptr<Calibrator> load_calibrator(const std::string& calib_checkpoint,
                                            const ExperimentConfig& cfg);

struct EvalResult {
  std::vector<MetricsReport> reports;
  std::string csv_path;
};
EvalResult cmd_eval(const ExperimentConfig& cfg, const std::string& base_checkpoint,
                    const std::map<std::string, std::string>& calib_checkpoints,
                    const std::string& out_dir);

struct AblationRow {
  FeatureTap tap;
  MetricsReport report;  // pcn mode
};
struct AblateResult {
  std::vector<AblationRow> rows;
  std::string csv_path;
};
AblateResult cmd_ablate_features(const ExperimentConfig& cfg,
                                 const std::string& base_checkpoint,
                                 const std::string& out_dir);

}  // namespace pcn
