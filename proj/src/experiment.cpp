#include "pcn/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pcn/checkpoint.hpp"
#include "pcn/hashing.hpp"
#include "pcn/ops.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pcn {

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
void maybe(const json& obj, const char* key, T& target) {
  if (obj.contains(key)) target = obj.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown_keys(j, {"seed", "out", "dataset", "backbone", "training",
                          "calibration", "evaluation"}, "top level");

  ExperimentConfig cfg;
  maybe(j, "seed", cfg.seed);
  maybe(j, "out", cfg.out_root);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown_keys(d, {"path", "image_size", "num_classes", "novel_ids", "train_images",
                            "test_images", "noise_sigma", "min_shapes", "max_shapes",
                            "test_novel_fraction"}, "dataset");
    if (d.contains("path")) cfg.dataset_path = d.at("path").get<std::string>();
    maybe(d, "image_size", cfg.dataset.image_size);
    maybe(d, "num_classes", cfg.dataset.num_classes);
    maybe(d, "novel_ids", cfg.dataset.novel_ids);
    maybe(d, "train_images", cfg.dataset.train_images);
    maybe(d, "test_images", cfg.dataset.test_images);
    maybe(d, "noise_sigma", cfg.dataset.noise_sigma);
    maybe(d, "min_shapes", cfg.dataset.min_shapes);
    maybe(d, "max_shapes", cfg.dataset.max_shapes);
    maybe(d, "test_novel_fraction", cfg.dataset.test_novel_fraction);
  }

  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    reject_unknown_keys(b, {"trunk_channels", "fused_channels", "ppm_branch_channels",
                            "ppm_bins", "feature_tap"}, "backbone");
    maybe(b, "trunk_channels", cfg.backbone.trunk_channels);
    maybe(b, "fused_channels", cfg.backbone.fused_channels);
    maybe(b, "ppm_branch_channels", cfg.backbone.ppm_branch_channels);
    maybe(b, "ppm_bins", cfg.backbone.ppm_bins);
    if (b.contains("feature_tap")) {
      cfg.backbone.feature_tap = feature_tap_from_string(b.at("feature_tap").get<std::string>());
    }
  }
  cfg.backbone.input_size = cfg.dataset.image_size;

  if (j.contains("training")) {
    const json& t = j.at("training");
    reject_unknown_keys(t, {"base", "meta"}, "training");
    if (t.contains("base")) {
      const json& b = t.at("base");
      reject_unknown_keys(b, {"epochs", "batch_size", "learning_rate", "momentum"},
                          "training.base");
      maybe(b, "epochs", cfg.base_training.epochs);
      maybe(b, "batch_size", cfg.base_training.batch_size);
      maybe(b, "learning_rate", cfg.base_training.learning_rate);
      maybe(b, "momentum", cfg.base_training.momentum);
    }
    if (t.contains("meta")) {
      const json& m = t.at("meta");
      reject_unknown_keys(m, {"iterations", "learning_rate", "momentum", "n_fake_novel",
                              "queries_per_class", "inner_iterations", "inner_lr"},
                          "training.meta");
      maybe(m, "iterations", cfg.meta.iterations);
      maybe(m, "learning_rate", cfg.meta.learning_rate);
      maybe(m, "momentum", cfg.meta.momentum);
      maybe(m, "n_fake_novel", cfg.meta.n_fake_novel);
      maybe(m, "queries_per_class", cfg.meta.queries_per_class);
      maybe(m, "inner_iterations", cfg.meta.inner.iterations);
      maybe(m, "inner_lr", cfg.meta.inner.learning_rate);
    }
  }

  if (j.contains("calibration")) {
    const json& c = j.at("calibration");
    reject_unknown_keys(c, {"variant", "dim", "scale_before_softmax"}, "calibration");
    maybe(c, "variant", cfg.calibration);
    maybe(c, "dim", cfg.calib_dim);
    maybe(c, "scale_before_softmax", cfg.scale_before_softmax);
  }

  if (j.contains("evaluation")) {
    const json& e = j.at("evaluation");
    reject_unknown_keys(e, {"num_tasks", "shots", "include_background", "global_accumulate",
                            "modes", "heatmap_queries"}, "evaluation");
    maybe(e, "num_tasks", cfg.evaluation.num_tasks);
    maybe(e, "shots", cfg.evaluation.shots);
    maybe(e, "include_background", cfg.evaluation.include_background);
    maybe(e, "global_accumulate", cfg.evaluation.global_accumulate);
    maybe(e, "modes", cfg.eval_modes);
    maybe(e, "heatmap_queries", cfg.heatmap_queries);
  }

  cfg.meta.feature_tap = cfg.backbone.feature_tap;
  cfg.evaluation.feature_tap = cfg.backbone.feature_tap;
  cfg.evaluation.inner = cfg.meta.inner;  // test-time fitting mirrors the episodes
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  dataset.validate();
  backbone.validate();
  if (calibration != "pcn" && calibration != "linear" && calibration != "linear_nores" &&
      calibration != "selfattn") {
    throw ConfigError("config: unknown calibration variant '" + calibration + "'");
  }
  if (calib_dim < 1) throw ConfigError("config: calibration dim must be positive");
  if (base_training.epochs < 1) throw ConfigError("config: base epochs must be >= 1");
  if (base_training.batch_size < 1) throw ConfigError("config: base batch_size must be >= 1");
  meta.validate(dataset.split());
  if (evaluation.num_tasks < 1) throw ConfigError("config: num_tasks must be >= 1");
  if (evaluation.shots < 1) throw ConfigError("config: shots must be >= 1");
  if (heatmap_queries < 0) throw ConfigError("config: heatmap_queries must be >= 0");
}

std::string ExperimentConfig::to_json_text() const {
  json d{{"image_size", dataset.image_size},
         {"num_classes", dataset.num_classes},
         {"novel_ids", dataset.novel_ids},
         {"train_images", dataset.train_images},
         {"test_images", dataset.test_images},
         {"noise_sigma", dataset.noise_sigma},
         {"min_shapes", dataset.min_shapes},
         {"max_shapes", dataset.max_shapes},
         {"test_novel_fraction", dataset.test_novel_fraction}};
  if (dataset_path) d["path"] = *dataset_path;
  json j{{"seed", seed},
         {"out", out_root},
         {"dataset", d},
         {"backbone",
          {{"trunk_channels", backbone.trunk_channels},
           {"fused_channels", backbone.fused_channels},
           {"ppm_branch_channels", backbone.ppm_branch_channels},
           {"ppm_bins", backbone.ppm_bins},
           {"feature_tap", feature_tap_to_string(backbone.feature_tap)}}},
         {"training",
          {{"base",
            {{"epochs", base_training.epochs},
             {"batch_size", base_training.batch_size},
             {"learning_rate", base_training.learning_rate},
             {"momentum", base_training.momentum}}},
           {"meta",
            {{"iterations", meta.iterations},
             {"learning_rate", meta.learning_rate},
             {"momentum", meta.momentum},
             {"n_fake_novel", meta.n_fake_novel},
             {"queries_per_class", meta.queries_per_class},
             {"inner_iterations", meta.inner.iterations},
             {"inner_lr", meta.inner.learning_rate}}}}},
         {"calibration",
          {{"variant", calibration},
           {"dim", calib_dim},
           {"scale_before_softmax", scale_before_softmax}}},
         {"evaluation",
          {{"num_tasks", evaluation.num_tasks},
           {"shots", evaluation.shots},
           {"include_background", evaluation.include_background},
           {"global_accumulate", evaluation.global_accumulate},
           {"modes", eval_modes},
           {"heatmap_queries", heatmap_queries}}}};
  return j.dump(2);
}

std::string ExperimentConfig::config_hash() const { return sha256_hex(to_json_text()); }

std::string resolve_run_dir(const std::string& base) {
  if (!fs::exists(base)) return base;
  for (int i = 2;; ++i) {
    const std::string candidate = base + "-" + std::to_string(i);
    if (!fs::exists(candidate)) return candidate;
  }
}

namespace {

void write_run_files(const ExperimentConfig& cfg, const std::string& out_dir,
                     const std::string& command) {
  fs::create_directories(out_dir);
  std::ofstream rc(fs::path(out_dir) / "resolved_config.json");
  rc << cfg.to_json_text() << "\n";
  json info{{"command", command}, {"config_hash", cfg.config_hash()}, {"seed", cfg.seed}};
  std::ofstream ri(fs::path(out_dir) / "run_info.json");
  ri << info.dump(2) << "\n";
}

std::map<std::string, std::string> base_meta(const ExperimentConfig& cfg) {
  return {{"config_hash", cfg.config_hash()}, {"seed", std::to_string(cfg.seed)}};
}

std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(ids[i]);
  }
  return s;
}

std::vector<int> split_ids(const std::string& s) {
  std::vector<int> ids;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) ids.push_back(std::stoi(tok));
  }
  return ids;
}

void write_metric_csv_with_meta(const std::string& path, const ExperimentConfig& cfg,
                                const std::vector<MetricsReport>& reports) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write report '" + path + "'");
  out << "# config_hash " << cfg.config_hash() << "\n";
  out << "# seed " << cfg.seed << "\n";
  out << "mode,miou_base,miou_novel,miou_all,h_mean,num_tasks\n";
  out.precision(17);
  for (const MetricsReport& r : reports) {
    out << r.mode << "," << r.miou_base << "," << r.miou_novel << "," << r.miou_all << ","
        << r.h_mean << "," << r.num_tasks << "\n";
  }
}

}  // namespace

SegDataset obtain_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset_path) return load_dataset(*cfg.dataset_path);
  return generate_dataset(cfg.dataset, cfg.seed);
}

GenDataResult cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_dir) {
  write_run_files(cfg, out_dir, "gen-data");
  SegDataset ds = generate_dataset(cfg.dataset, cfg.seed);
  const std::string data_dir = (fs::path(out_dir) / "dataset").string();
  save_dataset(ds, data_dir);
  return {data_dir, sha256_dir_hex(data_dir)};
}

TrainBaseResult cmd_train_base(const ExperimentConfig& cfg, const std::string& out_dir) {
  write_run_files(cfg, out_dir, "train-base");
  SegDataset ds = obtain_dataset(cfg);

  Rng bb_rng(derive_seed(cfg.seed, streams::kBackboneInit));
  Backbone backbone(cfg.backbone, bb_rng);
  Rng clf_rng(derive_seed(cfg.seed, streams::kBaseClfInit));
  BaseClassifier clf(cfg.backbone.fused_channels, ds.split.n_base(), clf_rng);

  Rng train_rng(derive_seed(cfg.seed, streams::kBaseTrain));
  std::vector<double> curve = train_base(ds, backbone, clf, cfg.base_training, train_rng);

  std::vector<std::pair<std::string, Tensor>> tensors = backbone.named_params();
  for (auto& nv : clf.named_params()) tensors.push_back(nv);
  auto meta = base_meta(cfg);
  meta["backbone_config"] = backbone_config_to_json(cfg.backbone);
  meta["base_ids"] = join_ids(ds.split.base_ids);
  meta["novel_ids"] = join_ids(ds.split.novel_ids);
  const std::string ckpt = (fs::path(out_dir) / "base.ckpt").string();
  save_checkpoint(ckpt, tensors, meta);

  std::ofstream curve_csv(fs::path(out_dir) / "base_loss.csv");
  curve_csv << "step,loss\n";
  curve_csv.precision(17);
  for (size_t i = 0; i < curve.size(); ++i) curve_csv << i << "," << curve[i] << "\n";

  return {ckpt, std::move(curve)};
}

ModelBundle load_bundle(const std::string& base_checkpoint) {
  Checkpoint ckpt = load_checkpoint(base_checkpoint);
  BackboneConfig bb_cfg = backbone_config_from_json(ckpt.require_meta("backbone_config"));
  Backbone backbone(bb_cfg, ckpt);

  ClassSplit split;
  split.base_ids = split_ids(ckpt.require_meta("base_ids"));
  split.novel_ids = split_ids(ckpt.require_meta("novel_ids"));
  split.validate();

  Rng dummy(0);
  BaseClassifier clf(bb_cfg.fused_channels, split.n_base(), dummy);
  clf.load_params(ckpt);

  backbone.freeze();
  clf.freeze();
  return ModelBundle(std::move(backbone), std::move(clf), std::move(split));
}

namespace {

CalibratorInit calibrator_init(const ExperimentConfig& cfg) {
  const int latent = cfg.backbone.input_size / 2;
  CalibratorInit init;
  init.token_len = latent * latent;
  init.dim = cfg.calib_dim;
  // training-time class layout for the linear variant: [bg | C_rb | C_fn]
  init.num_base = cfg.dataset.split().n_base() - cfg.meta.n_fake_novel;
  init.num_novel = cfg.meta.n_fake_novel;
  init.scale_before_softmax = cfg.scale_before_softmax;
  return init;
}

std::unique_ptr<Calibrator> fresh_calibrator(const ExperimentConfig& cfg,
                                             const std::string& variant) {
  Rng rng(derive_seed(cfg.seed, streams::kCalibInit, fnv1a(variant)));
  return make_calibrator(variant, calibrator_init(cfg), rng);
}

}  // namespace

MetaTrainResult cmd_meta_train(const ExperimentConfig& cfg, const std::string& base_checkpoint,
                               const std::string& out_dir) {
  write_run_files(cfg, out_dir, "meta-train");
  SegDataset ds = obtain_dataset(cfg);
  ModelBundle bundle = load_bundle(base_checkpoint);
  if (bundle.split.base_ids != ds.split.base_ids ||
      bundle.split.novel_ids != ds.split.novel_ids) {
    throw ContractError("meta-train: checkpoint split does not match dataset split");
  }

  std::unique_ptr<Calibrator> cal = fresh_calibrator(cfg, cfg.calibration);
  auto logs = meta_train(ds, bundle, {cal.get()}, cfg.meta, cfg.seed);

  auto meta = base_meta(cfg);
  meta["variant"] = cfg.calibration;
  meta["dim"] = std::to_string(cfg.calib_dim);
  meta["token_len"] = std::to_string(calibrator_init(cfg).token_len);
  meta["num_base"] = std::to_string(calibrator_init(cfg).num_base);
  meta["num_novel"] = std::to_string(calibrator_init(cfg).num_novel);
  meta["scale_before_softmax"] = cfg.scale_before_softmax ? "1" : "0";
  meta["feature_tap"] = feature_tap_to_string(cfg.meta.feature_tap);
  const std::string ckpt_path =
      (fs::path(out_dir) / ("calib_" + cfg.calibration + ".ckpt")).string();
  save_checkpoint(ckpt_path, cal->named_params(), meta);

  const std::string log_path =
      (fs::path(out_dir) / ("meta_log_" + cfg.calibration + ".csv")).string();
  write_meta_log_csv(log_path, logs[0]);
  return {ckpt_path, log_path, std::move(logs[0])};
}

std::unique_ptr<Calibrator> load_calibrator(const std::string& calib_checkpoint,
                                            const ExperimentConfig& cfg) {
  Checkpoint ckpt = load_checkpoint(calib_checkpoint);
  const std::string variant = ckpt.require_meta("variant");
  CalibratorInit init;
  init.token_len = std::stoi(ckpt.require_meta("token_len"));
  init.dim = std::stoi(ckpt.require_meta("dim"));
  init.num_base = std::stoi(ckpt.require_meta("num_base"));
  init.num_novel = std::stoi(ckpt.require_meta("num_novel"));
  init.scale_before_softmax = ckpt.require_meta("scale_before_softmax") == "1";
  const int latent = cfg.backbone.input_size / 2;
  if (init.token_len != latent * latent) {
    throw ContractError("calibrator checkpoint token length " +
                        std::to_string(init.token_len) + " does not match latent grid " +
                        std::to_string(latent * latent));
  }
  Rng rng(derive_seed(cfg.seed, streams::kCalibInit, fnv1a(variant)));
  auto cal = make_calibrator(variant, init, rng);
  cal->load_params(ckpt);
  cal->freeze();
  return cal;
}

EvalResult cmd_eval(const ExperimentConfig& cfg, const std::string& base_checkpoint,
                    const std::map<std::string, std::string>& calib_checkpoints,
                    const std::string& out_dir) {
  write_run_files(cfg, out_dir, "eval");
  SegDataset ds = obtain_dataset(cfg);
  ModelBundle bundle = load_bundle(base_checkpoint);

  std::vector<std::unique_ptr<Calibrator>> owned;
  std::map<std::string, const Calibrator*> cals;
  for (const std::string& mode : cfg.eval_modes) {
    const bool needs_cal = mode == "pcn" || mode == "linear" || mode == "linear_nores" ||
                           mode == "selfattn";
    if (!needs_cal) continue;
    auto it = calib_checkpoints.find(mode);
    if (it == calib_checkpoints.end()) {
      throw ConfigError("eval: mode '" + mode + "' requested but no calibrator checkpoint given");
    }
    owned.push_back(load_calibrator(it->second, cfg));
    if (owned.back()->kind() != mode) {
      throw ConfigError("eval: checkpoint '" + it->second + "' holds variant '" +
                        owned.back()->kind() + "', not '" + mode + "'");
    }
    cals[mode] = owned.back().get();
  }

  std::vector<MetricsReport> reports =
      evaluate_gfss(bundle, ds, cfg.eval_modes, cals, cfg.evaluation, cfg.seed);

  const std::string csv_path = (fs::path(out_dir) / "report.csv").string();
  write_metric_csv_with_meta(csv_path, cfg, reports);
  write_report_per_class_csv((fs::path(out_dir) / "report_per_class.csv").string(), reports);
  std::ofstream table(fs::path(out_dir) / "report.txt");
  table << format_report_table(reports);

  if (cfg.heatmap_queries > 0) {
    // dump score planes for the first task's first queries under each mode
    FeatureCache cache(bundle.backbone, ds.test, cfg.evaluation.feature_tap);
    Rng rng(derive_seed(cfg.seed, streams::kEvalTask, 0));
    const int hw = bundle.backbone.latent_h() * bundle.backbone.latent_w();
    int dumped = 0;
    for (int idx : ds.test_by_class[ds.split.novel_ids[0]]) {
      if (dumped >= cfg.heatmap_queries) break;
      auto [fused, tapped] = cache.get(idx);
      std::vector<std::pair<Tensor, Tensor>> support = {
          {fused, LabelSpace(ds.split.novel_ids).relabel(ds.test[idx].mask, true)}};
      TrainNovelConfig inner;
      NovelClassifier g_novel = train_novel(support, bundle.backbone.feature_channels(),
                                            ds.split.n_novel(), inner, rng);
      Tensor base_logits = reshape(bundle.base_clf.logits(fused),
                                   {bundle.base_clf.num_outputs(), hw});
      Tensor novel_logits = reshape(g_novel.logits(fused), {g_novel.num_outputs(), hw});
      ScoreStack stack = fuse_nsf(base_logits, novel_logits, bundle.backbone.latent_h(),
                                  bundle.backbone.latent_w());
      const std::string hm_dir = (fs::path(out_dir) / "heatmaps").string();
      export_heatmaps(stack, ScoreField::kFused, hm_dir,
                      "query" + std::to_string(idx) + "_nsf");
      for (auto& [mode, cal] : cals) {
        ScoreStack st = cal->apply(stack, reshape(tapped, {tapped.dim(0), hw}));
        export_heatmaps(st, ScoreField::kCalibrated, hm_dir,
                        "query" + std::to_string(idx) + "_" + mode);
      }
      ++dumped;
    }
  }
  return {std::move(reports), csv_path};
}

AblateResult cmd_ablate_features(const ExperimentConfig& cfg,
                                 const std::string& base_checkpoint,
                                 const std::string& out_dir) {
  write_run_files(cfg, out_dir, "ablate-features");
  SegDataset ds = obtain_dataset(cfg);
  ModelBundle bundle = load_bundle(base_checkpoint);

  AblateResult result;
  for (FeatureTap tap : all_feature_taps()) {
    ExperimentConfig tap_cfg = cfg;
    tap_cfg.backbone.feature_tap = tap;
    tap_cfg.meta.feature_tap = tap;
    tap_cfg.evaluation.feature_tap = tap;

    std::unique_ptr<Calibrator> cal = fresh_calibrator(tap_cfg, "pcn");
    meta_train(ds, bundle, {cal.get()}, tap_cfg.meta, tap_cfg.seed);
    cal->freeze();
    std::map<std::string, const Calibrator*> cals{{"pcn", cal.get()}};
    auto reports = evaluate_gfss(bundle, ds, {"pcn"}, cals, tap_cfg.evaluation, tap_cfg.seed);
    result.rows.push_back({tap, reports[0]});
  }

  result.csv_path = (fs::path(out_dir) / "ablation_features.csv").string();
  std::ofstream out(result.csv_path);
  if (!out) throw FormatError("cannot write '" + result.csv_path + "'");
  out << "# config_hash " << cfg.config_hash() << "\n";
  out << "# seed " << cfg.seed << "\n";
  out << "feature_tap,miou_base,miou_novel,miou_all,h_mean,num_tasks\n";
  out.precision(17);
  for (const AblationRow& row : result.rows) {
    out << feature_tap_to_string(row.tap) << "," << row.report.miou_base << ","
        << row.report.miou_novel << "," << row.report.miou_all << "," << row.report.h_mean
        << "," << row.report.num_tasks << "\n";
  }
  return result;
}

}  // namespace pcn
