// Experiment runner: dataset generation, the three training stages, the
// paired evaluation protocol and the feature-tap ablation, all driven by one
// JSON config file.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "pcn/experiment.hpp"
#include "pcn/grad_check.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
  int threads = 1;
};

pcn::ExperimentConfig load_config(const GlobalArgs& g, const std::string& subcommand) {
  pcn::ExperimentConfig cfg = g.config_path.empty()
                                  ? pcn::ExperimentConfig::from_json_text("{}")
                                  : pcn::ExperimentConfig::from_file(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  cfg.meta.threads = g.threads;
  cfg.evaluation.threads = g.threads;
  if (g.out) {
    cfg.out_root = *g.out;
    return cfg;
  }
  cfg.out_root = (std::filesystem::path(cfg.out_root) / subcommand).string();
  return cfg;
}

std::string pick_run_dir(const pcn::ExperimentConfig& cfg) {
  const std::string dir = pcn::resolve_run_dir(cfg.out_root);
  std::cout << "run dir: " << dir << "\n";
  return dir;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const pcn::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const pcn::DataError*>(&e) || dynamic_cast<const pcn::LabelError*>(&e) ||
      dynamic_cast<const pcn::FormatError*>(&e)) {
    return 3;
  }
  if (dynamic_cast<const pcn::NumericError*>(&e) ||
      dynamic_cast<const pcn::DimensionError*>(&e) ||
      dynamic_cast<const pcn::ContractError*>(&e)) {
    return 4;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prediction-calibration GFSS pipeline on synthetic segmentation tasks"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "experiment config (JSON)");
  uint64_t seed_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "master seed override");
  std::string out_val;
  auto* out_opt = app.add_option("--out", out_val, "output directory override");
  app.add_option("--threads", g.threads, "worker thread cap")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  auto* train_base_cmd = app.add_subcommand("train-base", "stage 1: backbone + base classifier");
  auto* meta = app.add_subcommand("meta-train", "stage 2: episodic calibration training");
  auto* eval = app.add_subcommand("eval", "paired GFSS evaluation over modes");
  auto* ablate = app.add_subcommand("ablate-features", "feature-tap ablation (meta-train + eval per tap)");
  auto* gradcheck = app.add_subcommand("grad-check", "finite-difference audit of every op");

  std::string base_ckpt;
  meta->add_option("--base-ckpt", base_ckpt, "stage-1 checkpoint")->required();
  eval->add_option("--base-ckpt", base_ckpt, "stage-1 checkpoint");
  ablate->add_option("--base-ckpt", base_ckpt, "stage-1 checkpoint");

  std::vector<std::string> calib_ckpts;
  eval->add_option("--calib-ckpt", calib_ckpts,
                   "calibrator checkpoint as mode=path (repeatable)");

  int gc_trials = 20;
  double gc_tolerance = 1e-4;
  gradcheck->add_option("--trials", gc_trials, "random seeds per op");
  gradcheck->add_option("--tolerance", gc_tolerance, "max relative error");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed_val;
  if (*out_opt) g.out = out_val;

  try {
    if (gen->parsed()) {
      pcn::ExperimentConfig cfg = load_config(g, "gen-data");
      auto result = pcn::cmd_gen_data(cfg, pick_run_dir(cfg));
      std::cout << "dataset: " << result.dir << "\n";
      std::cout << "sha256: " << result.sha256 << "\n";
    } else if (train_base_cmd->parsed()) {
      pcn::ExperimentConfig cfg = load_config(g, "train-base");
      auto result = pcn::cmd_train_base(cfg, pick_run_dir(cfg));
      std::cout << "checkpoint: " << result.checkpoint_path << "\n";
      std::cout << "final loss: " << result.loss_curve.back() << "\n";
    } else if (meta->parsed()) {
      pcn::ExperimentConfig cfg = load_config(g, "meta-train");
      auto result = pcn::cmd_meta_train(cfg, base_ckpt, pick_run_dir(cfg));
      std::cout << "checkpoint: " << result.checkpoint_path << "\n";
      std::cout << "log: " << result.log_path << "\n";
    } else if (eval->parsed()) {
      pcn::ExperimentConfig cfg = load_config(g, "eval");
      if (base_ckpt.empty()) throw pcn::ConfigError("eval: --base-ckpt is required");
      std::map<std::string, std::string> cals;
      for (const std::string& spec : calib_ckpts) {
        const auto pos = spec.find('=');
        if (pos == std::string::npos) {
          throw pcn::ConfigError("--calib-ckpt wants mode=path, got '" + spec + "'");
        }
        cals[spec.substr(0, pos)] = spec.substr(pos + 1);
      }
      auto result = pcn::cmd_eval(cfg, base_ckpt, cals, pick_run_dir(cfg));
      std::cout << pcn::format_report_table(result.reports);
      std::cout << "report: " << result.csv_path << "\n";
    } else if (ablate->parsed()) {
      pcn::ExperimentConfig cfg = load_config(g, "ablate-features");
      if (base_ckpt.empty()) throw pcn::ConfigError("ablate-features: --base-ckpt is required");
      auto result = pcn::cmd_ablate_features(cfg, base_ckpt, pick_run_dir(cfg));
      for (const auto& row : result.rows) {
        std::printf("%-12s h_mean=%.2f\n", pcn::feature_tap_to_string(row.tap).c_str(),
                    100.0 * row.report.h_mean);
      }
      std::cout << "report: " << result.csv_path << "\n";
    } else if (gradcheck->parsed()) {
      pcn::ExperimentConfig cfg = load_config(g, "grad-check");
      auto cases = pcn::run_grad_check_battery(cfg.seed, gc_trials, gc_tolerance);
      bool all_ok = true;
      for (const auto& c : cases) {
        std::printf("%-36s max_rel_err=%.3e %s\n", c.name.c_str(), c.max_rel_error,
                    c.passed ? "ok" : "FAIL");
        all_ok = all_ok && c.passed;
      }
      if (!all_ok) throw pcn::NumericError("grad-check: tolerance exceeded");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
