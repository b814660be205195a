#pragma once

#include <map>
#include <string>
#include <vector>

#include "pcn/bundle.hpp"
#include "pcn/calibration.hpp"
#include "pcn/episodic.hpp"

namespace pcn {

// IoU for one class over one mask pair; -1 when the union is empty (the
// class is then excluded from averages, not scored 0).
double iou(const Tensor& pred, const Tensor& gt, int class_id);

// Eq.-style harmonic mean of the two mIoUs; 0 when both are 0.
double h_mean(double miou_base, double miou_novel);

// Class-count-weighted mean.
double miou_all(double miou_base, double miou_novel, int n_base, int n_novel);

struct MetricsReport {
  std::string mode;
  std::map<int, double> per_class_iou;  // averaged over tasks where defined
  double miou_base = 0.0;
  double miou_novel = 0.0;
  double miou_all = 0.0;
  double h_mean = 0.0;
  int num_tasks = 0;
};

struct EvalConfig {
  int num_tasks = 100;
  int shots = 1;  // K
  bool include_background = false;
  // accumulate intersections/unions globally instead of per task
  bool global_accumulate = false;
  FeatureTap feature_tap = FeatureTap::kLayer4High;
  TrainNovelConfig inner;  // test-time novel fitting, same protocol as meta
  int threads = 1;
};

// Pairwise GFSS test protocol: per task, fit a novel classifier on a K-shot
// support, then score n_base query pairs (novel image + j-th base image).
// All modes share the same supports, queries and fitted novel classifier.
// Modes: plain | npf | nsf | pcn | linear | linear_nores | selfattn,
// plus the debug endpoints oracle | constbg.
std::vector<MetricsReport> evaluate_gfss(
    const ModelBundle& bundle, const SegDataset& ds,
    const std::vector<std::string>& modes,
    const std::map<std::string, const Calibrator*>& calibrators,
    const EvalConfig& cfg, uint64_t seed);

void write_report_csv(const std::string& path, const std::vector<MetricsReport>& reports);
void write_report_per_class_csv(const std::string& path,
                                const std::vector<MetricsReport>& reports);
// Table-style text output (Base / Novel / mIoU / H_mean, x100).
std::string format_report_table(const std::vector<MetricsReport>& reports);

}  // namespace pcn
