#include "pcn/evaluation.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "pcn/ops.hpp"

namespace pcn {

double iou(const Tensor& pred, const Tensor& gt, int class_id) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError("iou: mask shapes differ, " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
  }
  int64_t inter = 0, uni = 0;
  const auto& pd = pred.data();
  const auto& gd = gt.data();
  for (size_t i = 0; i < pd.size(); ++i) {
    const bool p = static_cast<int>(pd[i]) == class_id;
    const bool g = static_cast<int>(gd[i]) == class_id;
    inter += (p && g);
    uni += (p || g);
  }
  if (uni == 0) return -1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double h_mean(double miou_base, double miou_novel) {
  if (miou_base < 0.0 || miou_novel < 0.0) {
    throw NumericError("h_mean: negative mIoU input");
  }
  const double s = miou_base + miou_novel;
  if (s == 0.0) return 0.0;
  return 2.0 * miou_base * miou_novel / s;
}

double miou_all(double miou_base, double miou_novel, int n_base, int n_novel) {
  if (n_base <= 0 || n_novel <= 0) throw NumericError("miou_all: class counts must be positive");
  return (n_base * miou_base + n_novel * miou_novel) / static_cast<double>(n_base + n_novel);
}

namespace {

struct ClassCounts {
  std::vector<int64_t> inter, uni;  // indexed by class id
  explicit ClassCounts(int num_classes) : inter(num_classes + 1, 0), uni(num_classes + 1, 0) {}

  void add(const std::vector<int>& pred, const std::vector<int>& gt) {
    for (size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == gt[i]) {
        ++inter[gt[i]];
        ++uni[gt[i]];
      } else {
        ++uni[pred[i]];
        ++uni[gt[i]];
      }
    }
  }
};

struct TaskResult {
  // per-mode counts for this task
  std::vector<ClassCounts> counts;
};

// nearest upsample of a slot map, then slots -> dataset class ids
std::vector<int> prediction_to_ids(const Tensor& slot_map, int up, const LabelSpace& space) {
  const int h = slot_map.dim(0), w = slot_map.dim(1);
  const int H = h * up, W = w * up;
  std::vector<int> ids(static_cast<size_t>(H) * W);
  const auto& sd = slot_map.data();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int slot = static_cast<int>(sd[static_cast<size_t>(y / up) * w + x / up]);
      ids[static_cast<size_t>(y) * W + x] = slot == 0 ? kBackgroundId : space.class_at(slot);
    }
  return ids;
}

std::vector<int> mask_to_ids(const Tensor& mask) {
  std::vector<int> ids(mask.data().size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(mask.data()[i]);
  return ids;
}

double mean_iou_over(const ClassCounts& counts, const std::vector<int>& class_ids) {
  double total = 0.0;
  int n = 0;
  for (int id : class_ids) {
    if (counts.uni[id] > 0) {
      total += static_cast<double>(counts.inter[id]) / static_cast<double>(counts.uni[id]);
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / n;
}

}  // namespace

std::vector<MetricsReport> evaluate_gfss(
    const ModelBundle& bundle, const SegDataset& ds,
    const std::vector<std::string>& modes,
    const std::map<std::string, const Calibrator*>& calibrators,
    const EvalConfig& cfg, uint64_t seed) {
  if (!bundle.backbone.frozen()) throw ContractError("evaluate_gfss: backbone must be frozen");
  if (cfg.num_tasks < 1) throw ConfigError("evaluate_gfss: num_tasks must be >= 1");
  if (cfg.shots < 1) throw ConfigError("evaluate_gfss: shots must be >= 1");
  for (const std::string& mode : modes) {
    const bool needs_cal = mode == "pcn" || mode == "linear" || mode == "linear_nores" ||
                           mode == "selfattn";
    if (needs_cal && calibrators.find(mode) == calibrators.end()) {
      throw ConfigError("evaluate_gfss: mode '" + mode + "' has no calibrator checkpoint");
    }
    const bool known = needs_cal || mode == "plain" || mode == "npf" || mode == "nsf" ||
                       mode == "oracle" || mode == "constbg";
    if (!known) throw ConfigError("evaluate_gfss: unknown mode '" + mode + "'");
  }
  for (int id : ds.split.novel_ids) {
    if (ds.test_by_class[id].size() < static_cast<size_t>(cfg.shots + 1)) {
      throw DataError("evaluate_gfss: novel class " + std::to_string(id) +
                      " lacks test images for " + std::to_string(cfg.shots) + "-shot tasks");
    }
  }
  for (int id : ds.split.base_ids) {
    if (ds.test_by_class[id].empty()) {
      throw DataError("evaluate_gfss: base class " + std::to_string(id) + " has no test images");
    }
  }

  const LabelSpace eval_space = bundle.eval_space();
  const LabelSpace novel_space(ds.split.novel_ids);
  const int latent_h = bundle.backbone.latent_h();
  const int latent_w = bundle.backbone.latent_w();
  const int hw = latent_h * latent_w;
  const int up = bundle.backbone.config().input_size / latent_h;
  const int n_base = ds.split.n_base();
  const int n_novel = ds.split.n_novel();

  FeatureCache cache(bundle.backbone, ds.test, cfg.feature_tap);

  // frozen base logits are task-independent; memoize per test image
  std::vector<Tensor> base_logit_cache(ds.test.size());
  std::vector<char> base_logit_ready(ds.test.size(), 0);
  std::mutex base_logit_mu;
  auto base_logits_of = [&](int idx, const Tensor& fused) {
    std::lock_guard<std::mutex> lock(base_logit_mu);
    if (!base_logit_ready[idx]) {
      base_logit_cache[idx] =
          reshape(bundle.base_clf.logits(fused), {bundle.base_clf.num_outputs(), hw});
      base_logit_ready[idx] = 1;
    }
    return base_logit_cache[idx];
  };

  std::vector<TaskResult> tasks(cfg.num_tasks);

  auto run_task = [&](int t) {
    Rng rng(derive_seed(seed, streams::kEvalTask, static_cast<uint64_t>(t)));

    // K-shot support per novel class, disjoint from queries
    std::vector<char> used(ds.test.size(), 0);
    std::vector<int> support_idx;
    for (int id : ds.split.novel_ids) {
      const auto& pool = ds.test_by_class[id];
      for (int s = 0; s < cfg.shots; ++s) {
        for (int attempt = 0;; ++attempt) {
          const int pick = pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)];
          if (!used[pick]) {
            used[pick] = 1;
            support_idx.push_back(pick);
            break;
          }
          if (attempt > 1000) {
            throw DataError("evaluate_gfss: cannot draw disjoint support for class " +
                            std::to_string(id));
          }
        }
      }
    }

    // query pairs: one novel-class image + one image of the j-th base class
    std::vector<int> query_idx;
    for (int j = 0; j < n_base; ++j) {
      const int novel_id = ds.split.novel_ids[rng.uniform_int(0, n_novel - 1)];
      const auto& novel_pool = ds.test_by_class[novel_id];
      int pick = novel_pool[rng.uniform_int(0, static_cast<int>(novel_pool.size()) - 1)];
      for (int attempt = 0; used[pick] && attempt < 1000; ++attempt) {
        pick = novel_pool[rng.uniform_int(0, static_cast<int>(novel_pool.size()) - 1)];
      }
      if (used[pick]) throw DataError("evaluate_gfss: query draw exhausted novel images");
      query_idx.push_back(pick);

      const auto& base_pool = ds.test_by_class[ds.split.base_ids[j]];
      pick = base_pool[rng.uniform_int(0, static_cast<int>(base_pool.size()) - 1)];
      for (int attempt = 0; used[pick] && attempt < 1000; ++attempt) {
        pick = base_pool[rng.uniform_int(0, static_cast<int>(base_pool.size()) - 1)];
      }
      if (used[pick]) throw DataError("evaluate_gfss: query draw exhausted base images");
      query_idx.push_back(pick);
    }

    // one novel classifier per task, shared by every mode
    std::vector<std::pair<Tensor, Tensor>> support;
    for (int idx : support_idx) {
      support.emplace_back(cache.get(idx).first,
                           novel_space.relabel(ds.test[idx].mask, true));
    }
    Rng novel_rng(derive_seed(seed, streams::kNovelInit, static_cast<uint64_t>(t)));
    NovelClassifier g_novel = train_novel(support, bundle.backbone.feature_channels(),
                                          n_novel, cfg.inner, novel_rng);
    g_novel.freeze();

    TaskResult result;
    result.counts.assign(modes.size(), ClassCounts(ds.config.num_classes));

    for (int q : query_idx) {
      auto [fused, tapped] = cache.get(q);
      const std::vector<int> gt = mask_to_ids(ds.test[q].mask);

      Tensor base_logits = base_logits_of(q, fused);
      Tensor novel_logits = reshape(g_novel.logits(fused), {g_novel.num_outputs(), hw});
      Tensor tap_flat = reshape(tapped, {tapped.dim(0), hw});

      ScoreStack nsf_stack;  // shared by nsf and all calibrated modes
      bool nsf_ready = false;
      auto ensure_nsf = [&]() {
        if (!nsf_ready) {
          nsf_stack = fuse_nsf(base_logits, novel_logits, latent_h, latent_w);
          nsf_ready = true;
        }
      };

      for (size_t m = 0; m < modes.size(); ++m) {
        const std::string& mode = modes[m];
        std::vector<int> pred;
        if (mode == "oracle") {
          pred = gt;
        } else if (mode == "constbg") {
          pred.assign(gt.size(), kBackgroundId);
        } else if (mode == "plain") {
          ScoreStack st = fuse_plain(base_logits, novel_logits, latent_h, latent_w);
          pred = prediction_to_ids(argmax_segment(st, ScoreField::kFused), up, eval_space);
        } else if (mode == "npf") {
          ScoreStack st = fuse_npf(bundle.base_clf, g_novel, fused);
          pred = prediction_to_ids(argmax_segment(st, ScoreField::kFused), up, eval_space);
        } else if (mode == "nsf") {
          ensure_nsf();
          pred = prediction_to_ids(argmax_segment(nsf_stack, ScoreField::kFused), up, eval_space);
        } else {
          ensure_nsf();
          ScoreStack st = calibrators.at(mode)->apply(nsf_stack, tap_flat);
          pred = prediction_to_ids(argmax_segment(st, ScoreField::kCalibrated), up, eval_space);
        }
        result.counts[m].add(pred, gt);
      }
    }
    tasks[t] = std::move(result);
  };

  if (cfg.threads > 1) {
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (int t = next.fetch_add(1); t < cfg.num_tasks; t = next.fetch_add(1)) run_task(t);
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < cfg.threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  } else {
    for (int t = 0; t < cfg.num_tasks; ++t) run_task(t);
  }

  // reduce in task order (order-independent sums, deterministic either way)
  std::vector<int> base_ids = ds.split.base_ids;
  std::vector<int> novel_ids = ds.split.novel_ids;
  if (cfg.include_background) base_ids.insert(base_ids.begin(), kBackgroundId);

  std::vector<MetricsReport> reports;
  for (size_t m = 0; m < modes.size(); ++m) {
    MetricsReport rep;
    rep.mode = modes[m];
    rep.num_tasks = cfg.num_tasks;

    if (cfg.global_accumulate) {
      ClassCounts total(ds.config.num_classes);
      for (const TaskResult& tr : tasks) {
        for (size_t k = 0; k < total.inter.size(); ++k) {
          total.inter[k] += tr.counts[m].inter[k];
          total.uni[k] += tr.counts[m].uni[k];
        }
      }
      rep.miou_base = mean_iou_over(total, base_ids);
      rep.miou_novel = mean_iou_over(total, novel_ids);
      for (int id = 0; id <= ds.config.num_classes; ++id) {
        if (total.uni[id] > 0) {
          rep.per_class_iou[id] =
              static_cast<double>(total.inter[id]) / static_cast<double>(total.uni[id]);
        }
      }
    } else {
      double base_sum = 0.0, novel_sum = 0.0;
      std::map<int, std::pair<double, int>> per_class;  // sum, count
      for (const TaskResult& tr : tasks) {
        base_sum += mean_iou_over(tr.counts[m], base_ids);
        novel_sum += mean_iou_over(tr.counts[m], novel_ids);
        for (int id = 0; id <= ds.config.num_classes; ++id) {
          if (tr.counts[m].uni[id] > 0) {
            auto& [s, n] = per_class[id];
            s += static_cast<double>(tr.counts[m].inter[id]) /
                 static_cast<double>(tr.counts[m].uni[id]);
            ++n;
          }
        }
      }
      rep.miou_base = base_sum / cfg.num_tasks;
      rep.miou_novel = novel_sum / cfg.num_tasks;
      for (auto& [id, sn] : per_class) rep.per_class_iou[id] = sn.first / sn.second;
    }
    rep.h_mean = h_mean(rep.miou_base, rep.miou_novel);
    rep.miou_all = miou_all(rep.miou_base, rep.miou_novel, n_base, n_novel);
    reports.push_back(std::move(rep));
  }
  return reports;
}

void write_report_csv(const std::string& path, const std::vector<MetricsReport>& reports) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write report '" + path + "'");
  out << "mode,miou_base,miou_novel,miou_all,h_mean,num_tasks\n";
  out.precision(17);
  for (const MetricsReport& r : reports) {
    out << r.mode << "," << r.miou_base << "," << r.miou_novel << "," << r.miou_all << ","
        << r.h_mean << "," << r.num_tasks << "\n";
  }
}

void write_report_per_class_csv(const std::string& path,
                                const std::vector<MetricsReport>& reports) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write report '" + path + "'");
  out << "mode,class_id,iou\n";
  out.precision(17);
  for (const MetricsReport& r : reports) {
    for (const auto& [id, v] : r.per_class_iou) {
      out << r.mode << "," << id << "," << v << "\n";
    }
  }
}

std::string format_report_table(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "Method" << std::right << std::setw(8) << "Base"
     << std::setw(8) << "Novel" << std::setw(8) << "mIoU" << std::setw(8) << "H_mean" << "\n";
  os << std::string(46, '-') << "\n";
  os << std::fixed << std::setprecision(2);
  for (const MetricsReport& r : reports) {
    os << std::left << std::setw(14) << r.mode << std::right << std::setw(8)
       << 100.0 * r.miou_base << std::setw(8) << 100.0 * r.miou_novel << std::setw(8)
       << 100.0 * r.miou_all << std::setw(8) << 100.0 * r.h_mean << "\n";
  }
  return os.str();
}

}  // namespace pcn
