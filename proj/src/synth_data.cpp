#include "pcn/synth_data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pcn/image_io.hpp"
#include "pcn/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pcn {

void SynthConfig::validate() const {
  if (image_size < 16) throw ConfigError("SynthConfig: image_size must be >= 16");
  if (num_classes < 2) throw ConfigError("SynthConfig: need at least 2 foreground classes");
  if (novel_ids.empty()) throw ConfigError("SynthConfig: need at least one novel class");
  for (int id : novel_ids) {
    if (id < 1 || id > num_classes) {
      throw ConfigError("SynthConfig: novel id " + std::to_string(id) + " outside [1," +
                        std::to_string(num_classes) + "]");
    }
  }
  if (static_cast<int>(novel_ids.size()) >= num_classes) {
    throw ConfigError("SynthConfig: no base classes left");
  }
  if (train_images < 1 || test_images < 1) throw ConfigError("SynthConfig: image counts must be positive");
  if (min_shapes < 1 || max_shapes < min_shapes) throw ConfigError("SynthConfig: bad shape count range");
  if (noise_sigma < 0.0) throw ConfigError("SynthConfig: negative noise sigma");
  if (test_novel_fraction < 0.0 || test_novel_fraction > 1.0) {
    throw ConfigError("SynthConfig: test_novel_fraction outside [0,1]");
  }
  split().validate();
}

ClassSplit SynthConfig::split() const {
  ClassSplit s;
  s.novel_ids = novel_ids;
  for (int id = 1; id <= num_classes; ++id) {
    if (std::find(novel_ids.begin(), novel_ids.end(), id) == novel_ids.end()) {
      s.base_ids.push_back(id);
    }
  }
  return s;
}

void SegDataset::rebuild_class_index() {
  train_by_class.assign(config.num_classes + 1, {});
  test_by_class.assign(config.num_classes + 1, {});
  auto scan = [&](const std::vector<SegSample>& samples, std::vector<std::vector<int>>& index) {
    for (size_t i = 0; i < samples.size(); ++i) {
      std::vector<bool> seen(config.num_classes + 1, false);
      for (double v : samples[i].mask.data()) {
        const int id = static_cast<int>(v);
        if (id >= 0 && id <= config.num_classes && !seen[id]) {
          seen[id] = true;
          index[id].push_back(static_cast<int>(i));
        }
      }
    }
  };
  scan(train, train_by_class);
  scan(test, test_by_class);
}

namespace {

struct ClassLook {
  double r, g, b;
  double tex_freq;
  double tex_angle;
};

// Hue wheel, fixed saturation/value: distinct colors, all linearly separable
// from the gray background under zero noise.
ClassLook class_look(int id, int num_classes) {
  const double hue = (id - 1) / static_cast<double>(num_classes);
  const double s = 0.75, v = 0.9;
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {r, g, b, 2.0 + 2.0 * (id % 4), (id % 2) ? 0.0 : 1.5707963267948966};
}

enum class ShapeType { kDisc, kSquare, kTriangle, kBar };

struct PlacedShape {
  ShapeType type;
  int class_id;
  int cx, cy, half;
  bool vertical;  // bars only

  bool contains(int x, int y) const {
    const int dx = x - cx, dy = y - cy;
    switch (type) {
      case ShapeType::kDisc:
        return dx * dx + dy * dy <= half * half;
      case ShapeType::kSquare:
        return std::abs(dx) <= half && std::abs(dy) <= half;
      case ShapeType::kTriangle: {
        // upward triangle: apex (cx, cy-half), base y = cy+half
        if (dy < -half || dy > half) return false;
        const double w = (dy + half) / 2.0;
        return std::abs(dx) <= w;
      }
      case ShapeType::kBar: {
        const int thin = std::max(1, half / 3);
        return vertical ? (std::abs(dx) <= thin && std::abs(dy) <= half)
                        : (std::abs(dx) <= half && std::abs(dy) <= thin);
      }
    }
    return false;
  }
};

bool boxes_overlap(const PlacedShape& a, const PlacedShape& b) {
  const int m = 1;  // margin
  return std::abs(a.cx - b.cx) <= a.half + b.half + m &&
         std::abs(a.cy - b.cy) <= a.half + b.half + m;
}

std::vector<PlacedShape> sample_layout(const SynthConfig& cfg,
                                       const std::vector<int>& allowed_classes,
                                       Rng& rng) {
  const int size = cfg.image_size;
  for (int attempt = 0; attempt < 50; ++attempt) {
    const int n = rng.uniform_int(cfg.min_shapes, cfg.max_shapes);
    std::vector<PlacedShape> placed;
    bool ok = true;
    for (int s = 0; s < n && ok; ++s) {
      bool found = false;
      for (int retry = 0; retry < 100 && !found; ++retry) {
        PlacedShape sh;
        sh.class_id = allowed_classes[rng.uniform_int(0, static_cast<int>(allowed_classes.size()) - 1)];
        sh.type = static_cast<ShapeType>(rng.uniform_int(0, 3));
        sh.half = rng.uniform_int(3, 6);
        sh.cx = rng.uniform_int(sh.half + 1, size - sh.half - 2);
        sh.cy = rng.uniform_int(sh.half + 1, size - sh.half - 2);
        sh.vertical = rng.uniform() < 0.5;
        bool clash = false;
        for (const auto& other : placed) clash = clash || boxes_overlap(sh, other);
        if (!clash) {
          placed.push_back(sh);
          found = true;
        }
      }
      ok = found;
    }
    if (ok) return placed;
  }
  throw DataError("generate_dataset: could not place shapes after bounded retries");
}

SegSample render_image(const SynthConfig& cfg, const std::vector<PlacedShape>& shapes,
                       Rng& rng) {
  const int size = cfg.image_size;
  std::vector<double> img(3 * static_cast<size_t>(size) * size);
  std::vector<double> mask(static_cast<size_t>(size) * size, 0.0);

  const double bg = 0.45;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double rgb[3] = {bg, bg, bg};
      for (const auto& sh : shapes) {
        if (!sh.contains(x, y)) continue;
        const ClassLook look = class_look(sh.class_id, cfg.num_classes);
        const double phase = look.tex_freq * 2.0 * 3.14159265358979323846 *
                             (x * std::cos(look.tex_angle) + y * std::sin(look.tex_angle)) / size;
        const double tex = 1.0 + 0.2 * std::sin(phase);
        rgb[0] = look.r * tex;
        rgb[1] = look.g * tex;
        rgb[2] = look.b * tex;
        mask[static_cast<size_t>(y) * size + x] = sh.class_id;
        break;  // shapes do not overlap
      }
      for (int c = 0; c < 3; ++c) {
        const double noisy = rgb[c] + cfg.noise_sigma * rng.normal();
        // quantize to the byte grid now so save/load round-trips bit-exact
        const double byte = std::clamp(std::round(noisy * 255.0), 0.0, 255.0);
        img[(static_cast<size_t>(c) * size + y) * size + x] = byte / 255.0;
      }
    }
  }
  return {Tensor::from_data({3, size, size}, std::move(img)),
          Tensor::from_data({size, size}, std::move(mask))};
}

}  // namespace

SegDataset generate_dataset(const SynthConfig& cfg, uint64_t seed) {
  cfg.validate();
  SegDataset ds;
  ds.config = cfg;
  ds.seed = seed;
  ds.split = cfg.split();

  for (int i = 0; i < cfg.train_images; ++i) {
    Rng rng(derive_seed(seed, streams::kDataset, static_cast<uint64_t>(i)));
    auto layout = sample_layout(cfg, ds.split.base_ids, rng);
    ds.train.push_back(render_image(cfg, layout, rng));
  }
  for (int i = 0; i < cfg.test_images; ++i) {
    Rng rng(derive_seed(seed, streams::kDataset,
                        static_cast<uint64_t>(cfg.train_images + i)));
    const bool novel_role = rng.uniform() < cfg.test_novel_fraction;
    const auto& classes = novel_role ? ds.split.novel_ids : ds.split.base_ids;
    auto layout = sample_layout(cfg, classes, rng);
    ds.test.push_back(render_image(cfg, layout, rng));
  }
  ds.rebuild_class_index();
  return ds;
}

namespace {

std::string index_name(int i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d.%s", i, ext);
  return buf;
}

json config_to_json(const SynthConfig& cfg) {
  return json{{"image_size", cfg.image_size},
              {"num_classes", cfg.num_classes},
              {"novel_ids", cfg.novel_ids},
              {"train_images", cfg.train_images},
              {"test_images", cfg.test_images},
              {"noise_sigma", cfg.noise_sigma},
              {"min_shapes", cfg.min_shapes},
              {"max_shapes", cfg.max_shapes},
              {"test_novel_fraction", cfg.test_novel_fraction}};
}

SynthConfig config_from_json(const json& j) {
  SynthConfig cfg;
  cfg.image_size = j.at("image_size").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.novel_ids = j.at("novel_ids").get<std::vector<int>>();
  cfg.train_images = j.at("train_images").get<int>();
  cfg.test_images = j.at("test_images").get<int>();
  cfg.noise_sigma = j.at("noise_sigma").get<double>();
  cfg.min_shapes = j.at("min_shapes").get<int>();
  cfg.max_shapes = j.at("max_shapes").get<int>();
  cfg.test_novel_fraction = j.at("test_novel_fraction").get<double>();
  return cfg;
}

std::vector<int> count_class_images(const std::vector<std::vector<int>>& by_class) {
  std::vector<int> counts;
  counts.reserve(by_class.size());
  for (const auto& v : by_class) counts.push_back(static_cast<int>(v.size()));
  return counts;
}

}  // namespace

void save_dataset(const SegDataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");

  auto dump = [&](const std::vector<SegSample>& samples, int offset) {
    for (size_t i = 0; i < samples.size(); ++i) {
      const int idx = offset + static_cast<int>(i);
      write_ppm((fs::path(dir) / "images" / index_name(idx, "ppm")).string(), samples[i].image);
      write_pgm8((fs::path(dir) / "masks" / index_name(idx, "pgm")).string(), samples[i].mask);
    }
  };
  dump(ds.train, 0);
  dump(ds.test, static_cast<int>(ds.train.size()));

  json manifest{{"format", "pcn-dataset-v1"},
                {"seed", ds.seed},
                {"config", config_to_json(ds.config)},
                {"base_ids", ds.split.base_ids},
                {"novel_ids", ds.split.novel_ids},
                {"train_count", ds.train.size()},
                {"test_count", ds.test.size()},
                {"class_image_counts",
                 json{{"train", count_class_images(ds.train_by_class)},
                      {"test", count_class_images(ds.test_by_class)}}}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw FormatError("cannot write manifest in '" + dir + "'");
  out << manifest.dump(2) << "\n";
}

SegDataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream mf(root / "manifest.json");
  if (!mf) throw FormatError("missing manifest.json in '" + dir + "'");
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest.json in '" + dir + "': " + e.what());
  }
  if (manifest.value("format", "") != "pcn-dataset-v1") {
    throw FormatError("unknown dataset format in '" + dir + "'");
  }

  SegDataset ds;
  try {
    ds.config = config_from_json(manifest.at("config"));
    ds.seed = manifest.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError("manifest.json in '" + dir + "': " + e.what());
  }
  ds.split = ds.config.split();

  const int train_count = manifest.at("train_count").get<int>();
  const int test_count = manifest.at("test_count").get<int>();
  auto load_one = [&](int idx) -> SegSample {
    const std::string img_path = (root / "images" / index_name(idx, "ppm")).string();
    const std::string mask_path = (root / "masks" / index_name(idx, "pgm")).string();
    SegSample s{read_ppm(img_path), read_pgm8(mask_path)};
    if (s.mask.dim(0) != s.image.dim(1) || s.mask.dim(1) != s.image.dim(2)) {
      throw FormatError("image/mask size mismatch for '" + mask_path + "'");
    }
    for (double v : s.mask.data()) {
      if (v < 0 || v > ds.config.num_classes) {
        throw FormatError("mask id " + std::to_string(v) + " out of range in '" + mask_path + "'");
      }
    }
    return s;
  };
  for (int i = 0; i < train_count; ++i) ds.train.push_back(load_one(i));
  for (int i = 0; i < test_count; ++i) ds.test.push_back(load_one(train_count + i));
  ds.rebuild_class_index();
  return ds;
}

}  // namespace pcn
