#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcn/class_split.hpp"
#include "pcn/tensor.hpp"

namespace pcn {

struct SegSample {
  Tensor image;  // [3,h,w], values quantized to byte/255
  Tensor mask;   // [h,w], class ids
};

struct SynthConfig {
  int image_size = 32;
  int num_classes = 8;                  // foreground classes, ids 1..num_classes
  std::vector<int> novel_ids = {7, 8};  // held out of the training split
  int train_images = 240;
  int test_images = 160;
  double noise_sigma = 0.05;
  int min_shapes = 1;
  int max_shapes = 3;
  double test_novel_fraction = 0.4;  // share of test images drawn from novel classes

  void validate() const;
  ClassSplit split() const;
};

// In-memory dataset. Train images carry base-class masks only; each test
// image is either base-role or novel-role (the two never co-exist).
struct SegDataset {
  SynthConfig config;
  uint64_t seed = 0;
  std::vector<SegSample> train;
  std::vector<SegSample> test;
  ClassSplit split;
  // images (by index into train/test) whose mask contains the class
  std::vector<std::vector<int>> train_by_class;  // size num_classes+1
  std::vector<std::vector<int>> test_by_class;

  void rebuild_class_index();
};

// Pure function of (config, seed): identical bytes every call.
SegDataset generate_dataset(const SynthConfig& cfg, uint64_t seed);

// On-disk layout: images/NNNN.ppm, masks/NNNN.pgm, manifest.json.
void save_dataset(const SegDataset& ds, const std::string& dir);
SegDataset load_dataset(const std::string& dir);

}  // namespace pcn
