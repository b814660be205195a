#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcn/tensor.hpp"

namespace pcn {

// Binary PPM (P6) / PGM (P5) helpers. Images are carried as [3,h,w] tensors
// with values in {0/255, ..., 255/255}; masks as [h,w] tensors of class ids.

void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

void write_pgm8(const std::string& path, const Tensor& mask);
Tensor read_pgm8(const std::string& path);

// 16-bit PGM used for score heatmap export; values linearly mapped from
// [lo, hi] to [0, 65535].
void write_pgm16(const std::string& path, const std::vector<double>& plane,
                 int h, int w, double lo, double hi);

}  // namespace pcn
