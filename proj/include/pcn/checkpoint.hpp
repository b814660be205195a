#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pcn/tensor.hpp"

namespace pcn {

// Flat binary tensor container: text header (tensor names + shapes, meta
// key/values) followed by raw little-endian doubles. Round-trips bit-exact.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> meta;

  const Tensor& require(const std::string& name) const;
  std::string require_meta(const std::string& key) const;
};

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const std::map<std::string, std::string>& meta);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace pcn
