#include "pcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pcn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

const Tensor& Checkpoint::require(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

std::string Checkpoint::require_meta(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint: missing meta key '" + key + "'");
  return it->second;
}

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const std::map<std::string, std::string>& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  out << "PCN-CKPT v1\n";
  for (const auto& [k, v] : meta) out << "meta " << k << " " << v << "\n";
  for (const auto& [name, t] : tensors) {
    out << "tensor " << name << " " << t.rank();
    for (int d : t.shape()) out << " " << d;
    out << "\n";
  }
  out << "data\n";
  for (const auto& [name, t] : tensors) {
    const auto& d = t.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!out) throw FormatError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "PCN-CKPT v1") {
    throw FormatError("checkpoint: bad magic in '" + path + "'");
  }
  Checkpoint ckpt;
  std::vector<std::pair<std::string, std::vector<int>>> entries;
  while (std::getline(in, line)) {
    if (line == "data") break;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (kind == "tensor") {
      std::string name;
      int rank = -1;
      ls >> name >> rank;
      if (!ls || rank < 0) throw FormatError("checkpoint: bad tensor line '" + line + "'");
      std::vector<int> shape(rank);
      for (int& d : shape) {
        ls >> d;
        if (!ls || d <= 0) throw FormatError("checkpoint: bad shape in '" + line + "'");
      }
      entries.emplace_back(name, std::move(shape));
    } else {
      throw FormatError("checkpoint: unexpected header line '" + line + "'");
    }
  }
  if (line != "data") throw FormatError("checkpoint: truncated header in '" + path + "'");

  for (auto& [name, shape] : entries) {
    std::vector<double> data(shape_size(shape));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double))) {
      throw FormatError("checkpoint: truncated data for tensor '" + name + "' in '" + path + "'");
    }
    ckpt.tensors.emplace(name, Tensor::from_data(shape, std::move(data)));
  }
  return ckpt;
}

}  // namespace pcn
