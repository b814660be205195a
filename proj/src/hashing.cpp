#include "pcn/hashing.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <vector>

#include "pcn/errors.hpp"

namespace fs = std::filesystem;

namespace pcn {

namespace {

struct Sha256 {
  EVP_MD_CTX* ctx;
  Sha256() : ctx(EVP_MD_CTX_new()) {
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
      throw Error("sha256: init failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx); }
  void update(const void* data, size_t len) {
    if (EVP_DigestUpdate(ctx, data, len) != 1) throw Error("sha256: update failed");
  }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx, digest, &len) != 1) throw Error("sha256: final failed");
    static const char* k = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(k[digest[i] >> 4]);
      out.push_back(k[digest[i] & 0xf]);
    }
    return out;
  }
};

}  // namespace

std::string sha256_hex(const std::string& data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.hex();
}

std::string sha256_dir_hex(const std::string& dir) {
  if (!fs::is_directory(dir)) throw FormatError("sha256_dir: '" + dir + "' is not a directory");
  std::vector<std::string> rel_paths;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      rel_paths.push_back(fs::relative(entry.path(), dir).generic_string());
    }
  }
  std::sort(rel_paths.begin(), rel_paths.end());

  Sha256 h;
  std::vector<char> buf(1 << 16);
  for (const std::string& rel : rel_paths) {
    h.update(rel.data(), rel.size());
    h.update("\0", 1);
    std::ifstream in(fs::path(dir) / rel, std::ios::binary);
    if (!in) throw FormatError("sha256_dir: cannot read '" + rel + "'");
    while (in) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      h.update(buf.data(), static_cast<size_t>(in.gcount()));
    }
  }
  return h.hex();
}

}  // namespace pcn
