#pragma once

#include <string>

namespace pcn {

// Hex-encoded SHA-256 of a string.
std::string sha256_hex(const std::string& data);

// Hash of a directory tree: relative paths in sorted order, each followed by
// its byte content. Stable across machines for identical trees.
std::string sha256_dir_hex(const std::string& dir);

}  // namespace pcn
