#pragma once

#include <algorithm>
#include <vector>

#include "pcn/errors.hpp"

namespace pcn {

constexpr int kBackgroundId = 0;

// Base/novel label-space split. Background (id 0) is outside both lists.
struct ClassSplit {
  std::vector<int> base_ids;
  std::vector<int> novel_ids;

  int n_base() const { return static_cast<int>(base_ids.size()); }
  int n_novel() const { return static_cast<int>(novel_ids.size()); }

  bool is_base(int id) const {
    return std::find(base_ids.begin(), base_ids.end(), id) != base_ids.end();
  }
  bool is_novel(int id) const {
    return std::find(novel_ids.begin(), novel_ids.end(), id) != novel_ids.end();
  }

  void validate() const {
    if (base_ids.empty()) throw ConfigError("ClassSplit: no base classes");
    for (int id : base_ids) {
      if (id == kBackgroundId) throw ConfigError("ClassSplit: background id in base list");
      if (is_novel(id)) throw ConfigError("ClassSplit: class " + std::to_string(id) + " is both base and novel");
    }
    for (int id : novel_ids) {
      if (id == kBackgroundId) throw ConfigError("ClassSplit: background id in novel list");
    }
    auto has_dup = [](std::vector<int> v) {
      std::sort(v.begin(), v.end());
      return std::adjacent_find(v.begin(), v.end()) != v.end();
    };
    if (has_dup(base_ids) || has_dup(novel_ids)) {
      throw ConfigError("ClassSplit: duplicate class id");
    }
  }
};

// Episodic partition of the base classes: fake-novel vs remaining-base.
struct FakeNovelSplit {
  std::vector<int> fake_novel_ids;      // C_fn
  std::vector<int> remaining_base_ids;  // C_rb
};

}  // namespace pcn
