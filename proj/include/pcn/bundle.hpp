#pragma once

#include "pcn/backbone.hpp"
#include "pcn/class_split.hpp"
#include "pcn/classifiers.hpp"

namespace pcn {

// Stage-1 output: frozen feature extractor + frozen base classifier plus the
// split they were trained under. Calibrators are carried separately because
// they vary by experiment.
struct ModelBundle {
  Backbone backbone;
  BaseClassifier base_clf;
  ClassSplit split;

  ModelBundle(Backbone bb, BaseClassifier clf, ClassSplit sp)
      : backbone(std::move(bb)), base_clf(std::move(clf)), split(std::move(sp)) {}

  LabelSpace base_space() const { return LabelSpace(split.base_ids); }
  LabelSpace eval_space() const {
    std::vector<int> ids = split.base_ids;
    ids.insert(ids.end(), split.novel_ids.begin(), split.novel_ids.end());
    return LabelSpace(std::move(ids));
  }
};

}  // namespace pcn
