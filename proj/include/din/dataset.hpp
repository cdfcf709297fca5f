// In-memory labelled samples grouped by split.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "din/denseimage.hpp"

namespace din {

struct Sample {
  std::string id;
  FrameFeatureSequence sequence;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;

  std::size_t num_classes() const noexcept { return class_names.size(); }

  const std::vector<Sample>& split(std::string_view name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + std::string(name) + "'");
  }
};

}  // namespace din
