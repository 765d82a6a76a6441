#pragma once

#include <optional>

#include "st/backbone.hpp"
#include "st/config.hpp"
#include "st/heads.hpp"

namespace st {

// Encoder plus (for the relation head) its comparison module. Copying a
// Model deep-clones all parameters.
struct Model {
  std::string head;
  Encoder encoder;
  std::optional<RelationModule> relation;

  static Model create(const TrainConfig& cfg);

  // All parameters in one state, "enc." / "rel." prefixed.
  ParamState snapshot() const;
  void load_snapshot(const ParamState& state);
};

}  // namespace st
