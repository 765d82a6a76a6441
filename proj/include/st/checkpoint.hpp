#pragma once

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "st/backbone.hpp"

namespace st {

// Named-tensor archive with a JSON manifest: magic, manifest length,
// manifest bytes, raw little-endian doubles.
struct Checkpoint {
  std::string manifest_json;  // arbitrary metadata (config, counters, rng)
  ParamState tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace st
