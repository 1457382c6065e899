#include <algorithm>

#include "midnet/network.hpp"

namespace midnet::network {

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "full") return FusionMode::kFull;
  if (s == "one_fusion") return FusionMode::kOneFusion;
  if (s == "no_fusion") return FusionMode::kNoFusion;
  if (s == "unet") return FusionMode::kUnet;
  throw InvalidConfig("unknown fusion mode: " + s +
                      " (expected full, one_fusion, no_fusion, or unet)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kFull: return "full";
    case FusionMode::kOneFusion: return "one_fusion";
    case FusionMode::kNoFusion: return "no_fusion";
    case FusionMode::kUnet: return "unet";
  }
  return "full";
}

void NetConfig::validate() const {
  if (depth < 1 || depth > 12) throw InvalidConfig("depth must be in [1, 12]");
  if (channels.empty()) throw InvalidConfig("at least one branch is required");
  for (int c : channels)
    if (c < 1) throw InvalidConfig("branch channel counts must be positive");
  if (branches() > depth + 1)
    throw InvalidConfig("more branches than octree levels: " + std::to_string(branches()) +
                        " branches need depth >= " + std::to_string(branches() - 1));
  if (stages < 1) throw InvalidConfig("stages must be positive");
  if (blocks_per_stage < 1) throw InvalidConfig("blocks_per_stage must be positive");
  if (shape_feature_dim < 1 || point_feature_dim < 1)
    throw InvalidConfig("feature dimensions must be positive");
}

NetConfig NetConfig::from_keyvalues(const config::KeyValues& kv) {
  NetConfig c;
  c.depth = kv.get_int("depth", c.depth);
  c.channels = kv.get_int_list("channels", c.channels);
  c.stages = kv.get_int("stages", c.stages);
  c.blocks_per_stage = kv.get_int("blocks_per_stage", c.blocks_per_stage);
  c.shape_feature_dim = kv.get_int("shape_feature_dim", c.shape_feature_dim);
  c.point_feature_dim = kv.get_int("point_feature_dim", c.point_feature_dim);
  c.fusion_mode = fusion_mode_from_string(kv.get_string("fusion_mode", to_string(c.fusion_mode)));
  c.init_seed = kv.get_u64("init_seed", c.init_seed);
  kv.check_all_consumed();
  c.validate();
  return c;
}

config::KeyValues NetConfig::to_keyvalues() const {
  config::KeyValues kv;
  kv.set("depth", std::to_string(depth));
  std::string ch;
  for (size_t i = 0; i < channels.size(); ++i)
    ch += (i ? "," : "") + std::to_string(channels[i]);
  kv.set("channels", ch);
  kv.set("stages", std::to_string(stages));
  kv.set("blocks_per_stage", std::to_string(blocks_per_stage));
  kv.set("shape_feature_dim", std::to_string(shape_feature_dim));
  kv.set("point_feature_dim", std::to_string(point_feature_dim));
  kv.set("fusion_mode", to_string(fusion_mode));
  kv.set("init_seed", std::to_string(init_seed));
  return kv;
}

}  // namespace midnet::network
