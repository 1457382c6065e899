#pragma once

#include <string>
#include <utility>
#include <vector>

#include "midnet/network.hpp"
#include "midnet/tensor.hpp"
#include "midnet/trainer.hpp"

namespace midnet::checkpoint {

// Flat ordered collection of named float32 matrices (the on-disk unit).
struct TensorFile {
  std::vector<std::pair<std::string, MatF>> items;

  void add(const std::string& name, MatF value) { items.emplace_back(name, std::move(value)); }
  const MatF* find(const std::string& name) const {
    for (const auto& [n, m] : items)
      if (n == name) return &m;
    return nullptr;
  }
};

void write_tensor_file(const std::string& path, const TensorFile& tensors);
TensorFile read_tensor_file(const std::string& path);

struct Checkpoint {
  network::NetConfig net_config;
  trainer::TrainConfig train_config;
  trainer::TrainState state;
};

// Writes ckpt.bin (tensors), ckpt.meta (counters, RNG state, config hashes)
// and canonical copies of both configs into dir. save(load(dir)) reproduces
// the directory byte for byte.
void save(const std::string& dir, const network::NetConfig& net_cfg,
          const trainer::TrainConfig& train_cfg, trainer::TrainState& state);

// Rebuilds the state from dir; refuses tensors or configs that do not match
// (ConfigMismatch).
Checkpoint load(const std::string& dir);

}  // namespace midnet::checkpoint
