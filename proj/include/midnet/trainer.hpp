#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "midnet/config.hpp"
#include "midnet/datagen.hpp"
#include "midnet/geometry.hpp"
#include "midnet/midloss.hpp"
#include "midnet/network.hpp"
#include "midnet/rng.hpp"

namespace midnet::trainer {

struct TrainConfig {
  int batch_size = 32;
  int epochs = 400;
  double lr = 0.03;
  double lr_decay = 0.1;
  std::vector<int> lr_milestones = {200, 300};  // absolute epochs (0-based)
  std::vector<double> lr_milestone_fracs;       // if set, overrides lr_milestones
  double momentum = 0.9;
  double weight_decay = 5e-4;  // skipped for parameters flagged no_decay
  double bank_momentum = 0.5;
  double shape_temperature = 0.1;
  double patch_temperature = 0.1;
  int patches_per_shape = 100;
  int normals_knn = 16;  // neighborhood for normal estimation when absent
  uint64_t seed = 0;
  geometry::AugmentPolicy augment;
  int checkpoint_every = 0;  // epochs between snapshots; 0 = final only

  void validate() const;
  std::vector<int> resolved_milestones() const;
  double lr_at(int epoch) const;

  static TrainConfig from_keyvalues(const config::KeyValues& kv);
  config::KeyValues to_keyvalues() const;
  uint64_t hash() const { return to_keyvalues().hash(); }
};

// Canonical training inputs: unit-sphere clouds with normals and k-means
// patch assignments, fixed for the whole run.
struct PretrainSet {
  std::vector<geometry::PointCloud> shapes;
  int patch_count = 0;

  static PretrainSet prepare(const datagen::Dataset& dataset, const TrainConfig& cfg);
};

// v <- momentum * v + g + weight_decay * p;  p <- p - lr * v
void sgd_step(const std::vector<network::Parameter<float>*>& params, float lr, float momentum,
              float weight_decay);

struct TrainState {
  std::unique_ptr<network::Backbone<float>> backbone;
  midloss::ShapeBank<float> shape_bank;
  midloss::PatchBanks<float> patch_banks;
  int epoch = 0;     // next epoch to run
  int64_t step = 0;  // completed optimizer steps
  Rng rng;
};

struct PretrainResult {
  std::string checkpoint_dir;
  double first_loss = 0.0;        // loss at the very first step of this run
  double last_epoch_loss = 0.0;   // means over the final epoch
  double last_epoch_shape_acc = 0.0;
  double last_epoch_patch_acc = 0.0;
  int64_t steps = 0;
};

// Runs the pretraining loop, appending one metrics.csv row per step and
// writing checkpoints under out_dir. `resume` continues a loaded state
// (epochs already done are skipped); otherwise a fresh state is built.
PretrainResult pretrain(const PretrainSet& data, const network::NetConfig& net_cfg,
                        const TrainConfig& cfg, const std::string& out_dir,
                        std::ostream* log = nullptr, TrainState* resume = nullptr);

}  // namespace midnet::trainer
