#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "midnet/checkpoint.hpp"
#include "midnet/geometry.hpp"
#include "midnet/network.hpp"
#include "midnet/tensor.hpp"
#include "midnet/trainer.hpp"

namespace midnet::pipeline {

// A backbone plus the preprocessing that matches how it was trained. This is
// the inference entry point shared by the probes, registration, and the CLI.
class FeatureExtractor {
 public:
  // Loads a checkpoint directory written by the trainer.
  static FeatureExtractor load(const std::string& ckpt_dir);

  // Fresh randomly initialized backbone (untrained baseline arms).
  static FeatureExtractor random(const network::NetConfig& net_cfg,
                                 const trainer::TrainConfig& train_cfg);

  const network::NetConfig& net_config() const { return net_cfg_; }
  const trainer::TrainConfig& train_config() const { return train_cfg_; }
  network::Backbone<float>& backbone() { return *backbone_; }

  // Unit-sphere normalization plus normal estimation if absent. Augmented
  // views derive from this canonical form.
  geometry::PointCloud canonicalize(const geometry::PointCloud& cloud) const;

  // Applies a sampled transform to a canonical cloud and the fixed
  // contraction that keeps every augmented view inside the octree cube.
  geometry::PointCloud prepare_view(const geometry::PointCloud& canonical,
                                    const geometry::SimilarityTransform& transform) const;

  // canonicalize + identity view: the straight inference path. Every cloud
  // must pass through this (or prepare_view) before octree construction.
  geometry::PointCloud preprocess(const geometry::PointCloud& cloud) const;

  // Eval-mode features for prepared clouds: (shape features, point features),
  // one shape row per cloud, point rows concatenated in cloud order.
  std::pair<MatF, MatF> extract(std::vector<geometry::PointCloud> prepared);

  // Point features for a single prepared cloud (rows follow point order).
  MatF point_features(const geometry::PointCloud& prepared);

 private:
  FeatureExtractor(network::NetConfig net_cfg, trainer::TrainConfig train_cfg,
                   std::unique_ptr<network::Backbone<float>> backbone);

  network::NetConfig net_cfg_;
  trainer::TrainConfig train_cfg_;
  std::unique_ptr<network::Backbone<float>> backbone_;
};

}  // namespace midnet::pipeline
