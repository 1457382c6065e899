#include "midnet/pipeline.hpp"

#include "midnet/errors.hpp"
#include "midnet/octree_batch.hpp"

namespace midnet::pipeline {

FeatureExtractor::FeatureExtractor(network::NetConfig net_cfg, trainer::TrainConfig train_cfg,
                                   std::unique_ptr<network::Backbone<float>> backbone)
    : net_cfg_(std::move(net_cfg)), train_cfg_(std::move(train_cfg)), backbone_(std::move(backbone)) {}

FeatureExtractor FeatureExtractor::load(const std::string& ckpt_dir) {
  checkpoint::Checkpoint ck = checkpoint::load(ckpt_dir);
  return FeatureExtractor(std::move(ck.net_config), std::move(ck.train_config),
                          std::move(ck.state.backbone));
}

FeatureExtractor FeatureExtractor::random(const network::NetConfig& net_cfg,
                                          const trainer::TrainConfig& train_cfg) {
  net_cfg.validate();
  train_cfg.validate();
  return FeatureExtractor(net_cfg, train_cfg,
                          std::make_unique<network::Backbone<float>>(net_cfg));
}

geometry::PointCloud FeatureExtractor::canonicalize(const geometry::PointCloud& cloud) const {
  geometry::PointCloud c = geometry::normalize_unit_sphere(cloud);
  if (!c.has_normals()) c = geometry::estimate_normals_pca(c, train_cfg_.normals_knn);
  c.reset_point_ids();
  return c;
}

geometry::PointCloud FeatureExtractor::prepare_view(
    const geometry::PointCloud& canonical, const geometry::SimilarityTransform& transform) const {
  return geometry::scale_points(geometry::apply_transform(canonical, transform),
                                1.0 / train_cfg_.augment.headroom());
}

geometry::PointCloud FeatureExtractor::preprocess(const geometry::PointCloud& cloud) const {
  return prepare_view(canonicalize(cloud), geometry::SimilarityTransform{});
}

std::pair<MatF, MatF> FeatureExtractor::extract(std::vector<geometry::PointCloud> prepared) {
  octree::OctreeBatch batch(std::move(prepared), net_cfg_.depth);
  return backbone_->extract(batch);
}

MatF FeatureExtractor::point_features(const geometry::PointCloud& prepared) {
  std::vector<geometry::PointCloud> one;
  one.push_back(prepared);
  return extract(std::move(one)).second;
}

}  // namespace midnet::pipeline
