#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <utility>
#include <vector>

#include "midnet/geometry.hpp"
#include "midnet/pipeline.hpp"
#include "midnet/tensor.hpp"

namespace midnet::registration {

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  geometry::PointCloud apply(const geometry::PointCloud& cloud) const;
  // (*this) after `inner`: apply(x) == this->apply(inner.apply(x))
  RigidTransform compose(const RigidTransform& inner) const;
  RigidTransform inverse() const;
};

// Mutual nearest neighbours between two row-wise descriptor matrices under
// cosine similarity (rows are unit vectors, so the dot product suffices).
// Ties resolve to the lowest index. Pairs are (source row, target row).
std::vector<std::pair<int, int>> match_features(const MatF& src, const MatF& tgt);

// Least-squares rotation + translation mapping src[i] onto tgt[i].
// Throws TooFewCorrespondences for fewer than three pairs.
RigidTransform kabsch(const std::vector<Eigen::Vector3d>& src,
                      const std::vector<Eigen::Vector3d>& tgt);

struct RansacParams {
  int iterations = 1000;
  double inlier_threshold = 0.05;
  std::uint64_t seed = 1;
};

// Robust fit from candidate correspondences: 3-point RANSAC, then a final
// refit on the winning inlier set.
RigidTransform estimate_rigid(const geometry::PointCloud& src, const geometry::PointCloud& tgt,
                              const std::vector<std::pair<int, int>>& matches,
                              const RansacParams& params);

struct IcpResult {
  RigidTransform transform;
  std::vector<double> rmse;  // correspondence RMSE at entry to each iteration
  int iterations = 0;
};

// Point-to-point ICP from `init`. Each iteration records the RMSE of the
// current correspondences before refitting, so the trace is non-increasing.
IcpResult icp_refine(const geometry::PointCloud& src, const geometry::PointCloud& tgt,
                     const RigidTransform& init, int max_iterations = 100, double tol = 1e-6);

// Symmetric Hausdorff distance between the two point sets.
double hausdorff(const geometry::PointCloud& a, const geometry::PointCloud& b);

struct RegistrationResult {
  RigidTransform initial;   // feature-based estimate (identity if too few matches)
  RigidTransform refined;   // after ICP
  int match_count = 0;
  int inlier_count = 0;
  std::vector<double> icp_rmse;
  double hausdorff_after = 0.0;
};

// Full pipeline: per-point descriptors from the extractor, mutual matching,
// RANSAC initialization, ICP refinement. Falls back to an identity
// initialization when matching yields fewer than three pairs.
RegistrationResult register_clouds(const geometry::PointCloud& src,
                                   const geometry::PointCloud& tgt,
                                   pipeline::FeatureExtractor& extractor,
                                   const RansacParams& params = {});

}  // namespace midnet::registration
