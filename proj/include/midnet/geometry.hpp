#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "midnet/errors.hpp"
#include "midnet/rng.hpp"

namespace midnet::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Ordered point set with unit normals. Point order is identity: point i has
// point_id i, and augmented copies keep the order, so per-point labels
// (patch_ids, part_labels) transfer between a shape and its instances by
// index alone.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;      // empty or one unit vector per point
  std::vector<int> point_ids;     // always 0..M-1
  std::vector<int> patch_ids;     // empty or one id per point, in [0, K)
  std::vector<int> part_labels;   // empty or one label per point

  int size() const { return static_cast<int>(points.size()); }
  bool has_normals() const { return !normals.empty(); }
  bool has_patches() const { return !patch_ids.empty(); }
  bool has_parts() const { return !part_labels.empty(); }

  void reset_point_ids();
  // throws if sizes disagree, normals are non-unit, or point_ids are not 0..M-1
  void validate() const;
};

// Rotation + per-axis scale + translation, in the order p' = R (s .* p) + t.
struct SimilarityTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  Vec3 scale = Vec3::Ones();

  bool is_rigid(double tol = 1e-9) const {
    return (scale - Vec3::Ones()).cwiseAbs().maxCoeff() <= tol;
  }
  void validate() const;  // orthonormality, det +1
};

enum class RotationMode { kNone, kUprightAxisOnly, kFullSO3 };

struct AugmentPolicy {
  RotationMode rotation_mode = RotationMode::kUprightAxisOnly;
  int up_axis = 1;  // y
  double translation_range = 0.25;  // each component in [-r, r]
  double scale_min = 0.75;
  double scale_max = 1.25;

  // Largest point norm reachable when transforming a unit-sphere cloud.
  // Clouds headed for an octree are divided by this so any augmented
  // instance stays inside [-1,1]^3 without per-cloud renormalization
  // (which would cancel the translation component of the augmentation).
  double headroom() const {
    return scale_max + translation_range * 1.7320508075688772;
  }

  void validate() const;
};

// Center on the centroid and divide by the max distance to it.
// Normals are untouched. Throws EmptyCloud.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

// Per-point normal = smallest-eigenvalue eigenvector of the covariance of
// the k nearest neighbors (query point included). Sign is arbitrary.
// Throws TooFewPoints when the cloud has fewer than k points or k < 3.
PointCloud estimate_normals_pca(const PointCloud& cloud, int k);

SimilarityTransform sample_transform(const AugmentPolicy& policy, Rng& rng);

PointCloud apply_transform(const PointCloud& cloud, const SimilarityTransform& t);

// Uniformly scale points about the origin (normals unchanged).
PointCloud scale_points(const PointCloud& cloud, double factor);

// Lloyd's algorithm on point coordinates with k-means++ seeding.
// Runs to assignment fixpoint or max_iters; empty clusters are re-seeded to
// the point farthest from its current center. Returns the cloud with
// patch_ids set; every patch in 0..K-1 is non-empty.
PointCloud kmeans_patches(const PointCloud& cloud, int K, uint64_t seed,
                          int max_iters = 100,
                          std::vector<double>* inertia_trace = nullptr);

// --- point-cloud file format -------------------------------------------
// ASCII, one point per line: x y z nx ny nz [patch_id [part_label]]
// '#' starts a comment. A file without normal columns loads fine; callers
// that need normals run estimate_normals_pca afterwards.
PointCloud load_pointcloud(const std::string& path);
void save_pointcloud(const PointCloud& cloud, const std::string& path);

}  // namespace midnet::geometry
