#include "midnet/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

#include "midnet/kdtree.hpp"

namespace midnet::geometry {

void PointCloud::reset_point_ids() {
  point_ids.resize(points.size());
  for (int i = 0; i < size(); ++i) point_ids[i] = i;
}

void PointCloud::validate() const {
  const size_t m = points.size();
  if (point_ids.size() != m)
    throw Error("PointCloud: point_ids size mismatch");
  for (size_t i = 0; i < m; ++i)
    if (point_ids[i] != static_cast<int>(i))
      throw Error("PointCloud: point_ids must enumerate 0..M-1 in order");
  if (!normals.empty()) {
    if (normals.size() != m) throw Error("PointCloud: normals size mismatch");
    for (const auto& n : normals)
      if (std::abs(n.norm() - 1.0) > 1e-5)
        throw Error("PointCloud: non-unit normal");
  }
  if (!patch_ids.empty() && patch_ids.size() != m)
    throw Error("PointCloud: patch_ids size mismatch");
  if (!part_labels.empty() && part_labels.size() != m)
    throw Error("PointCloud: part_labels size mismatch");
}

void SimilarityTransform::validate() const {
  Mat3 gram = rotation.transpose() * rotation;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw Error("SimilarityTransform: rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-6)
    throw Error("SimilarityTransform: rotation determinant is not +1");
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  if (cloud.points.empty()) throw EmptyCloud("normalize_unit_sphere");
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : cloud.points) centroid += p;
  centroid /= static_cast<double>(cloud.size());
  double max_r = 0.0;
  for (const auto& p : cloud.points)
    max_r = std::max(max_r, (p - centroid).norm());
  PointCloud out = cloud;
  if (max_r == 0.0) {
    for (auto& p : out.points) p = Vec3::Zero();
    return out;
  }
  double inv = 1.0 / max_r;
  for (auto& p : out.points) p = (p - centroid) * inv;
  return out;
}

PointCloud estimate_normals_pca(const PointCloud& cloud, int k) {
  if (k < 3 || cloud.size() < k)
    throw TooFewPoints("estimate_normals_pca needs at least k >= 3 points");
  KdTree3 tree(cloud.points);
  PointCloud out = cloud;
  out.normals.resize(cloud.points.size());
  for (int i = 0; i < cloud.size(); ++i) {
    std::vector<int> nn = tree.knn(cloud.points[i], k);
    Vec3 mean = Vec3::Zero();
    for (int j : nn) mean += cloud.points[j];
    mean /= static_cast<double>(nn.size());
    Mat3 cov = Mat3::Zero();
    for (int j : nn) {
      Vec3 d = cloud.points[j] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    Vec3 n = eig.eigenvectors().col(0);  // smallest eigenvalue first
    double len = n.norm();
    out.normals[i] = len > 0 ? Vec3(n / len) : Vec3(0, 0, 1);
  }
  return out;
}

namespace {

Mat3 axis_rotation(int axis, double angle) {
  Vec3 u = Vec3::Zero();
  u[axis] = 1.0;
  return Eigen::AngleAxisd(angle, u).toRotationMatrix();
}

// uniform over SO(3) via uniform unit quaternion (Shoemake)
Mat3 random_so3(Rng& rng) {
  double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  double t1 = 2.0 * M_PI * u2, t2 = 2.0 * M_PI * u3;
  Eigen::Quaterniond q(a * std::sin(t1), a * std::cos(t1), b * std::sin(t2),
                       b * std::cos(t2));
  return q.toRotationMatrix();
}

}  // namespace

void AugmentPolicy::validate() const {
  if (up_axis < 0 || up_axis > 2) throw InvalidConfig("up_axis must be 0, 1, or 2");
  if (translation_range < 0.0) throw InvalidConfig("translation range must be non-negative");
  if (scale_min <= 0.0 || scale_max < scale_min)
    throw InvalidConfig("need 0 < scale_min <= scale_max");
}

SimilarityTransform sample_transform(const AugmentPolicy& policy, Rng& rng) {
  SimilarityTransform t;
  if (policy.rotation_mode == RotationMode::kUprightAxisOnly) {
    t.rotation = axis_rotation(policy.up_axis, rng.uniform(0.0, 2.0 * M_PI));
  } else if (policy.rotation_mode == RotationMode::kFullSO3) {
    t.rotation = random_so3(rng);
  }
  double r = policy.translation_range;
  for (int a = 0; a < 3; ++a) t.translation[a] = rng.uniform(-r, r);
  for (int a = 0; a < 3; ++a)
    t.scale[a] = rng.uniform(policy.scale_min, policy.scale_max);
  return t;
}

PointCloud apply_transform(const PointCloud& cloud,
                           const SimilarityTransform& t) {
  PointCloud out = cloud;
  for (auto& p : out.points)
    p = t.rotation * p.cwiseProduct(t.scale) + t.translation;
  // Anisotropic scale has no exact normal transport; the octree signal only
  // uses componentwise magnitudes, so rotating and renormalizing is enough.
  for (auto& n : out.normals) {
    Vec3 rn = t.rotation * n;
    double len = rn.norm();
    n = len > 0 ? Vec3(rn / len) : rn;
  }
  return out;
}

PointCloud scale_points(const PointCloud& cloud, double factor) {
  PointCloud out = cloud;
  for (auto& p : out.points) p *= factor;
  return out;
}

namespace {

double total_inertia(const std::vector<Vec3>& pts,
                     const std::vector<Vec3>& centers,
                     const std::vector<int>& assign) {
  double s = 0.0;
  for (size_t i = 0; i < pts.size(); ++i)
    s += (pts[i] - centers[assign[i]]).squaredNorm();
  return s;
}

}  // namespace

PointCloud kmeans_patches(const PointCloud& cloud, int K, uint64_t seed,
                          int max_iters, std::vector<double>* inertia_trace) {
  const int m = cloud.size();
  if (m < K) throw TooFewPoints("kmeans_patches: fewer points than patches");
  Rng rng(seed);

  // k-means++ seeding
  std::vector<Vec3> centers;
  centers.reserve(K);
  centers.push_back(cloud.points[rng.uniform_int(m)]);
  std::vector<double> d2(m);
  for (int c = 1; c < K; ++c) {
    double sum = 0.0;
    for (int i = 0; i < m; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& ctr : centers)
        best = std::min(best, (cloud.points[i] - ctr).squaredNorm());
      d2[i] = best;
      sum += best;
    }
    if (sum <= 0.0) {
      centers.push_back(cloud.points[rng.uniform_int(m)]);
      continue;
    }
    double r = rng.uniform() * sum;
    double acc = 0.0;
    int pick = m - 1;
    for (int i = 0; i < m; ++i) {
      acc += d2[i];
      if (acc >= r) {
        pick = i;
        break;
      }
    }
    centers.push_back(cloud.points[pick]);
  }

  std::vector<int> assign(m, 0);
  auto assign_all = [&]() {
    bool changed = false;
    for (int i = 0; i < m; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int best_c = 0;
      for (int c = 0; c < K; ++c) {
        double d = (cloud.points[i] - centers[c]).squaredNorm();
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      if (assign[i] != best_c) {
        assign[i] = best_c;
        changed = true;
      }
    }
    return changed;
  };

  assign_all();
  if (inertia_trace)
    inertia_trace->push_back(total_inertia(cloud.points, centers, assign));

  for (int iter = 0; iter < max_iters; ++iter) {
    // centroid update
    std::vector<Vec3> sums(K, Vec3::Zero());
    std::vector<int> counts(K, 0);
    for (int i = 0; i < m; ++i) {
      sums[assign[i]] += cloud.points[i];
      counts[assign[i]] += 1;
    }
    for (int c = 0; c < K; ++c)
      if (counts[c] > 0) centers[c] = sums[c] / counts[c];

    // re-seed empty clusters to the point farthest from its own center
    for (int c = 0; c < K; ++c) {
      if (counts[c] > 0) continue;
      double worst = -1.0;
      int worst_i = 0;
      for (int i = 0; i < m; ++i) {
        double d = (cloud.points[i] - centers[assign[i]]).squaredNorm();
        if (d > worst) {
          worst = d;
          worst_i = i;
        }
      }
      centers[c] = cloud.points[worst_i];
    }

    bool changed = assign_all();
    if (inertia_trace)
      inertia_trace->push_back(total_inertia(cloud.points, centers, assign));
    if (!changed) break;
  }

  // guarantee non-empty patches even if the loop hit max_iters mid-reseed
  std::vector<int> counts(K, 0);
  for (int i = 0; i < m; ++i) counts[assign[i]]++;
  for (int c = 0; c < K; ++c) {
    if (counts[c] > 0) continue;
    double worst = -1.0;
    int worst_i = 0;
    for (int i = 0; i < m; ++i) {
      if (counts[assign[i]] <= 1) continue;  // don't empty another cluster
      double d = (cloud.points[i] - centers[assign[i]]).squaredNorm();
      if (d > worst) {
        worst = d;
        worst_i = i;
      }
    }
    counts[assign[worst_i]]--;
    assign[worst_i] = c;
    counts[c] = 1;
  }

  PointCloud out = cloud;
  out.patch_ids = assign;
  return out;
}

}  // namespace midnet::geometry
