#include "midnet/registration.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "midnet/errors.hpp"
#include "midnet/kdtree.hpp"
#include "midnet/rng.hpp"

namespace midnet::registration {

using Eigen::Matrix3d;
using Eigen::Vector3d;
using geometry::PointCloud;

PointCloud RigidTransform::apply(const PointCloud& cloud) const {
  PointCloud out = cloud;
  for (auto& p : out.points) p = rotation * p + translation;
  for (auto& n : out.normals) n = (rotation * n).normalized();
  return out;
}

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
  RigidTransform out;
  out.rotation = rotation * inner.rotation;
  out.translation = rotation * inner.translation + translation;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation = rotation.transpose();
  out.translation = -(rotation.transpose() * translation);
  return out;
}

std::vector<std::pair<int, int>> match_features(const MatF& src, const MatF& tgt) {
  if (src.rows() == 0 || tgt.rows() == 0) throw EmptyInput("match_features: empty descriptor set");
  if (src.cols() != tgt.cols())
    throw ShapeMismatch("match_features: descriptor widths differ");

  const MatF sim = src * tgt.transpose();

  auto argmax_row = [](const MatF& m, Eigen::Index r) {
    int best = 0;
    float best_v = m(r, 0);
    for (Eigen::Index c = 1; c < m.cols(); ++c)
      if (m(r, c) > best_v) {
        best_v = m(r, c);
        best = static_cast<int>(c);
      }
    return best;
  };

  std::vector<int> best_tgt(static_cast<size_t>(sim.rows()));
  for (Eigen::Index r = 0; r < sim.rows(); ++r) best_tgt[static_cast<size_t>(r)] = argmax_row(sim, r);

  std::vector<int> best_src(static_cast<size_t>(sim.cols()));
  for (Eigen::Index c = 0; c < sim.cols(); ++c) {
    int best = 0;
    float best_v = sim(0, c);
    for (Eigen::Index r = 1; r < sim.rows(); ++r)
      if (sim(r, c) > best_v) {
        best_v = sim(r, c);
        best = static_cast<int>(r);
      }
    best_src[static_cast<size_t>(c)] = best;
  }

  std::vector<std::pair<int, int>> matches;
  for (int i = 0; i < static_cast<int>(best_tgt.size()); ++i) {
    const int j = best_tgt[static_cast<size_t>(i)];
    if (best_src[static_cast<size_t>(j)] == i) matches.emplace_back(i, j);
  }
  return matches;
}

RigidTransform kabsch(const std::vector<Vector3d>& src, const std::vector<Vector3d>& tgt) {
  if (src.size() != tgt.size()) throw ShapeMismatch("kabsch: point counts differ");
  if (src.size() < 3) throw TooFewCorrespondences("kabsch: need at least 3 pairs");

  Vector3d cs = Vector3d::Zero(), ct = Vector3d::Zero();
  for (const auto& p : src) cs += p;
  for (const auto& p : tgt) ct += p;
  cs /= static_cast<double>(src.size());
  ct /= static_cast<double>(tgt.size());

  Matrix3d h = Matrix3d::Zero();
  for (size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (tgt[i] - ct).transpose();

  Eigen::JacobiSVD<Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Matrix3d d = Matrix3d::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  RigidTransform out;
  out.rotation = v * d * u.transpose();
  out.translation = ct - out.rotation * cs;
  return out;
}

namespace {

double triangle_area_sq(const Vector3d& a, const Vector3d& b, const Vector3d& c) {
  return (b - a).cross(c - a).squaredNorm();
}

}  // namespace

RigidTransform estimate_rigid(const PointCloud& src, const PointCloud& tgt,
                              const std::vector<std::pair<int, int>>& matches,
                              const RansacParams& params) {
  if (matches.size() < 3) throw TooFewCorrespondences("estimate_rigid: need at least 3 matches");
  for (const auto& [i, j] : matches)
    if (i < 0 || i >= src.size() || j < 0 || j >= tgt.size())
      throw IndexOutOfRange("estimate_rigid: match index outside cloud");
  if (params.iterations < 1) throw InvalidConfig("estimate_rigid: iterations must be positive");
  if (params.inlier_threshold <= 0.0)
    throw InvalidConfig("estimate_rigid: inlier_threshold must be positive");

  const int n = static_cast<int>(matches.size());
  const double thr2 = params.inlier_threshold * params.inlier_threshold;
  Rng rng(params.seed);

  int best_count = -1;
  RigidTransform best;
  for (int it = 0; it < params.iterations; ++it) {
    int a = rng.uniform_int(n), b = a, c = a;
    while (b == a) b = rng.uniform_int(n);
    while (c == a || c == b) c = rng.uniform_int(n);

    std::vector<Vector3d> ps = {src.points[static_cast<size_t>(matches[static_cast<size_t>(a)].first)],
                                src.points[static_cast<size_t>(matches[static_cast<size_t>(b)].first)],
                                src.points[static_cast<size_t>(matches[static_cast<size_t>(c)].first)]};
    std::vector<Vector3d> pt = {tgt.points[static_cast<size_t>(matches[static_cast<size_t>(a)].second)],
                                tgt.points[static_cast<size_t>(matches[static_cast<size_t>(b)].second)],
                                tgt.points[static_cast<size_t>(matches[static_cast<size_t>(c)].second)]};
    if (triangle_area_sq(ps[0], ps[1], ps[2]) < 1e-18) continue;

    RigidTransform cand = kabsch(ps, pt);
    int count = 0;
    for (const auto& [i, j] : matches) {
      const double d2 = (cand.apply(src.points[static_cast<size_t>(i)]) -
                         tgt.points[static_cast<size_t>(j)])
                            .squaredNorm();
      if (d2 < thr2) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best = cand;
    }
  }

  if (best_count < 3) {
    // Nothing consistent: least-squares over everything is the best we can do.
    std::vector<Vector3d> ps, pt;
    for (const auto& [i, j] : matches) {
      ps.push_back(src.points[static_cast<size_t>(i)]);
      pt.push_back(tgt.points[static_cast<size_t>(j)]);
    }
    return kabsch(ps, pt);
  }

  std::vector<Vector3d> ps, pt;
  for (const auto& [i, j] : matches) {
    const double d2 =
        (best.apply(src.points[static_cast<size_t>(i)]) - tgt.points[static_cast<size_t>(j)])
            .squaredNorm();
    if (d2 < thr2) {
      ps.push_back(src.points[static_cast<size_t>(i)]);
      pt.push_back(tgt.points[static_cast<size_t>(j)]);
    }
  }
  return ps.size() >= 3 ? kabsch(ps, pt) : best;
}

IcpResult icp_refine(const PointCloud& src, const PointCloud& tgt, const RigidTransform& init,
                     int max_iterations, double tol) {
  if (src.size() == 0 || tgt.size() == 0) throw EmptyCloud("icp_refine: empty cloud");
  if (max_iterations < 1) throw InvalidConfig("icp_refine: max_iterations must be positive");

  KdTree3 tree(tgt.points);
  IcpResult res;
  res.transform = init;
  double prev = std::numeric_limits<double>::infinity();

  for (int k = 0; k < max_iterations; ++k) {
    std::vector<Vector3d> nn(src.points.size());
    double sum_d2 = 0.0;
    for (size_t i = 0; i < src.points.size(); ++i) {
      const Vector3d q = res.transform.apply(src.points[i]);
      auto [idx, d2] = tree.nearest(q);
      nn[i] = tgt.points[static_cast<size_t>(idx)];
      sum_d2 += d2;
    }
    const double rmse = std::sqrt(sum_d2 / static_cast<double>(src.points.size()));
    res.rmse.push_back(rmse);
    if (prev - rmse < tol) break;
    prev = rmse;
    res.transform = kabsch(src.points, nn);
  }
  res.iterations = static_cast<int>(res.rmse.size());
  return res;
}

double hausdorff(const PointCloud& a, const PointCloud& b) {
  if (a.size() == 0 || b.size() == 0) throw EmptyCloud("hausdorff: empty cloud");
  KdTree3 ta(a.points), tb(b.points);
  double worst = 0.0;
  for (const auto& p : a.points) worst = std::max(worst, tb.nearest(p).second);
  for (const auto& p : b.points) worst = std::max(worst, ta.nearest(p).second);
  return std::sqrt(worst);
}

RegistrationResult register_clouds(const PointCloud& src, const PointCloud& tgt,
                                   pipeline::FeatureExtractor& extractor,
                                   const RansacParams& params) {
  RegistrationResult res;

  const MatF fs = extractor.point_features(extractor.preprocess(src));
  const MatF ft = extractor.point_features(extractor.preprocess(tgt));
  std::vector<std::pair<int, int>> matches = match_features(fs, ft);
  res.match_count = static_cast<int>(matches.size());

  if (matches.size() >= 3) {
    res.initial = estimate_rigid(src, tgt, matches, params);
    const double thr2 = params.inlier_threshold * params.inlier_threshold;
    for (const auto& [i, j] : matches) {
      const double d2 = (res.initial.apply(src.points[static_cast<size_t>(i)]) -
                         tgt.points[static_cast<size_t>(j)])
                            .squaredNorm();
      if (d2 < thr2) ++res.inlier_count;
    }
  }

  IcpResult icp = icp_refine(src, tgt, res.initial);
  res.refined = icp.transform;
  res.icp_rmse = std::move(icp.rmse);
  res.hausdorff_after = hausdorff(res.refined.apply(src), tgt);
  return res;
}

}  // namespace midnet::registration
