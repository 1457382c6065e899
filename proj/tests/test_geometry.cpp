#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include <Eigen/Dense>

#include "doctest.h"
#include "midnet/config.hpp"
#include "midnet/geometry.hpp"
#include "midnet/kdtree.hpp"
#include "midnet/rng.hpp"

using namespace midnet;
using geometry::PointCloud;
using geometry::Vec3;

namespace {

PointCloud random_cloud(int n, uint64_t seed, double radius = 1.0) {
  Rng rng(seed);
  PointCloud c;
  for (int i = 0; i < n; ++i) {
    Vec3 p(rng.normal(), rng.normal(), rng.normal());
    if (p.norm() < 1e-9) p = Vec3(1, 0, 0);
    c.points.push_back(p / p.norm() * radius * std::cbrt(rng.uniform()));
  }
  c.reset_point_ids();
  return c;
}

}  // namespace

TEST_CASE("rng is deterministic and checkpointable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  for (int i = 0; i < 1000; ++i) {
    double u = a.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }

  std::string state = a.save_state();
  std::vector<uint64_t> tail;
  for (int i = 0; i < 16; ++i) tail.push_back(a.next_u64());
  Rng c;
  c.load_state(state);
  for (uint64_t v : tail) CHECK(c.next_u64() == v);

  Rng parent(7);
  Rng f0 = parent.fork(0);
  Rng parent2(7);
  Rng f1 = parent2.fork(1);
  CHECK(f0.next_u64() != f1.next_u64());
}

TEST_CASE("normalize_unit_sphere centers and scales") {
  PointCloud c = random_cloud(200, 3, 2.5);
  for (auto& p : c.points) p += Vec3(0.3, -0.8, 1.1);
  PointCloud n = geometry::normalize_unit_sphere(c);

  Vec3 centroid = Vec3::Zero();
  for (const auto& p : n.points) centroid += p;
  centroid /= n.size();
  CHECK(centroid.norm() < 1e-12);

  double max_norm = 0;
  for (const auto& p : n.points) max_norm = std::max(max_norm, p.norm());
  CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(geometry::normalize_unit_sphere(PointCloud{}), EmptyCloud);
}

TEST_CASE("pca normals recover a plane") {
  Rng rng(5);
  PointCloud c;
  for (int i = 0; i < 100; ++i)
    c.points.push_back(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0));
  c.reset_point_ids();
  PointCloud n = geometry::estimate_normals_pca(c, 12);
  REQUIRE(n.has_normals());
  for (const auto& nv : n.normals) {
    CHECK(std::abs(nv.z()) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(nv.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(geometry::estimate_normals_pca(c, 101), TooFewPoints);
  CHECK_THROWS_AS(geometry::estimate_normals_pca(c, 2), TooFewPoints);
}

TEST_CASE("sampled transforms respect the policy") {
  geometry::AugmentPolicy policy;
  policy.rotation_mode = geometry::RotationMode::kUprightAxisOnly;
  policy.translation_range = 0.25;
  policy.scale_min = 0.75;
  policy.scale_max = 1.25;

  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    geometry::SimilarityTransform t = geometry::sample_transform(policy, rng);
    t.validate();
    // upright mode keeps the y axis fixed
    CHECK((t.rotation * Vec3::UnitY() - Vec3::UnitY()).norm() < 1e-12);
    for (int a = 0; a < 3; ++a) {
      CHECK(std::abs(t.translation[a]) <= 0.25 + 1e-12);
      CHECK(t.scale[a] >= 0.75 - 1e-12);
      CHECK(t.scale[a] <= 1.25 + 1e-12);
    }
  }

  policy.rotation_mode = geometry::RotationMode::kFullSO3;
  for (int i = 0; i < 50; ++i) {
    geometry::SimilarityTransform t = geometry::sample_transform(policy, rng);
    t.validate();
    CHECK(std::abs(t.rotation.determinant() - 1.0) < 1e-12);
  }
}

TEST_CASE("headroom bounds every augmented unit-sphere cloud") {
  geometry::AugmentPolicy policy;
  policy.rotation_mode = geometry::RotationMode::kFullSO3;
  CHECK(policy.headroom() ==
        doctest::Approx(policy.scale_max + policy.translation_range * std::sqrt(3.0))
            .epsilon(1e-12));

  PointCloud unit = geometry::normalize_unit_sphere(random_cloud(150, 17));
  Rng rng(23);
  for (int i = 0; i < 100; ++i) {
    geometry::SimilarityTransform t = geometry::sample_transform(policy, rng);
    PointCloud moved = geometry::scale_points(geometry::apply_transform(unit, t),
                                              1.0 / policy.headroom());
    for (const auto& p : moved.points) CHECK(p.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
  }
}

TEST_CASE("apply_transform composes rotation, scale, translation") {
  PointCloud c;
  c.points = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
  c.normals = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
  c.reset_point_ids();

  geometry::SimilarityTransform t;
  // rotation by 0.3 rad about z
  const double cs = 0.955336489125606, sn = 0.29552020666133955;
  t.rotation << cs, -sn, 0, sn, cs, 0, 0, 0, 1;
  t.scale = Vec3(2, 3, 1);
  t.translation = Vec3(0.1, -0.2, 0.5);

  PointCloud out = geometry::apply_transform(c, t);
  Vec3 expected = t.rotation * Vec3(2, 0, 0) + t.translation;
  CHECK((out.points[0] - expected).norm() < 1e-12);
  // normals rotate but ignore scale and translation, staying unit
  CHECK((out.normals[0] - t.rotation * Vec3(1, 0, 0)).norm() < 1e-12);
  CHECK(out.normals[0].norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("kmeans patches cover every id and are deterministic") {
  PointCloud c = random_cloud(300, 31);
  const int K = 24;
  std::vector<double> inertia;
  PointCloud a = geometry::kmeans_patches(c, K, 9, 100, &inertia);
  REQUIRE(a.has_patches());
  REQUIRE(static_cast<int>(a.patch_ids.size()) == a.size());

  std::set<int> seen(a.patch_ids.begin(), a.patch_ids.end());
  CHECK(static_cast<int>(seen.size()) == K);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == K - 1);

  for (size_t i = 1; i < inertia.size(); ++i) CHECK(inertia[i] <= inertia[i - 1] + 1e-9);

  PointCloud b = geometry::kmeans_patches(c, K, 9);
  CHECK(a.patch_ids == b.patch_ids);
}

TEST_CASE("pointcloud validation catches inconsistencies") {
  PointCloud c;
  c.points = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  c.reset_point_ids();
  CHECK_NOTHROW(c.validate());

  PointCloud bad_normals = c;
  bad_normals.normals = {Vec3(1, 0, 0)};
  CHECK_THROWS(bad_normals.validate());

  PointCloud non_unit = c;
  non_unit.normals = {Vec3(1, 0, 0), Vec3(0.5, 0, 0)};
  CHECK_THROWS(non_unit.validate());

  PointCloud bad_ids = c;
  bad_ids.point_ids = {1, 0};
  CHECK_THROWS(bad_ids.validate());
}

TEST_CASE("pointcloud files round trip exactly") {
  PointCloud c = random_cloud(64, 41);
  c = geometry::estimate_normals_pca(c, 8);
  c = geometry::kmeans_patches(c, 5, 3);
  c.part_labels.assign(static_cast<size_t>(c.size()), 0);
  for (int i = 0; i < c.size(); i += 2) c.part_labels[static_cast<size_t>(i)] = 1;

  std::filesystem::path dir = std::filesystem::temp_directory_path() / "midnet_geo_test";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "cloud.xyz").string();
  geometry::save_pointcloud(c, path);
  PointCloud back = geometry::load_pointcloud(path);

  REQUIRE(back.size() == c.size());
  for (int i = 0; i < c.size(); ++i) {
    CHECK(back.points[static_cast<size_t>(i)] == c.points[static_cast<size_t>(i)]);
    CHECK(back.normals[static_cast<size_t>(i)] == c.normals[static_cast<size_t>(i)]);
  }
  CHECK(back.patch_ids == c.patch_ids);
  CHECK(back.part_labels == c.part_labels);

  // bare coordinates load without normals
  std::string bare = (dir / "bare.xyz").string();
  config::write_text_file(bare, "# comment line\n0 0 0\n1 0 0\n0.5 0.25 -0.125\n");
  PointCloud b = geometry::load_pointcloud(bare);
  CHECK(b.size() == 3);
  CHECK(!b.has_normals());
  CHECK(b.points[2] == Vec3(0.5, 0.25, -0.125));

  CHECK_THROWS_AS(geometry::load_pointcloud((dir / "missing.xyz").string()), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("kdtree agrees with brute force") {
  Rng rng(53);
  std::vector<Vec3> pts;
  for (int i = 0; i < 200; ++i) pts.emplace_back(rng.normal(), rng.normal(), rng.normal());
  KdTree3 tree(pts);
  CHECK(tree.size() == 200);

  for (int q = 0; q < 50; ++q) {
    Vec3 query(rng.normal(), rng.normal(), rng.normal());
    int best = -1;
    double best_d2 = 1e300;
    for (int i = 0; i < 200; ++i) {
      double d2 = (pts[static_cast<size_t>(i)] - query).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    auto [idx, d2] = tree.nearest(query);
    CHECK(idx == best);
    CHECK(d2 == doctest::Approx(best_d2).epsilon(1e-12));

    std::vector<std::pair<double, int>> all;
    for (int i = 0; i < 200; ++i)
      all.emplace_back((pts[static_cast<size_t>(i)] - query).squaredNorm(), i);
    std::sort(all.begin(), all.end());
    std::vector<int> got = tree.knn(query, 5);
    REQUIRE(got.size() == 5);
    for (int k = 0; k < 5; ++k) CHECK(got[static_cast<size_t>(k)] == all[static_cast<size_t>(k)].second);
  }
}

TEST_CASE("keyvalues parse, track consumption, and canonicalize") {
  config::KeyValues kv = config::KeyValues::parse_string(
      "# a comment\n"
      "epochs = 40\n"
      "lr = 0.03\n"
      "name = probe # trailing comment\n"
      "flag = true\n"
      "milestones = 10,20,30\n");
  CHECK(kv.get_int("epochs", 0) == 40);
  CHECK(kv.get_double("lr", 0) == 0.03);
  CHECK(kv.get_string("name") == "probe");
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.get_int_list("milestones", {}) == std::vector<int>{10, 20, 30});
  CHECK_NOTHROW(kv.check_all_consumed());

  config::KeyValues extra = config::KeyValues::parse_string("mystery = 1\n");
  try {
    extra.check_all_consumed();
    FAIL("expected InvalidConfig");
  } catch (const InvalidConfig& e) {
    CHECK(std::string(e.what()).find("mystery") != std::string::npos);
  }

  config::KeyValues c1 = config::KeyValues::parse_string("b = 2\na = 1\n");
  config::KeyValues c2 = config::KeyValues::parse_string("a = 1\nb = 2\n");
  CHECK(c1.canonical() == c2.canonical());
  CHECK(c1.hash() == c2.hash());

  CHECK_THROWS_AS(config::KeyValues::parse_string("not a pair\n"), ParseError);
  CHECK_THROWS_AS(kv.get_string("absent"), InvalidConfig);
}

TEST_CASE("format_double round trips exactly") {
  for (double v : {0.1, 1.0 / 3.0, 3.0, -2.5e-11, 1e300, 6.02e23, 0.0,
                   0.30000000000000004, 123456789.123456789}) {
    std::string s = config::format_double(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(config::format_double(0.5) == "0.5");
  CHECK(config::format_double(2.0) == "2");
}

TEST_CASE("atomic writes land complete") {
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "midnet_atomic_test";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "out.txt").string();
  config::write_text_file_atomic(path, "payload\n");
  CHECK(config::read_text_file(path) == "payload\n");
  config::write_text_file_atomic(path, "replaced\n");
  CHECK(config::read_text_file(path) == "replaced\n");
  std::filesystem::remove_all(dir);
}
