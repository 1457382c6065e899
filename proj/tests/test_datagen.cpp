#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "midnet/config.hpp"
#include "midnet/datagen.hpp"

using namespace midnet;
using geometry::Vec3;
namespace fs = std::filesystem;

namespace {

geometry::PointCloud from_spec(const std::string& kind, std::vector<double> params, int points,
                               std::uint64_t seed) {
  datagen::ShapeSpec spec;
  spec.kind = kind;
  spec.params = std::move(params);
  spec.points = points;
  spec.seed = seed;
  return datagen::make_shape(spec);
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("unit sphere samples sit exactly on the surface") {
  geometry::PointCloud c = from_spec("sphere", {1.0, 1.0, 1.0}, 200, 5);
  REQUIRE(c.size() == 200);
  REQUIRE(c.has_normals());
  for (int i = 0; i < c.size(); ++i) {
    CHECK(std::abs(c.points[i].norm() - 1.0) < 1e-12);
    CHECK((c.normals[i] - c.points[i]).norm() < 1e-12);
  }
}

TEST_CASE("ellipsoid normals follow the gradient, not the radius") {
  geometry::PointCloud c = from_spec("sphere", {0.9, 0.5, 0.7}, 150, 6);
  const Vec3 radii(0.9, 0.5, 0.7);
  for (int i = 0; i < c.size(); ++i) {
    const Vec3& p = c.points[i];
    CHECK(std::abs((p.array() / radii.array()).matrix().norm() - 1.0) < 1e-12);
    // implicit surface f = sum (x_k/r_k)^2, normal parallel to grad f
    Vec3 grad = (p.array() / (radii.array() * radii.array())).matrix();
    CHECK((c.normals[i] - grad.normalized()).norm() < 1e-12);
  }
}

TEST_CASE("box samples lie on faces with matching axis normals") {
  const Vec3 half(0.8, 0.5, 0.6);
  geometry::PointCloud c = from_spec("box", {half.x(), half.y(), half.z()}, 300, 7);
  for (int i = 0; i < c.size(); ++i) {
    const Vec3& p = c.points[i];
    const Vec3& n = c.normals[i];
    int axis = -1;
    for (int k = 0; k < 3; ++k)
      if (n[k] != 0.0) {
        CHECK(axis == -1);  // exactly one nonzero component
        axis = k;
      }
    REQUIRE(axis >= 0);
    CHECK(std::abs(n[axis]) == 1.0);
    CHECK(p[axis] == n[axis] * half[axis]);  // exact: assigned, not computed
    for (int k = 0; k < 3; ++k)
      if (k != axis) CHECK(std::abs(p[k]) <= half[k]);
  }
}

TEST_CASE("cylinder samples split into lateral wall and caps") {
  const double r = 0.4, h = 1.3;
  geometry::PointCloud c = from_spec("cylinder", {r, h}, 400, 8);
  int lateral = 0, caps = 0;
  for (int i = 0; i < c.size(); ++i) {
    const Vec3& p = c.points[i];
    const Vec3& n = c.normals[i];
    const double rad2 = p.x() * p.x() + p.z() * p.z();
    if (n.y() == 0.0) {
      ++lateral;
      CHECK(std::abs(rad2 - r * r) < 1e-12);
      CHECK(p.y() >= 0.0);
      CHECK(p.y() <= h);
      CHECK((n - Vec3(p.x() / r, 0.0, p.z() / r)).norm() < 1e-12);
    } else {
      ++caps;
      CHECK(std::abs(n.y()) == 1.0);
      CHECK(p.y() == (n.y() > 0 ? h : 0.0));  // cap height assigned exactly
      CHECK(rad2 <= r * r + 1e-12);
    }
  }
  CHECK(lateral > 0);
  CHECK(caps > 0);
}

TEST_CASE("cone samples: slant surface orthogonal to its normal, base flat") {
  const double r = 0.6, h = 1.2;
  geometry::PointCloud c = from_spec("cone", {r, h}, 400, 9);
  const Vec3 apex(0.0, h, 0.0);
  int slant = 0, base = 0;
  for (int i = 0; i < c.size(); ++i) {
    const Vec3& p = c.points[i];
    const Vec3& n = c.normals[i];
    CHECK(std::abs(n.norm() - 1.0) < 1e-12);
    if (n.y() == -1.0) {
      ++base;
      CHECK(p.y() == 0.0);
      CHECK(p.x() * p.x() + p.z() * p.z() <= r * r + 1e-12);
    } else {
      ++slant;
      CHECK(p.y() >= 0.0);
      CHECK(p.y() <= h);
      CHECK(std::abs(n.dot(p - apex)) < 1e-12);
      CHECK(n.y() > 0.0);  // outward on a cone opening downward
    }
  }
  CHECK(slant > 0);
  CHECK(base > 0);
}

TEST_CASE("torus samples keep constant tube distance") {
  const double ring = 0.8, tube = 0.25;
  geometry::PointCloud c = from_spec("torus", {ring, tube}, 300, 10);
  for (int i = 0; i < c.size(); ++i) {
    const Vec3& p = c.points[i];
    const double w = std::sqrt(p.x() * p.x() + p.z() * p.z());
    const double d = std::sqrt((w - ring) * (w - ring) + p.y() * p.y());
    CHECK(std::abs(d - tube) < 1e-12);
    // normal points from the tube center through the sample
    Vec3 center(ring * p.x() / w, 0.0, ring * p.z() / w);
    CHECK((c.normals[i] - (p - center) / tube).norm() < 1e-9);
  }
}

TEST_CASE("composites carry a two-part label partition") {
  datagen::ShapeSpec spec;
  spec.kind = "sphere_on_cylinder";
  spec.points = 200;
  spec.seed = 3;
  geometry::PointCloud c = datagen::make_shape(spec);
  REQUIRE(c.size() == 200);
  REQUIRE(c.has_parts());
  REQUIRE(c.has_normals());
  CHECK(!c.has_patches());
  CHECK(std::is_sorted(c.part_labels.begin(), c.part_labels.end()));
  CHECK(std::count(c.part_labels.begin(), c.part_labels.end(), 0) > 0);
  CHECK(std::count(c.part_labels.begin(), c.part_labels.end(), 1) > 0);
  CHECK(std::count_if(c.part_labels.begin(), c.part_labels.end(),
                      [](int l) { return l != 0 && l != 1; }) == 0);
  CHECK_NOTHROW(c.validate());

  datagen::ShapeSpec box_spec = spec;
  box_spec.kind = "box_on_cylinder";
  geometry::PointCloud b = datagen::make_shape(box_spec);
  CHECK(b.has_parts());
}

TEST_CASE("shape generation is bitwise deterministic in the seed") {
  datagen::ShapeSpec spec;
  spec.kind = "torus";
  spec.points = 128;
  spec.seed = 42;
  geometry::PointCloud a = datagen::make_shape(spec);
  geometry::PointCloud b = datagen::make_shape(spec);
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) {
    CHECK(a.points[i] == b.points[i]);
    CHECK(a.normals[i] == b.normals[i]);
  }
  spec.seed = 43;
  geometry::PointCloud other = datagen::make_shape(spec);
  bool same = true;
  for (int i = 0; i < a.size() && same; ++i) same = a.points[i] == other.points[i];
  CHECK(!same);
}

TEST_CASE("shape specs reject malformed parameters") {
  datagen::ShapeSpec spec;
  spec.kind = "sphere";
  spec.points = 32;
  CHECK_THROWS_AS(spec.validate(), InvalidSpec);
  spec.points = 128;
  CHECK_NOTHROW(spec.validate());
  spec.kind = "pyramid";
  CHECK_THROWS_AS(spec.validate(), InvalidSpec);
  spec.kind = "sphere";
  spec.params = {1.0, 1.0};
  CHECK_THROWS_AS(spec.validate(), InvalidSpec);
  spec.params = {1.0, -1.0, 1.0};
  CHECK_THROWS_AS(spec.validate(), InvalidSpec);
  spec.kind = "torus";
  spec.params = {0.5, 0.5};
  CHECK_THROWS_AS(spec.validate(), InvalidSpec);
  spec.params = {0.5, 0.2};
  CHECK_NOTHROW(spec.validate());
  spec.kind = "sphere_on_cylinder";
  spec.params = {1.0};
  CHECK_THROWS_AS(spec.validate(), InvalidSpec);
  spec.params.clear();
  CHECK_NOTHROW(spec.validate());

  Rng rng(1);
  CHECK_THROWS_AS(datagen::make_shape(datagen::ShapeKind::kBox, 0, rng), EmptyInput);
  CHECK_THROWS_AS(datagen::make_composite(datagen::CompositeKind::kSphereOnCylinder, 1, rng),
                  EmptyInput);
}

TEST_CASE("generated datasets are labeled and reproducible") {
  using datagen::ShapeKind;
  datagen::Dataset d = datagen::generate_classification(
      {ShapeKind::kSphere, ShapeKind::kBox, ShapeKind::kTorus}, 3, 80, 17);
  REQUIRE(d.items.size() == 9);
  CHECK(d.class_names == std::vector<std::string>{"sphere", "box", "torus"});
  CHECK(d.part_count == 0);
  for (size_t i = 0; i < d.items.size(); ++i) {
    CHECK(d.items[i].class_id == static_cast<int>(i / 3));
    CHECK(d.items[i].kind == d.class_names[static_cast<size_t>(d.items[i].class_id)]);
    CHECK(d.items[i].cloud.size() == 80);
  }

  datagen::Dataset again = datagen::generate_classification(
      {ShapeKind::kSphere, ShapeKind::kBox, ShapeKind::kTorus}, 3, 80, 17);
  for (size_t i = 0; i < d.items.size(); ++i) {
    CHECK(d.items[i].seed == again.items[i].seed);
    CHECK(d.items[i].cloud.points == again.items[i].cloud.points);
  }

  CHECK_THROWS_AS(datagen::generate_classification({}, 3, 80, 1), EmptyInput);
  CHECK_THROWS_AS(datagen::generate_classification({ShapeKind::kBox}, 0, 80, 1), EmptyInput);

  datagen::Dataset seg = datagen::generate_segmentation(
      {datagen::CompositeKind::kSphereOnCylinder, datagen::CompositeKind::kBoxOnCylinder}, 2, 90,
      23);
  CHECK(seg.part_count == 2);
  REQUIRE(seg.items.size() == 4);
  for (const auto& item : seg.items) CHECK(item.cloud.has_parts());
}

TEST_CASE("datasets round trip through manifest and shape files") {
  fs::path dir = fresh_dir("midnet_test_dataset_rt");
  datagen::Dataset d = datagen::generate_classification(
      {datagen::ShapeKind::kSphere, datagen::ShapeKind::kCylinder}, 2, 80, 29);
  datagen::write_dataset(d, dir.string());

  std::string manifest = config::read_text_file((dir / "manifest.csv").string());
  CHECK(manifest.rfind("path,class,seed,kind\n", 0) == 0);
  CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 5);

  datagen::Dataset loaded = datagen::load_dataset((dir / "manifest.csv").string());
  REQUIRE(loaded.items.size() == d.items.size());
  CHECK(loaded.class_names == d.class_names);
  CHECK(loaded.part_count == 0);
  for (size_t i = 0; i < d.items.size(); ++i) {
    CHECK(loaded.items[i].class_id == d.items[i].class_id);
    CHECK(loaded.items[i].seed == d.items[i].seed);
    CHECK(loaded.items[i].kind == d.items[i].kind);
    CHECK(loaded.items[i].cloud.points == d.items[i].cloud.points);
    CHECK(loaded.items[i].cloud.normals == d.items[i].cloud.normals);
  }
  fs::remove_all(dir);
}

TEST_CASE("segmentation labels survive the file round trip") {
  fs::path dir = fresh_dir("midnet_test_dataset_seg_rt");
  datagen::Dataset d = datagen::generate_segmentation(
      {datagen::CompositeKind::kSphereOnCylinder}, 2, 100, 31);
  datagen::write_dataset(d, dir.string());
  datagen::Dataset loaded = datagen::load_dataset((dir / "manifest.csv").string());
  CHECK(loaded.part_count == 2);
  REQUIRE(loaded.items.size() == 2);
  for (size_t i = 0; i < loaded.items.size(); ++i) {
    CHECK(loaded.items[i].cloud.part_labels == d.items[i].cloud.part_labels);
    CHECK(!loaded.items[i].cloud.has_patches());
  }
  fs::remove_all(dir);
}

TEST_CASE("manifest parsing reports precise failures") {
  fs::path dir = fresh_dir("midnet_test_manifest_err");
  auto write_manifest = [&](const std::string& text) {
    config::write_text_file((dir / "manifest.csv").string(), text);
    return (dir / "manifest.csv").string();
  };

  CHECK_THROWS_AS(datagen::load_dataset((dir / "nope.csv").string()), IoError);
  CHECK_THROWS_AS(datagen::load_dataset(write_manifest("path,class\n")), ParseError);
  CHECK_THROWS_AS(datagen::load_dataset(write_manifest("path,class,seed,kind\n")), ParseError);
  CHECK_THROWS_AS(datagen::load_dataset(write_manifest("path,class,seed,kind\na.xyz,0,1\n")),
                  ParseError);

  try {
    datagen::load_dataset(write_manifest("path,class,seed,kind\na.xyz,zero,1,sphere\n"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  fs::remove_all(dir);
}
