#include "midnet/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "midnet/config.hpp"
#include "midnet/errors.hpp"

namespace midnet::datagen {

using geometry::PointCloud;
using geometry::Vec3;

namespace {

constexpr double kPi = std::numbers::pi;

struct Sample {
  Vec3 p;
  Vec3 n;
};

// --- primitive samplers (body frame) ----------------------------------------

Sample sample_ellipsoid(const Vec3& radii, Rng& rng) {
  Vec3 u;
  do {
    u = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (u.norm() < 1e-9);
  u.normalize();
  Vec3 p = radii.cwiseProduct(u);
  Vec3 n = (u.array() / radii.array()).matrix().normalized();
  return {p, n};
}

Sample sample_box(const Vec3& half, Rng& rng) {
  const double ax = half.y() * half.z(), ay = half.x() * half.z(), az = half.x() * half.y();
  const double total = 2.0 * (ax + ay + az);
  double pick = rng.uniform() * total;
  int axis;
  if (pick < 2.0 * ax)
    axis = 0;
  else if (pick < 2.0 * (ax + ay))
    axis = 1;
  else
    axis = 2;
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  Vec3 p(rng.uniform(-half.x(), half.x()), rng.uniform(-half.y(), half.y()),
         rng.uniform(-half.z(), half.z()));
  p[axis] = side * half[axis];
  Vec3 n = Vec3::Zero();
  n[axis] = side;
  return {p, n};
}

// capped cylinder, axis +y, base at y = 0
Sample sample_cylinder(double radius, double height, Rng& rng) {
  const double lateral = 2.0 * kPi * radius * height;
  const double caps = 2.0 * kPi * radius * radius;
  if (rng.uniform() * (lateral + caps) < lateral) {
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const double y = rng.uniform(0.0, height);
    return {Vec3(radius * std::cos(theta), y, radius * std::sin(theta)),
            Vec3(std::cos(theta), 0.0, std::sin(theta))};
  }
  const double side = rng.uniform() < 0.5 ? 0.0 : height;
  const double r = radius * std::sqrt(rng.uniform());
  const double theta = rng.uniform(0.0, 2.0 * kPi);
  return {Vec3(r * std::cos(theta), side, r * std::sin(theta)),
          Vec3(0.0, side == 0.0 ? -1.0 : 1.0, 0.0)};
}

// cone with base disk at y = 0 (radius r) and apex at y = h
Sample sample_cone(double radius, double height, Rng& rng) {
  const double slant = std::sqrt(radius * radius + height * height);
  const double lateral = kPi * radius * slant;
  const double base = kPi * radius * radius;
  if (rng.uniform() * (lateral + base) < lateral) {
    const double s = radius * std::sqrt(std::max(rng.uniform(), 1e-12));  // radial distance
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const double y = height * (1.0 - s / radius);
    Vec3 n = Vec3(std::cos(theta) * height, radius, std::sin(theta) * height).normalized();
    return {Vec3(s * std::cos(theta), y, s * std::sin(theta)), n};
  }
  const double r = radius * std::sqrt(rng.uniform());
  const double theta = rng.uniform(0.0, 2.0 * kPi);
  return {Vec3(r * std::cos(theta), 0.0, r * std::sin(theta)), Vec3(0.0, -1.0, 0.0)};
}

// torus around the y axis; ring radius R, tube radius r
Sample sample_torus(double ring, double tube, Rng& rng) {
  double phi;
  // surface density along the tube angle is proportional to R + r*cos(phi)
  do {
    phi = rng.uniform(0.0, 2.0 * kPi);
  } while (rng.uniform() * (ring + tube) > ring + tube * std::cos(phi));
  const double theta = rng.uniform(0.0, 2.0 * kPi);
  const double w = ring + tube * std::cos(phi);
  Vec3 p(w * std::cos(theta), tube * std::sin(phi), w * std::sin(theta));
  Vec3 n(std::cos(phi) * std::cos(theta), std::sin(phi), std::cos(phi) * std::sin(theta));
  return {p, n};
}

PointCloud finish(std::vector<Sample> samples) {
  PointCloud c;
  c.points.reserve(samples.size());
  c.normals.reserve(samples.size());
  for (const auto& s : samples) {
    c.points.push_back(s.p);
    c.normals.push_back(s.n);
  }
  c.reset_point_ids();
  return c;
}

size_t expected_param_count(ShapeKind k) {
  switch (k) {
    case ShapeKind::kSphere:
    case ShapeKind::kBox: return 3;
    case ShapeKind::kCylinder:
    case ShapeKind::kCone:
    case ShapeKind::kTorus: return 2;
  }
  return 0;
}

std::vector<double> jitter_params(ShapeKind k, Rng& rng) {
  switch (k) {
    case ShapeKind::kSphere:
      return {rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0)};
    case ShapeKind::kBox:
      return {rng.uniform(0.35, 1.0), rng.uniform(0.35, 1.0), rng.uniform(0.35, 1.0)};
    case ShapeKind::kCylinder: return {rng.uniform(0.25, 0.6), rng.uniform(1.0, 2.0)};
    case ShapeKind::kCone: return {rng.uniform(0.4, 0.8), rng.uniform(1.0, 1.8)};
    case ShapeKind::kTorus: {
      const double ring = rng.uniform(0.7, 1.0);
      return {ring, rng.uniform(0.18, 0.35) * ring};
    }
  }
  return {};
}

PointCloud make_primitive(ShapeKind kind, const std::vector<double>& params, int points,
                          Rng& rng) {
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(points));
  switch (kind) {
    case ShapeKind::kSphere: {
      const Vec3 radii(params[0], params[1], params[2]);
      for (int i = 0; i < points; ++i) out.push_back(sample_ellipsoid(radii, rng));
      break;
    }
    case ShapeKind::kBox: {
      const Vec3 half(params[0], params[1], params[2]);
      for (int i = 0; i < points; ++i) out.push_back(sample_box(half, rng));
      break;
    }
    case ShapeKind::kCylinder:
      for (int i = 0; i < points; ++i) out.push_back(sample_cylinder(params[0], params[1], rng));
      break;
    case ShapeKind::kCone:
      for (int i = 0; i < points; ++i) out.push_back(sample_cone(params[0], params[1], rng));
      break;
    case ShapeKind::kTorus:
      for (int i = 0; i < points; ++i) out.push_back(sample_torus(params[0], params[1], rng));
      break;
  }
  return finish(std::move(out));
}

}  // namespace

ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "sphere") return ShapeKind::kSphere;
  if (s == "box") return ShapeKind::kBox;
  if (s == "cylinder") return ShapeKind::kCylinder;
  if (s == "cone") return ShapeKind::kCone;
  if (s == "torus") return ShapeKind::kTorus;
  throw InvalidSpec("unknown shape kind: " + s);
}

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kBox: return "box";
    case ShapeKind::kCylinder: return "cylinder";
    case ShapeKind::kCone: return "cone";
    case ShapeKind::kTorus: return "torus";
  }
  return "sphere";
}

CompositeKind composite_kind_from_string(const std::string& s) {
  if (s == "sphere_on_cylinder") return CompositeKind::kSphereOnCylinder;
  if (s == "box_on_cylinder") return CompositeKind::kBoxOnCylinder;
  throw InvalidSpec("unknown composite kind: " + s);
}

std::string to_string(CompositeKind k) {
  switch (k) {
    case CompositeKind::kSphereOnCylinder: return "sphere_on_cylinder";
    case CompositeKind::kBoxOnCylinder: return "box_on_cylinder";
  }
  return "sphere_on_cylinder";
}

bool is_composite_kind(const std::string& s) {
  return s == "sphere_on_cylinder" || s == "box_on_cylinder";
}

PointCloud make_shape(ShapeKind kind, int points, Rng& rng) {
  if (points < 1) throw EmptyInput("a shape needs at least one point");
  const std::vector<double> params = jitter_params(kind, rng);
  return make_primitive(kind, params, points, rng);
}

void ShapeSpec::validate() const {
  if (points < 64) throw InvalidSpec("a shape spec needs at least 64 points");
  if (is_composite_kind(kind)) {
    if (!params.empty()) throw InvalidSpec("composite shapes take no explicit parameters");
    return;
  }
  const ShapeKind k = shape_kind_from_string(kind);  // throws on unknown names
  if (params.empty()) return;
  if (params.size() != expected_param_count(k))
    throw InvalidSpec("wrong parameter count for " + kind);
  for (double v : params)
    if (!(v > 0.0)) throw InvalidSpec("shape parameters must be positive");
  if (k == ShapeKind::kTorus && params[1] >= params[0])
    throw InvalidSpec("torus tube radius must be smaller than the ring radius");
}

PointCloud make_shape(const ShapeSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  if (is_composite_kind(spec.kind))
    return make_composite(composite_kind_from_string(spec.kind), spec.points, rng);
  const ShapeKind k = shape_kind_from_string(spec.kind);
  const std::vector<double> params = spec.params.empty() ? jitter_params(k, rng) : spec.params;
  return make_primitive(k, params, spec.points, rng);
}

PointCloud make_composite(CompositeKind kind, int points, Rng& rng) {
  if (points < 2) throw EmptyInput("a composite needs at least two points");

  // Head sits above y = 0, stem hangs below, attached slightly off-axis so
  // the shape has no rotational symmetry.
  const double stem_r = rng.uniform(0.18, 0.28);
  const double stem_h = rng.uniform(0.9, 1.4);
  const double offset = rng.uniform(0.15, 0.3);

  std::function<Sample(Rng&)> head;
  std::function<bool(const Vec3&)> inside_head;
  if (kind == CompositeKind::kSphereOnCylinder) {
    const Vec3 radii(rng.uniform(0.55, 0.8), rng.uniform(0.45, 0.65), rng.uniform(0.55, 0.8));
    head = [radii](Rng& r) { return sample_ellipsoid(radii, r); };
    inside_head = [radii](const Vec3& p) {
      return (p.array() / radii.array()).matrix().squaredNorm() < 1.0 - 1e-9;
    };
  } else {
    const Vec3 half(rng.uniform(0.5, 0.8), rng.uniform(0.3, 0.5), rng.uniform(0.5, 0.8));
    head = [half](Rng& r) { return sample_box(half, r); };
    inside_head = [half](const Vec3& p) {
      return (p.array().abs() < half.array() - 1e-9).all();
    };
  }

  // stem in body frame: axis +y with base at y = 0, then shifted down + aside
  const Vec3 stem_shift(offset, -stem_h, 0.0);
  auto stem = [&](Rng& r) {
    Sample s = sample_cylinder(stem_r, stem_h, r);
    s.p += stem_shift;
    return s;
  };
  auto inside_stem = [&](const Vec3& p) {
    const Vec3 q = p - stem_shift;
    if (q.y() <= 1e-9 || q.y() >= stem_h - 1e-9) return false;
    return q.x() * q.x() + q.z() * q.z() < stem_r * stem_r - 1e-9;
  };

  // split points by rough surface area share, keeping both parts non-empty
  int head_points = std::max(1, std::min(points - 1, static_cast<int>(points * 0.62)));
  std::vector<Sample> out;
  std::vector<int> labels;
  out.reserve(static_cast<size_t>(points));
  labels.reserve(static_cast<size_t>(points));
  for (int i = 0; i < points; ++i) {
    const bool on_head = i < head_points;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      Sample s = on_head ? head(rng) : stem(rng);
      const bool rejected = on_head ? inside_stem(s.p) : inside_head(s.p);
      if (!rejected) {
        out.push_back(s);
        labels.push_back(on_head ? 0 : 1);
        break;
      }
    }
  }
  if (out.size() != static_cast<size_t>(points))
    throw DegenerateGeometry("composite sampler could not place all points on the union surface");

  PointCloud c = finish(std::move(out));
  c.part_labels = std::move(labels);
  return c;
}

void Dataset::validate() const {
  if (items.empty()) throw EmptyInput("dataset has no items");
  for (const auto& it : items) {
    if (it.class_id < 0 || it.class_id >= class_count())
      throw LabelRange("item class id outside class list");
    it.cloud.validate();
    if (part_count > 0) {
      if (!it.cloud.has_parts())
        throw LabelMismatch("segmentation dataset item lacks part labels");
      for (int l : it.cloud.part_labels)
        if (l < 0 || l >= part_count) throw LabelRange("part label outside range");
    }
  }
}

Dataset generate_classification(const std::vector<ShapeKind>& kinds, int per_class, int points,
                                std::uint64_t seed) {
  if (kinds.empty()) throw EmptyInput("no shape kinds given");
  if (per_class < 1) throw EmptyInput("per_class must be positive");
  Dataset d;
  for (ShapeKind k : kinds) d.class_names.push_back(to_string(k));
  Rng rng(seed);
  for (size_t c = 0; c < kinds.size(); ++c) {
    Rng class_rng = rng.fork(static_cast<std::uint64_t>(c));
    for (int i = 0; i < per_class; ++i) {
      DatasetItem item;
      item.seed = class_rng.next_u64();
      item.kind = to_string(kinds[c]);
      item.class_id = static_cast<int>(c);
      item.category = static_cast<int>(c);
      Rng item_rng(item.seed);
      item.cloud = make_shape(kinds[c], points, item_rng);
      d.items.push_back(std::move(item));
    }
  }
  d.validate();
  return d;
}

Dataset generate_segmentation(const std::vector<CompositeKind>& kinds, int per_class, int points,
                              std::uint64_t seed) {
  if (kinds.empty()) throw EmptyInput("no composite kinds given");
  if (per_class < 1) throw EmptyInput("per_class must be positive");
  Dataset d;
  d.part_count = 2;
  for (CompositeKind k : kinds) d.class_names.push_back(to_string(k));
  Rng rng(seed);
  for (size_t c = 0; c < kinds.size(); ++c) {
    Rng class_rng = rng.fork(static_cast<std::uint64_t>(c));
    for (int i = 0; i < per_class; ++i) {
      DatasetItem item;
      item.seed = class_rng.next_u64();
      item.kind = to_string(kinds[c]);
      item.class_id = static_cast<int>(c);
      item.category = static_cast<int>(c);
      Rng item_rng(item.seed);
      item.cloud = make_composite(kinds[c], points, item_rng);
      d.items.push_back(std::move(item));
    }
  }
  d.validate();
  return d;
}

void write_dataset(const Dataset& dataset, const std::string& dir) {
  dataset.validate();
  std::filesystem::create_directories(dir);
  std::string manifest = "path,class,seed,kind\n";
  for (size_t i = 0; i < dataset.items.size(); ++i) {
    const auto& it = dataset.items[i];
    char name[64];
    std::snprintf(name, sizeof(name), "shape_%04zu.xyz", i);
    geometry::save_pointcloud(it.cloud, dir + "/" + name);
    manifest += std::string(name) + "," + std::to_string(it.class_id) + "," +
                std::to_string(it.seed) + "," + it.kind + "\n";
  }
  config::write_text_file(dir + "/manifest.csv", manifest);
}

Dataset load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest: " + manifest_path);
  std::string line;
  if (!std::getline(in, line) || line != "path,class,seed,kind")
    throw ParseError("manifest " + manifest_path + " must start with `path,class,seed,kind`");

  const std::string dir = std::filesystem::path(manifest_path).parent_path().string();
  Dataset d;
  int max_class = -1;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 4)
      throw ParseError("manifest " + manifest_path + ":" + std::to_string(lineno) +
                       ": expected 4 fields");
    DatasetItem item;
    item.path = fields[0];
    try {
      item.class_id = std::stoi(fields[1]);
      item.seed = std::stoull(fields[2]);
    } catch (const std::exception&) {
      throw ParseError("manifest " + manifest_path + ":" + std::to_string(lineno) +
                       ": bad class or seed");
    }
    item.kind = fields[3];
    item.category = item.class_id;
    item.cloud = geometry::load_pointcloud(dir.empty() ? item.path : dir + "/" + item.path);
    max_class = std::max(max_class, item.class_id);
    d.items.push_back(std::move(item));
  }
  if (d.items.empty()) throw ParseError("manifest " + manifest_path + " lists no shapes");

  d.class_names.assign(static_cast<size_t>(max_class + 1), "");
  for (const auto& it : d.items)
    if (d.class_names[static_cast<size_t>(it.class_id)].empty())
      d.class_names[static_cast<size_t>(it.class_id)] = it.kind;
  for (size_t c = 0; c < d.class_names.size(); ++c)
    if (d.class_names[c].empty())
      throw ParseError("manifest " + manifest_path + ": no shapes for class " +
                       std::to_string(c));

  for (const auto& it : d.items)
    if (it.cloud.has_parts())
      for (int l : it.cloud.part_labels) d.part_count = std::max(d.part_count, l + 1);
  d.validate();
  return d;
}

}  // namespace midnet::datagen
