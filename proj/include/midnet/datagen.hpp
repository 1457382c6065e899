#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "midnet/geometry.hpp"
#include "midnet/rng.hpp"

// Synthetic surface samplers with analytic normals, plus dataset manifests.
// All generators are pure functions of their parameters and the RNG state.
// Clouds come out in the body frame of the generating surface (an exact unit
// sphere really has |p| = 1); consumers normalize when they need to.
namespace midnet::datagen {

enum class ShapeKind { kSphere, kBox, kCylinder, kCone, kTorus };

ShapeKind shape_kind_from_string(const std::string& s);
std::string to_string(ShapeKind k);

// Two-part shapes for segmentation: part 0 is the head, part 1 the stem.
enum class CompositeKind { kSphereOnCylinder, kBoxOnCylinder };

CompositeKind composite_kind_from_string(const std::string& s);
std::string to_string(CompositeKind k);

bool is_composite_kind(const std::string& s);

// One shape of the given kind with per-shape parameter jitter drawn from rng.
geometry::PointCloud make_shape(ShapeKind kind, int points, Rng& rng);

// Two-part composite with per-point part labels.
geometry::PointCloud make_composite(CompositeKind kind, int points, Rng& rng);

// Self-contained recipe for one shape: fully reproducible from its fields.
struct ShapeSpec {
  std::string kind = "sphere";  // primitive or composite name
  int points = 1024;
  std::uint64_t seed = 1;
  // Explicit size parameters; empty means jitter them from the seed.
  // sphere: 3 radii; box: 3 half-extents; cylinder/cone: radius, height;
  // torus: ring radius, tube radius. Composites are always jittered.
  std::vector<double> params;

  void validate() const;  // throws InvalidSpec
};

geometry::PointCloud make_shape(const ShapeSpec& spec);

struct DatasetItem {
  geometry::PointCloud cloud;
  int class_id = 0;        // classification target
  int category = 0;        // shape family, used to group segmentation metrics
  std::uint64_t seed = 0;  // regenerates the cloud
  std::string kind;
  std::string path;        // relative to the manifest once written
};

struct Dataset {
  std::vector<DatasetItem> items;
  std::vector<std::string> class_names;
  int part_count = 0;  // 0 = no segmentation labels

  int class_count() const { return static_cast<int>(class_names.size()); }
  void validate() const;
};

Dataset generate_classification(const std::vector<ShapeKind>& kinds, int per_class, int points,
                                std::uint64_t seed);
Dataset generate_segmentation(const std::vector<CompositeKind>& kinds, int per_class, int points,
                              std::uint64_t seed);

// Writes item clouds plus manifest.csv (`path,class,seed,kind`) into dir.
void write_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& manifest_path);

}  // namespace midnet::datagen
