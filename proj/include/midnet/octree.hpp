#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "midnet/geometry.hpp"

namespace midnet::octree {

using geometry::PointCloud;
using geometry::Vec3;

// Sparse octree over the fixed cube [-1,1]^3. Level l is a (2^l)^3 grid of
// which only cells containing points (or their ancestors) are stored. Keys
// are Morton codes with x in the lowest interleaved bit, so
// key(child) = key(parent)*8 + child_index with
// child_index = (z >= cz)<<2 | (y >= cy)<<1 | (x >= cx).
struct Octree {
  static constexpr int32_t kEmpty = -1;

  struct Level {
    std::vector<uint64_t> keys;  // strictly increasing
    std::vector<int32_t> parent;
    std::vector<std::array<int32_t, 8>> children;
    // 27 slots ordered by (dz,dy,dx) in {-1,0,1}^3 lexicographically;
    // slot 13 is the octant itself
    std::vector<std::array<int32_t, 27>> neighbors;

    int count() const { return static_cast<int>(keys.size()); }
  };

  int depth = 0;
  std::vector<Level> levels;          // size depth+1
  std::vector<int32_t> point_to_octant;  // per point, index into finest level
  Eigen::MatrixX4d input_signal;      // finest-level octants x 4, may be empty

  int count(int level) const { return levels[level].count(); }
  int leaf_count() const { return levels[depth].count(); }

  // index of key at level, or kEmpty
  int find(int level, uint64_t key) const;

  double edge_length(int level) const { return 2.0 / double(1u << level); }
  Vec3 cell_center(int level, uint64_t key) const;

  // throws InvalidIndex when octant_index is out of range
  const std::array<int32_t, 27>& neighbors_of(int level,
                                              int octant_index) const;

  void check_invariants() const;  // throws Error on violation
};

// decode Morton key into (x, y, z) grid coordinates
std::array<uint32_t, 3> key_to_coords(uint64_t key, int level);
uint64_t coords_to_key(uint32_t x, uint32_t y, uint32_t z, int level);

// Build the octree for a cloud already inside [-1,1]^3. Points up to 1e-6
// outside are clamped onto the boundary; anything farther throws
// PointOutOfBounds. The input signal is not computed here.
Octree build(const PointCloud& cloud, int depth);

// Per-leaf 4-channel signal: a plane is fitted to the points in each leaf,
// its normal taken as the normalized mean point normal (covariance
// smallest-eigenvector fallback when the means cancel), and the channels are
// (|nx|, |ny|, |nz|, plane offset to the octant center / edge length).
// Requires unit normals on the cloud; stores the result into tree and
// returns a reference to it.
const Eigen::MatrixX4d& compute_input_signal(Octree& tree,
                                             const PointCloud& cloud);

Octree build_with_signal(const PointCloud& cloud, int depth);

// Disposable binary cache (version-tagged, host-endian).
void save_cache(const Octree& tree, const std::string& path);
Octree load_cache(const std::string& path);

}  // namespace midnet::octree
