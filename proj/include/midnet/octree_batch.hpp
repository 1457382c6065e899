#pragma once

#include <cstdint>
#include <vector>

#include "midnet/geometry.hpp"
#include "midnet/octree.hpp"
#include "midnet/plans.hpp"
#include "midnet/tensor.hpp"

namespace midnet::octree {

// A mini-batch of octrees flattened into per-level row blocks. Rows of shape
// t at level l occupy [offset(l, t), offset(l, t + 1)); all index tables used
// by the network ops reference these global rows. The batch owns the clouds,
// trees, and tables, and must outlive any tape recorded against it.
class OctreeBatch {
 public:
  OctreeBatch(std::vector<geometry::PointCloud> clouds, int depth);

  int size() const { return static_cast<int>(trees_.size()); }
  int depth() const { return depth_; }
  const geometry::PointCloud& cloud(int t) const { return clouds_[static_cast<size_t>(t)]; }
  const Octree& tree(int t) const { return trees_[static_cast<size_t>(t)]; }

  int64_t rows(int level) const { return offsets_[static_cast<size_t>(level)].back(); }
  int64_t offset(int level, int t) const {
    return offsets_[static_cast<size_t>(level)][static_cast<size_t>(t)];
  }

  // stacked finest-level input signal, one row per leaf octant
  const MatD& signal() const { return signal_; }
  template <class T>
  Mat<T> signal_as() const {
    return signal_.cast<T>();
  }

  // index tables (see plans.hpp); "fine_level" names the finer of the two
  // levels an up/down operator connects
  const ConvGather& conv_gather(int level) const {
    return conv_[static_cast<size_t>(level)];
  }
  const PoolChildren& pool_children(int fine_level) const {
    return pool_[static_cast<size_t>(fine_level)];
  }
  const ParentIndex& parent_of(int fine_level) const {
    return parent_[static_cast<size_t>(fine_level)];
  }
  const TrilinearTable& trilinear(int fine_level) const {
    return trilinear_[static_cast<size_t>(fine_level)];
  }

  // per-shape row ranges at a level (for global average pooling)
  const RowSegments& segments(int level) const { return segments_[static_cast<size_t>(level)]; }

  // global finest-level row for every point of every shape, in shape order,
  // and the per-shape ranges into that list
  const std::vector<int32_t>& point_rows() const { return point_rows_; }
  const RowSegments& point_segments() const { return point_segments_; }

 private:
  int depth_;
  std::vector<geometry::PointCloud> clouds_;
  std::vector<Octree> trees_;
  std::vector<std::vector<int64_t>> offsets_;  // [level][tree] -> first global row
  MatD signal_;
  std::vector<ConvGather> conv_;        // [level]
  std::vector<PoolChildren> pool_;      // [fine_level], empty at 0
  std::vector<ParentIndex> parent_;     // [fine_level], empty at 0
  std::vector<TrilinearTable> trilinear_;  // [fine_level], empty at 0
  std::vector<RowSegments> segments_;   // [level]
  std::vector<int32_t> point_rows_;
  RowSegments point_segments_;
};

}  // namespace midnet::octree
