#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace midnet {

// Index tables driving the sparse octree operators. Rows are "global" rows
// of a batched level-wise feature map; -1 marks an empty slot.
constexpr int32_t kEmptySlot = -1;

// one row per octant: 27 neighbor rows in (dz,dy,dx) lexicographic order
using ConvGather = std::vector<std::array<int32_t, 27>>;

// one row per parent octant: its 8 child rows at the finer level
using PoolChildren = std::vector<std::array<int32_t, 8>>;

// one entry per child octant: its parent row at the coarser level
using ParentIndex = std::vector<int32_t>;

// one row per child octant: 8 surrounding coarse octants and their
// interpolation weights (weights of empty slots are zero)
struct TrilinearTable {
  std::vector<std::array<int32_t, 8>> index;
  std::vector<std::array<double, 8>> weight;
  size_t size() const { return index.size(); }
};

// contiguous row ranges, e.g. one per shape in a batch
using RowSegments = std::vector<std::pair<int32_t, int32_t>>;  // [begin, end)

}  // namespace midnet
