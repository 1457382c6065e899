#include "midnet/octree_batch.hpp"

#include <cmath>

#include "midnet/errors.hpp"

namespace midnet::octree {

OctreeBatch::OctreeBatch(std::vector<geometry::PointCloud> clouds, int depth)
    : depth_(depth), clouds_(std::move(clouds)) {
  if (clouds_.empty()) throw EmptyInput("octree batch needs at least one cloud");
  trees_.reserve(clouds_.size());
  for (const auto& c : clouds_) trees_.push_back(build_with_signal(c, depth));

  const int nt = static_cast<int>(trees_.size());
  offsets_.assign(static_cast<size_t>(depth_ + 1), {});
  segments_.assign(static_cast<size_t>(depth_ + 1), {});
  for (int l = 0; l <= depth_; ++l) {
    auto& off = offsets_[static_cast<size_t>(l)];
    off.resize(static_cast<size_t>(nt) + 1);
    off[0] = 0;
    for (int t = 0; t < nt; ++t)
      off[static_cast<size_t>(t) + 1] =
          off[static_cast<size_t>(t)] + static_cast<int64_t>(trees_[static_cast<size_t>(t)].count(l));
    auto& seg = segments_[static_cast<size_t>(l)];
    seg.reserve(static_cast<size_t>(nt));
    for (int t = 0; t < nt; ++t)
      seg.emplace_back(static_cast<int32_t>(off[static_cast<size_t>(t)]),
                       static_cast<int32_t>(off[static_cast<size_t>(t) + 1]));
  }

  // stacked input signal
  signal_.resize(rows(depth_), 4);
  for (int t = 0; t < nt; ++t)
    signal_.middleRows(offset(depth_, t), trees_[static_cast<size_t>(t)].leaf_count()) =
        trees_[static_cast<size_t>(t)].input_signal;

  // convolution neighborhoods
  conv_.resize(static_cast<size_t>(depth_ + 1));
  for (int l = 0; l <= depth_; ++l) {
    auto& table = conv_[static_cast<size_t>(l)];
    table.resize(static_cast<size_t>(rows(l)));
    for (int t = 0; t < nt; ++t) {
      const auto& lv = trees_[static_cast<size_t>(t)].levels[static_cast<size_t>(l)];
      const int64_t off = offset(l, t);
      for (size_t i = 0; i < lv.keys.size(); ++i)
        for (int s = 0; s < 27; ++s) {
          int32_t nb = lv.neighbors[i][static_cast<size_t>(s)];
          table[static_cast<size_t>(off) + i][static_cast<size_t>(s)] =
              nb == Octree::kEmpty ? kEmptySlot : static_cast<int32_t>(off + nb);
        }
    }
  }

  // pooling / upsampling tables between adjacent levels
  pool_.resize(static_cast<size_t>(depth_ + 1));
  parent_.resize(static_cast<size_t>(depth_ + 1));
  trilinear_.resize(static_cast<size_t>(depth_ + 1));
  for (int f = 1; f <= depth_; ++f) {
    const int c = f - 1;
    auto& pool = pool_[static_cast<size_t>(f)];
    pool.resize(static_cast<size_t>(rows(c)));
    auto& par = parent_[static_cast<size_t>(f)];
    par.resize(static_cast<size_t>(rows(f)));
    auto& tri = trilinear_[static_cast<size_t>(f)];
    tri.index.resize(static_cast<size_t>(rows(f)));
    tri.weight.resize(static_cast<size_t>(rows(f)));

    for (int t = 0; t < nt; ++t) {
      const auto& fine = trees_[static_cast<size_t>(t)].levels[static_cast<size_t>(f)];
      const auto& coarse = trees_[static_cast<size_t>(t)].levels[static_cast<size_t>(c)];
      const int64_t off_f = offset(f, t), off_c = offset(c, t);

      for (size_t p = 0; p < coarse.keys.size(); ++p)
        for (int slot = 0; slot < 8; ++slot) {
          int32_t ch = coarse.children[p][static_cast<size_t>(slot)];
          pool[static_cast<size_t>(off_c) + p][static_cast<size_t>(slot)] =
              ch == Octree::kEmpty ? kEmptySlot : static_cast<int32_t>(off_f + ch);
        }

      const int64_t grid = int64_t(1) << c;
      for (size_t i = 0; i < fine.keys.size(); ++i) {
        par[static_cast<size_t>(off_f) + i] = static_cast<int32_t>(off_c + fine.parent[i]);

        // fractional position of the fine center in coarse-cell units;
        // the fraction is exactly 0.25 or 0.75 per axis
        auto [fx, fy, fz] = key_to_coords(fine.keys[i], f);
        const double ux = (static_cast<double>(fx) + 0.5) / 2.0 - 0.5;
        const double uy = (static_cast<double>(fy) + 0.5) / 2.0 - 0.5;
        const double uz = (static_cast<double>(fz) + 0.5) / 2.0 - 0.5;
        const int64_t bx = static_cast<int64_t>(std::floor(ux));
        const int64_t by = static_cast<int64_t>(std::floor(uy));
        const int64_t bz = static_cast<int64_t>(std::floor(uz));
        const double wx = ux - static_cast<double>(bx);
        const double wy = uy - static_cast<double>(by);
        const double wz = uz - static_cast<double>(bz);

        auto& idx = tri.index[static_cast<size_t>(off_f) + i];
        auto& wgt = tri.weight[static_cast<size_t>(off_f) + i];
        int slot = 0;
        for (int dz = 0; dz <= 1; ++dz)
          for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx, ++slot) {
              idx[static_cast<size_t>(slot)] = kEmptySlot;
              wgt[static_cast<size_t>(slot)] = 0.0;
              const int64_t cx = bx + dx, cy = by + dy, cz = bz + dz;
              if (cx < 0 || cy < 0 || cz < 0 || cx >= grid || cy >= grid || cz >= grid) continue;
              int found = trees_[static_cast<size_t>(t)].find(
                  c, coords_to_key(static_cast<uint32_t>(cx), static_cast<uint32_t>(cy),
                                   static_cast<uint32_t>(cz), c));
              if (found == Octree::kEmpty) continue;  // absent octant: zero contribution
              idx[static_cast<size_t>(slot)] = static_cast<int32_t>(off_c + found);
              wgt[static_cast<size_t>(slot)] = (dx ? wx : 1.0 - wx) * (dy ? wy : 1.0 - wy) *
                                               (dz ? wz : 1.0 - wz);
            }
      }
    }
  }

  // point -> finest octant rows
  point_rows_.reserve(static_cast<size_t>(rows(depth_)));
  int32_t at = 0;
  for (int t = 0; t < nt; ++t) {
    const auto& tree = trees_[static_cast<size_t>(t)];
    const int64_t off = offset(depth_, t);
    const int32_t begin = at;
    for (int o : tree.point_to_octant) {
      point_rows_.push_back(static_cast<int32_t>(off + o));
      ++at;
    }
    point_segments_.emplace_back(begin, at);
  }
}

}  // namespace midnet::octree
