#include "midnet/octree.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cstring>
#include <fstream>

namespace midnet::octree {

namespace {

// spread the low 21 bits of v to every third bit
uint64_t spread3(uint64_t v) {
  v &= 0x1fffff;
  v = (v | v << 32) & 0x1f00000000ffffULL;
  v = (v | v << 16) & 0x1f0000ff0000ffULL;
  v = (v | v << 8) & 0x100f00f00f00f00fULL;
  v = (v | v << 4) & 0x10c30c30c30c30c3ULL;
  v = (v | v << 2) & 0x1249249249249249ULL;
  return v;
}

uint32_t compact3(uint64_t v) {
  v &= 0x1249249249249249ULL;
  v = (v ^ (v >> 2)) & 0x10c30c30c30c30c3ULL;
  v = (v ^ (v >> 4)) & 0x100f00f00f00f00fULL;
  v = (v ^ (v >> 8)) & 0x1f0000ff0000ffULL;
  v = (v ^ (v >> 16)) & 0x1f00000000ffffULL;
  v = (v ^ (v >> 32)) & 0x1fffff;
  return static_cast<uint32_t>(v);
}

}  // namespace

uint64_t coords_to_key(uint32_t x, uint32_t y, uint32_t z, int /*level*/) {
  return spread3(x) | (spread3(y) << 1) | (spread3(z) << 2);
}

std::array<uint32_t, 3> key_to_coords(uint64_t key, int /*level*/) {
  return {compact3(key), compact3(key >> 1), compact3(key >> 2)};
}

int Octree::find(int level, uint64_t key) const {
  const auto& keys = levels[level].keys;
  auto it = std::lower_bound(keys.begin(), keys.end(), key);
  if (it == keys.end() || *it != key) return kEmpty;
  return static_cast<int>(it - keys.begin());
}

Vec3 Octree::cell_center(int level, uint64_t key) const {
  auto c = key_to_coords(key, level);
  double h = edge_length(level);
  return Vec3(-1.0 + (c[0] + 0.5) * h, -1.0 + (c[1] + 0.5) * h,
              -1.0 + (c[2] + 0.5) * h);
}

const std::array<int32_t, 27>& Octree::neighbors_of(int level,
                                                    int octant_index) const {
  if (level < 0 || level > depth)
    throw InvalidIndex("neighbors_of: level " + std::to_string(level));
  const auto& lv = levels[level];
  if (octant_index < 0 || octant_index >= lv.count())
    throw InvalidIndex("neighbors_of: octant " + std::to_string(octant_index) +
                       " at level " + std::to_string(level));
  return lv.neighbors[octant_index];
}

void Octree::check_invariants() const {
  if (static_cast<int>(levels.size()) != depth + 1)
    throw Error("octree: level array size");
  for (int l = 0; l <= depth; ++l) {
    const auto& lv = levels[l];
    const int n = lv.count();
    for (int i = 1; i < n; ++i)
      if (lv.keys[i - 1] >= lv.keys[i])
        throw Error("octree: keys not strictly increasing");
    if (l > 0) {
      for (int i = 0; i < n; ++i) {
        int p = lv.parent[i];
        if (p < 0 || p >= levels[l - 1].count())
          throw Error("octree: missing parent");
        if (levels[l - 1].keys[p] != (lv.keys[i] >> 3))
          throw Error("octree: parent key mismatch");
      }
    }
    if (l < depth) {
      for (int i = 0; i < n; ++i) {
        bool any = false;
        for (int c = 0; c < 8; ++c) {
          int ci = lv.children[i][c];
          if (ci == kEmpty) continue;
          any = true;
          if (levels[l + 1].keys[ci] != lv.keys[i] * 8 + c)
            throw Error("octree: child key mismatch");
        }
        if (!any) throw Error("octree: interior octant without children");
      }
    }
    // neighbor symmetry: slot s of a maps back to a in the mirrored slot
    for (int i = 0; i < n; ++i) {
      for (int s = 0; s < 27; ++s) {
        int j = lv.neighbors[i][s];
        if (j == kEmpty) continue;
        if (lv.neighbors[j][26 - s] != i)
          throw Error("octree: neighbor relation not symmetric");
      }
      if (lv.neighbors[i][13] != i) throw Error("octree: self slot wrong");
    }
  }
  for (int32_t o : point_to_octant)
    if (o < 0 || o >= leaf_count()) throw Error("octree: point map range");
}

Octree build(const PointCloud& cloud, int depth) {
  if (depth < 1) throw InvalidConfig("octree depth must be >= 1");
  if (cloud.points.empty()) throw EmptyCloud("octree::build");
  Octree tree;
  tree.depth = depth;
  tree.levels.resize(depth + 1);

  const uint32_t grid = 1u << depth;
  const int m = cloud.size();
  std::vector<uint64_t> leaf_key_of_point(m);
  for (int i = 0; i < m; ++i) {
    uint32_t c[3];
    for (int a = 0; a < 3; ++a) {
      double v = cloud.points[i][a];
      if (v < -1.0 - 1e-6 || v > 1.0 + 1e-6)
        throw PointOutOfBounds("point " + std::to_string(i) +
                               " coordinate " + std::to_string(v));
      double u = (v + 1.0) * 0.5 * grid;
      int64_t cell = static_cast<int64_t>(std::floor(u));
      cell = std::clamp<int64_t>(cell, 0, grid - 1);
      c[a] = static_cast<uint32_t>(cell);
    }
    leaf_key_of_point[i] = coords_to_key(c[0], c[1], c[2], depth);
  }

  // unique sorted keys per level; ancestors by repeated key >> 3
  std::vector<uint64_t> keys = leaf_key_of_point;
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  tree.levels[depth].keys = keys;
  for (int l = depth - 1; l >= 0; --l) {
    std::vector<uint64_t> up;
    up.reserve(tree.levels[l + 1].keys.size());
    for (uint64_t k : tree.levels[l + 1].keys) up.push_back(k >> 3);
    up.erase(std::unique(up.begin(), up.end()), up.end());
    tree.levels[l].keys = std::move(up);
  }

  tree.point_to_octant.resize(m);
  for (int i = 0; i < m; ++i)
    tree.point_to_octant[i] = tree.find(depth, leaf_key_of_point[i]);

  // parent / children maps
  for (int l = 0; l <= depth; ++l) {
    auto& lv = tree.levels[l];
    const int n = lv.count();
    lv.parent.assign(n, Octree::kEmpty);
    lv.children.assign(n, {Octree::kEmpty, Octree::kEmpty, Octree::kEmpty,
                           Octree::kEmpty, Octree::kEmpty, Octree::kEmpty,
                           Octree::kEmpty, Octree::kEmpty});
    if (l == 0) continue;
    auto& up = tree.levels[l - 1];
    for (int i = 0; i < n; ++i) {
      uint64_t k = lv.keys[i];
      int p = tree.find(l - 1, k >> 3);
      lv.parent[i] = p;
      up.children[p][static_cast<int>(k & 7)] = i;
    }
  }

  // neighbor maps, slots ordered by (dz,dy,dx) lexicographically
  for (int l = 0; l <= depth; ++l) {
    auto& lv = tree.levels[l];
    const int n = lv.count();
    const int64_t extent = int64_t(1) << l;
    lv.neighbors.assign(n, {});
    for (int i = 0; i < n; ++i) {
      auto c = key_to_coords(lv.keys[i], l);
      int slot = 0;
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx, ++slot) {
            int64_t nx = int64_t(c[0]) + dx, ny = int64_t(c[1]) + dy,
                    nz = int64_t(c[2]) + dz;
            if (nx < 0 || ny < 0 || nz < 0 || nx >= extent || ny >= extent ||
                nz >= extent) {
              lv.neighbors[i][slot] = Octree::kEmpty;
              continue;
            }
            lv.neighbors[i][slot] = tree.find(
                l, coords_to_key(uint32_t(nx), uint32_t(ny), uint32_t(nz), l));
          }
    }
  }
  return tree;
}

const Eigen::MatrixX4d& compute_input_signal(Octree& tree,
                                             const PointCloud& cloud) {
  if (!cloud.has_normals())
    throw Error("compute_input_signal: cloud has no normals");
  const int nleaf = tree.leaf_count();
  const int m = cloud.size();
  if (static_cast<int>(tree.point_to_octant.size()) != m)
    throw Error("compute_input_signal: cloud does not match octree");

  std::vector<Vec3> normal_sum(nleaf, Vec3::Zero());
  std::vector<Vec3> point_sum(nleaf, Vec3::Zero());
  std::vector<int> counts(nleaf, 0);
  for (int i = 0; i < m; ++i) {
    int o = tree.point_to_octant[i];
    normal_sum[o] += cloud.normals[i];
    point_sum[o] += cloud.points[i];
    counts[o] += 1;
  }

  const double edge = tree.edge_length(tree.depth);
  tree.input_signal.resize(nleaf, 4);
  for (int o = 0; o < nleaf; ++o) {
    Vec3 n;
    Vec3 mean_n = normal_sum[o] / counts[o];
    if (mean_n.norm() >= 1e-8) {
      n = mean_n.normalized();
    } else {
      // opposing normals cancelled; fit the plane to the octant's points
      Vec3 mean_p = point_sum[o] / counts[o];
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (int i = 0; i < m; ++i) {
        if (tree.point_to_octant[i] != o) continue;
        Vec3 d = cloud.points[i] - mean_p;
        cov += d * d.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
      Vec3 v = eig.eigenvectors().col(0);
      double len = v.norm();
      n = len > 0 ? Vec3(v / len) : Vec3(0, 0, 1);
    }
    Vec3 centroid = point_sum[o] / counts[o];
    Vec3 center = tree.cell_center(tree.depth, tree.levels[tree.depth].keys[o]);
    double d = n.dot(centroid - center) / edge;
    tree.input_signal(o, 0) = std::abs(n.x());
    tree.input_signal(o, 1) = std::abs(n.y());
    tree.input_signal(o, 2) = std::abs(n.z());
    tree.input_signal(o, 3) = d;
  }
  return tree.input_signal;
}

Octree build_with_signal(const PointCloud& cloud, int depth) {
  Octree tree = build(cloud, depth);
  compute_input_signal(tree, cloud);
  return tree;
}

namespace {

constexpr uint32_t kCacheMagic = 0x4d4f4354;  // "MOCT"
constexpr uint32_t kCacheVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

template <typename T>
void write_vec(std::ofstream& out, const std::vector<T>& v) {
  uint64_t n = v.size();
  write_pod(out, n);
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(T)));
}

template <typename T>
void read_vec(std::ifstream& in, std::vector<T>& v) {
  uint64_t n = 0;
  read_pod(in, n);
  v.resize(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(T)));
}

}  // namespace

void save_cache(const Octree& tree, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write octree cache: " + path);
  write_pod(out, kCacheMagic);
  write_pod(out, kCacheVersion);
  write_pod(out, int32_t(tree.depth));
  for (const auto& lv : tree.levels) {
    write_vec(out, lv.keys);
    write_vec(out, lv.parent);
    write_vec(out, lv.children);
    write_vec(out, lv.neighbors);
  }
  write_vec(out, tree.point_to_octant);
  uint64_t rows = static_cast<uint64_t>(tree.input_signal.rows());
  write_pod(out, rows);
  out.write(reinterpret_cast<const char*>(tree.input_signal.data()),
            static_cast<std::streamsize>(rows * 4 * sizeof(double)));
  if (!out) throw IoError("octree cache write failed: " + path);
}

Octree load_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open octree cache: " + path);
  uint32_t magic = 0, version = 0;
  read_pod(in, magic);
  read_pod(in, version);
  if (magic != kCacheMagic || version != kCacheVersion)
    throw IoError("bad octree cache header: " + path);
  int32_t depth = 0;
  read_pod(in, depth);
  Octree tree;
  tree.depth = depth;
  tree.levels.resize(depth + 1);
  for (auto& lv : tree.levels) {
    read_vec(in, lv.keys);
    read_vec(in, lv.parent);
    read_vec(in, lv.children);
    read_vec(in, lv.neighbors);
  }
  read_vec(in, tree.point_to_octant);
  uint64_t rows = 0;
  read_pod(in, rows);
  tree.input_signal.resize(rows, 4);
  in.read(reinterpret_cast<char*>(tree.input_signal.data()),
          static_cast<std::streamsize>(rows * 4 * sizeof(double)));
  if (!in) throw IoError("octree cache truncated: " + path);
  return tree;
}

}  // namespace midnet::octree
