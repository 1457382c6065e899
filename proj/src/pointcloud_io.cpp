#include <cstdio>
#include <fstream>
#include <sstream>

#include "midnet/geometry.hpp"

namespace midnet::geometry {

PointCloud load_pointcloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open point cloud file: " + path);
  PointCloud cloud;
  std::string line;
  int columns = -1;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    double v[8];
    int n = 0;
    while (n < 8 && (ls >> v[n])) ++n;
    if (n == 0) continue;  // blank or comment-only line
    if (n != 3 && n != 6 && n != 7 && n != 8)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected 3, 6, 7 or 8 columns, got " +
                       std::to_string(n));
    if (columns == -1) columns = n;
    if (n != columns)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": inconsistent column count");
    cloud.points.emplace_back(v[0], v[1], v[2]);
    if (n >= 6) cloud.normals.emplace_back(v[3], v[4], v[5]);
    if (n >= 7) cloud.patch_ids.push_back(static_cast<int>(v[6]));
    if (n == 8) cloud.part_labels.push_back(static_cast<int>(v[7]));
  }
  // a patch column of all -1 is the placeholder for "parts without patches"
  bool any_patch = false;
  for (int id : cloud.patch_ids) any_patch |= id >= 0;
  if (!cloud.patch_ids.empty() && !any_patch) cloud.patch_ids.clear();
  cloud.reset_point_ids();
  cloud.validate();
  return cloud;
}

void save_pointcloud(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write point cloud file: " + path);
  if ((cloud.has_patches() || cloud.has_parts()) && !cloud.has_normals())
    throw IoError("point-cloud format puts patch/part columns after normals; "
                  "cloud has labels but no normals: " + path);
  const bool write_patch = cloud.has_patches() || cloud.has_parts();
  char buf[256];
  for (int i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    int n = std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g", p.x(), p.y(),
                          p.z());
    if (cloud.has_normals()) {
      const auto& nv = cloud.normals[i];
      n += std::snprintf(buf + n, sizeof(buf) - n, " %.17g %.17g %.17g",
                         nv.x(), nv.y(), nv.z());
    }
    if (write_patch)
      n += std::snprintf(buf + n, sizeof(buf) - n, " %d",
                         cloud.has_patches() ? cloud.patch_ids[i] : -1);
    if (cloud.has_parts())
      n += std::snprintf(buf + n, sizeof(buf) - n, " %d",
                         cloud.part_labels[i]);
    out << buf << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace midnet::geometry
