#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace midnet {

// Median-split kd-tree over 3D points. Nodes are stored as index ranges into
// a permutation array, so queries touch no heap after build.
class KdTree3 {
 public:
  KdTree3() = default;

  explicit KdTree3(const std::vector<Eigen::Vector3d>& pts) { build(pts); }

  void build(const std::vector<Eigen::Vector3d>& pts) {
    pts_ = &pts;
    order_.resize(pts.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.clear();
    nodes_.reserve(pts.size() * 2);
    if (!pts.empty()) root_ = build_range(0, static_cast<int>(pts.size()));
  }

  int size() const { return pts_ ? static_cast<int>(pts_->size()) : 0; }

  // index of the nearest point and its squared distance
  std::pair<int, double> nearest(const Eigen::Vector3d& q) const {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    nearest_rec(root_, q, best, best_d2);
    return {best, best_d2};
  }

  // k nearest point indices, ascending distance, ties by lower index
  std::vector<int> knn(const Eigen::Vector3d& q, int k) const {
    std::vector<std::pair<double, int>> heap;  // max-heap on (d2, -idx)
    knn_rec(root_, q, k, heap);
    std::sort(heap.begin(), heap.end(),
              [](const auto& a, const auto& b) {
                return a.first != b.first ? a.first < b.first
                                          : a.second < b.second;
              });
    std::vector<int> out;
    out.reserve(heap.size());
    for (const auto& [d2, i] : heap) out.push_back(i);
    return out;
  }

 private:
  struct Node {
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf payload in order_
    int axis = 0;
    double split = 0.0;
  };

  static constexpr int kLeafSize = 12;

  int build_range(int begin, int end) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size()) - 1;
    }
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(
        std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (int i = begin; i < end; ++i) {
      const auto& p = (*pts_)[order_[i]];
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    int axis;
    (hi - lo).maxCoeff(&axis);
    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](int a, int b) {
                       double pa = (*pts_)[a][axis], pb = (*pts_)[b][axis];
                       return pa != pb ? pa < pb : a < b;
                     });
    node.axis = axis;
    node.split = (*pts_)[order_[mid]][axis];
    int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    int l = build_range(begin, mid);
    int r = build_range(mid, end);
    nodes_[self].left = l;
    nodes_[self].right = r;
    return self;
  }

  void nearest_rec(int ni, const Eigen::Vector3d& q, int& best,
                   double& best_d2) const {
    const Node& n = nodes_[ni];
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        int idx = order_[i];
        double d2 = ((*pts_)[idx] - q).squaredNorm();
        if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
          best_d2 = d2;
          best = idx;
        }
      }
      return;
    }
    double delta = q[n.axis] - n.split;
    int first = delta < 0 ? n.left : n.right;
    int second = delta < 0 ? n.right : n.left;
    nearest_rec(first, q, best, best_d2);
    if (delta * delta <= best_d2) nearest_rec(second, q, best, best_d2);
  }

  void knn_rec(int ni, const Eigen::Vector3d& q, int k,
               std::vector<std::pair<double, int>>& heap) const {
    const Node& n = nodes_[ni];
    // "a is a better candidate than b"; front of the heap is the worst kept
    auto cmp = [](const std::pair<double, int>& a,
                  const std::pair<double, int>& b) {
      return a.first != b.first ? a.first < b.first : a.second < b.second;
    };
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        int idx = order_[i];
        double d2 = ((*pts_)[idx] - q).squaredNorm();
        if (static_cast<int>(heap.size()) < k) {
          heap.emplace_back(d2, idx);
          std::push_heap(heap.begin(), heap.end(), cmp);
        } else if (cmp({d2, idx}, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), cmp);
          heap.back() = {d2, idx};
          std::push_heap(heap.begin(), heap.end(), cmp);
        }
      }
      return;
    }
    double delta = q[n.axis] - n.split;
    int first = delta < 0 ? n.left : n.right;
    int second = delta < 0 ? n.right : n.left;
    knn_rec(first, q, k, heap);
    double worst = static_cast<int>(heap.size()) < k
                       ? std::numeric_limits<double>::infinity()
                       : heap.front().first;
    if (delta * delta <= worst) knn_rec(second, q, k, heap);
  }

  const std::vector<Eigen::Vector3d>* pts_ = nullptr;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace midnet
