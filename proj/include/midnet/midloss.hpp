#pragma once

#include <vector>

#include "midnet/autodiff.hpp"
#include "midnet/errors.hpp"
#include "midnet/plans.hpp"
#include "midnet/rng.hpp"
#include "midnet/tensor.hpp"

// Instance-discrimination losses at two granularities: shapes against a
// shape memory bank, points against a per-shape patch memory bank. Banks are
// constants inside the graph; they move only through the momentum updates
// applied after each optimizer step.
namespace midnet::midloss {

struct MidLossConfig {
  double shape_temperature = 0.1;
  double patch_temperature = 0.1;
  double bank_momentum = 0.5;  // blend weight of the fresh feature
};

template <class T>
struct ShapeBank {
  Mat<T> rows;  // shapes x dim, unit rows

  static ShapeBank random(Eigen::Index shapes, Eigen::Index dim, uint64_t seed) {
    Rng rng(seed);
    return ShapeBank{random_unit_rows<T>(shapes, dim, rng)};
  }
};

template <class T>
struct PatchBanks {
  std::vector<Mat<T>> shapes;  // per shape: patches x dim, unit rows

  static PatchBanks random(Eigen::Index shape_count, Eigen::Index patches, Eigen::Index dim,
                           uint64_t seed) {
    Rng rng(seed);
    PatchBanks b;
    b.shapes.reserve(static_cast<size_t>(shape_count));
    for (Eigen::Index i = 0; i < shape_count; ++i)
      b.shapes.push_back(random_unit_rows<T>(patches, dim, rng));
    return b;
  }
};

// Cross-entropy of each feature row against every bank row; targets[r] names
// the bank row that should win. Returns per-row losses (n x 1).
template <class T>
autodiff::Node<T>* bank_cross_entropy(autodiff::Tape<T>& tape, autodiff::Node<T>* features,
                                      const Mat<T>& bank_rows, const std::vector<int>& targets,
                                      T temperature) {
  if (temperature <= T(0)) throw InvalidConfig("temperature must be positive");
  autodiff::Node<T>* logits =
      autodiff::matmul_const(tape, features, Mat<T>(bank_rows.transpose()));
  logits = autodiff::scale(tape, logits, T(1) / temperature);
  return autodiff::softmax_cross_entropy(tape, logits, targets);
}

template <class T>
int classification_hits(const Mat<T>& features, const Mat<T>& bank_rows,
                        const std::vector<int>& targets) {
  Mat<T> logits = features * bank_rows.transpose();
  int hits = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    if (static_cast<int>(best) == targets[static_cast<size_t>(r)]) ++hits;
  }
  return hits;
}

template <class T>
double classification_accuracy(const Mat<T>& features, const Mat<T>& bank_rows,
                               const std::vector<int>& targets) {
  if (features.rows() == 0) return 0.0;
  return static_cast<double>(classification_hits(features, bank_rows, targets)) /
         static_cast<double>(features.rows());
}

template <class T>
struct MidLossResult {
  autodiff::Node<T>* total = nullptr;     // 1 x 1
  autodiff::Node<T>* shape_ce = nullptr;  // batch x 1
  double shape_accuracy = 0.0;            // top-1 against the shape bank
  double patch_accuracy = 0.0;            // top-1 against each shape's patch bank
};

// total = mean over batch shapes of [ shape CE + mean over the shape's
// points of patch CE ].
template <class T>
MidLossResult<T> mid_loss(autodiff::Tape<T>& tape, autodiff::Node<T>* shape_features,
                          autodiff::Node<T>* point_features, const std::vector<int>& shape_ids,
                          const RowSegments& point_segments,
                          const std::vector<std::vector<int>>& patch_ids,
                          const ShapeBank<T>& shape_bank, const PatchBanks<T>& patch_banks,
                          const MidLossConfig& cfg) {
  const size_t batch = shape_ids.size();
  if (static_cast<size_t>(shape_features->rows()) != batch ||
      point_segments.size() != batch || patch_ids.size() != batch)
    throw ShapeMismatch("mid_loss: batch size disagreement");
  for (int id : shape_ids)
    if (id < 0 || id >= shape_bank.rows.rows())
      throw IndexOutOfRange("mid_loss: shape id outside bank");

  MidLossResult<T> result;
  result.shape_ce = bank_cross_entropy(tape, shape_features, shape_bank.rows, shape_ids,
                                       static_cast<T>(cfg.shape_temperature));

  std::vector<autodiff::Node<T>*> patch_means;
  patch_means.reserve(batch);
  size_t patch_points = 0, patch_hits = 0;
  for (size_t i = 0; i < batch; ++i) {
    const auto [begin, end] = point_segments[i];
    const auto& ids = patch_ids[i];
    if (static_cast<int>(ids.size()) != end - begin)
      throw ShapeMismatch("mid_loss: patch labels do not cover the shape's points");
    const Mat<T>& bank = patch_banks.shapes[static_cast<size_t>(shape_ids[i])];
    autodiff::Node<T>* seg = autodiff::slice_rows(tape, point_features, begin, end - begin);
    autodiff::Node<T>* ce =
        bank_cross_entropy(tape, seg, bank, ids, static_cast<T>(cfg.patch_temperature));
    patch_means.push_back(autodiff::mean_all(tape, ce));

    patch_hits += static_cast<size_t>(classification_hits(Mat<T>(seg->value), bank, ids));
    patch_points += ids.size();
  }
  autodiff::Node<T>* patch_term = autodiff::stack_rows(tape, patch_means);
  autodiff::Node<T>* per_shape = autodiff::add(tape, result.shape_ce, patch_term);
  result.total = autodiff::mean_all(tape, per_shape);

  result.shape_accuracy =
      classification_accuracy(Mat<T>(shape_features->value), shape_bank.rows, shape_ids);
  result.patch_accuracy =
      patch_points == 0 ? 0.0 : static_cast<double>(patch_hits) / static_cast<double>(patch_points);
  return result;
}

// w <- normalize((1 - lambda) * w + lambda * fresh); lambda = 0 is an exact
// no-op, lambda = 1 replaces the row (up to normalization).
template <class T>
void update_shape_bank(ShapeBank<T>& bank, const Mat<T>& features,
                       const std::vector<int>& shape_ids, T lambda) {
  if (lambda < T(0) || lambda > T(1)) throw InvalidConfig("bank momentum must be in [0, 1]");
  if (lambda == T(0)) return;
  if (static_cast<size_t>(features.rows()) != shape_ids.size())
    throw ShapeMismatch("update_shape_bank: one feature row per shape id");
  for (size_t i = 0; i < shape_ids.size(); ++i) {
    int id = shape_ids[i];
    if (id < 0 || id >= bank.rows.rows()) throw IndexOutOfRange("update_shape_bank: bad shape id");
    Eigen::Matrix<T, 1, Eigen::Dynamic> blend =
        (T(1) - lambda) * bank.rows.row(id) + lambda * features.row(static_cast<Eigen::Index>(i));
    double norm = blend.template cast<double>().norm();
    if (norm < 1e-12) throw ZeroVector("update_shape_bank: blended row collapsed");
    bank.rows.row(id) = blend / static_cast<T>(norm);
  }
}

// Fresh patch rows are the renormalized means of each patch's point features;
// patches with no points in this view keep their old rows.
template <class T>
void update_patch_bank(PatchBanks<T>& banks, int shape_id, const Mat<T>& point_features,
                       const std::vector<int>& patch_ids, T lambda) {
  if (lambda < T(0) || lambda > T(1)) throw InvalidConfig("bank momentum must be in [0, 1]");
  if (lambda == T(0)) return;
  if (shape_id < 0 || static_cast<size_t>(shape_id) >= banks.shapes.size())
    throw IndexOutOfRange("update_patch_bank: bad shape id");
  Mat<T>& bank = banks.shapes[static_cast<size_t>(shape_id)];
  if (static_cast<size_t>(point_features.rows()) != patch_ids.size())
    throw ShapeMismatch("update_patch_bank: one feature row per point");

  const Eigen::Index k = bank.rows();
  Mat<T> sums = Mat<T>::Zero(k, bank.cols());
  std::vector<int> counts(static_cast<size_t>(k), 0);
  for (size_t p = 0; p < patch_ids.size(); ++p) {
    int id = patch_ids[p];
    if (id < 0 || id >= k) throw IndexOutOfRange("update_patch_bank: patch id outside bank");
    sums.row(id) += point_features.row(static_cast<Eigen::Index>(p));
    ++counts[static_cast<size_t>(id)];
  }
  for (Eigen::Index r = 0; r < k; ++r) {
    if (counts[static_cast<size_t>(r)] == 0) continue;
    Eigen::Matrix<T, 1, Eigen::Dynamic> mean =
        sums.row(r) / static_cast<T>(counts[static_cast<size_t>(r)]);
    double mnorm = mean.template cast<double>().norm();
    if (mnorm < 1e-12) throw ZeroVector("update_patch_bank: patch mean collapsed");
    mean /= static_cast<T>(mnorm);
    Eigen::Matrix<T, 1, Eigen::Dynamic> blend = (T(1) - lambda) * bank.row(r) + lambda * mean;
    double bnorm = blend.template cast<double>().norm();
    if (bnorm < 1e-12) throw ZeroVector("update_patch_bank: blended row collapsed");
    bank.row(r) = blend / static_cast<T>(bnorm);
  }
}

}  // namespace midnet::midloss
