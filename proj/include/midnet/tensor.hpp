#pragma once

#include <Eigen/Dense>

#include "midnet/rng.hpp"

namespace midnet {

// All learned tensors are dense row-major 2-D matrices. Row-major keeps the
// gather/scatter loops of the octree operators cache-friendly and makes the
// serialized byte order independent of Eigen defaults.
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

// He-style fan-in init: N(0, sqrt(2 / fan_in)). Draws in row-major order so
// the result is a pure function of (rows, cols, fan_in, rng state).
template <class T>
Mat<T> he_normal(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  Mat<T> m(rows, cols);
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<T>(rng.normal() * std_dev);
  return m;
}

// Unit-norm random rows (bank initialization).
template <class T>
Mat<T> random_unit_rows(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    double norm2 = 0.0;
    do {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<T>(rng.normal());
      norm2 = m.row(i).template cast<double>().squaredNorm();
    } while (norm2 < 1e-12);
    m.row(i) /= static_cast<T>(std::sqrt(norm2));
  }
  return m;
}

}  // namespace midnet
