#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "midnet/errors.hpp"
#include "midnet/plans.hpp"
#include "midnet/tensor.hpp"

// Reverse-mode automatic differentiation over dense row-major matrices.
// Nodes live on a Tape in creation order; backward() replays them in
// reverse. Templated on the scalar so the same graph code runs in float
// for training and double for finite-difference verification.
namespace midnet::autodiff {

template <class T>
class Tape;

template <class T>
struct Node {
  Mat<T> value;
  Mat<T> grad;  // lazily sized on first accumulation; empty means "no gradient yet"
  bool requires_grad = false;
  int id = -1;
  std::function<void(Tape<T>&)> backward;  // empty for leaves/constants

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
};

// Per-layer running statistics for batch normalization.
template <class T>
struct BnState {
  Mat<T> running_mean;  // 1 x C
  Mat<T> running_var;   // 1 x C
  void init(Eigen::Index channels) {
    running_mean = Mat<T>::Zero(1, channels);
    running_var = Mat<T>::Ones(1, channels);
  }
};

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Node<T>* make(Mat<T> value, bool requires_grad) {
    auto node = std::make_unique<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->id = static_cast<int>(nodes_.size());
    Node<T>* raw = node.get();
    nodes_.push_back(std::move(node));
    return raw;
  }

  Node<T>* constant(Mat<T> value) { return make(std::move(value), false); }
  Node<T>* leaf(Mat<T> value, bool requires_grad = true) {
    return make(std::move(value), requires_grad);
  }

  // Accumulates g into the gradient of n (no-op if n does not need one).
  void accumulate(Node<T>* n, const Mat<T>& g) {
    if (!n->requires_grad) return;
    if (n->grad.size() == 0) n->grad = Mat<T>::Zero(n->value.rows(), n->value.cols());
    if (g.rows() != n->grad.rows() || g.cols() != n->grad.cols())
      throw ShapeMismatch("gradient shape does not match value shape");
    n->grad += g;
  }

  // Runs reverse-mode accumulation from a scalar loss node.
  void backward(Node<T>* loss) {
    if (loss->value.rows() != 1 || loss->value.cols() != 1)
      throw NonScalarLoss("backward() requires a 1x1 loss node");
    for (auto& n : nodes_) n->grad.resize(0, 0);
    loss->grad = Mat<T>::Ones(1, 1);
    for (int i = loss->id; i >= 0; --i) {
      Node<T>* n = nodes_[static_cast<size_t>(i)].get();
      if (n->backward && n->grad.size() != 0) n->backward(*this);
    }
  }

  size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    reset_kink_margin();
  }

  // Distance of the forward pass to the nearest non-smooth point (relu zero
  // crossings, maxpool ties). Finite-difference checks consult this to avoid
  // probing across a kink.
  double kink_margin() const { return kink_margin_; }
  void reset_kink_margin() { kink_margin_ = std::numeric_limits<double>::infinity(); }
  void note_kink_margin(double m) { kink_margin_ = std::min(kink_margin_, m); }

 private:
  std::vector<std::unique_ptr<Node<T>>> nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// elementwise / dense ops

template <class T>
Node<T>* add(Tape<T>& tape, Node<T>* a, Node<T>* b) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw ShapeMismatch("add: operand shapes differ");
  Node<T>* out = tape.make(a->value + b->value, a->requires_grad || b->requires_grad);
  out->backward = [out, a, b](Tape<T>& t) {
    t.accumulate(a, out->grad);
    t.accumulate(b, out->grad);
  };
  return out;
}

template <class T>
Node<T>* scale(Tape<T>& tape, Node<T>* x, T factor) {
  Node<T>* out = tape.make(Mat<T>(x->value * factor), x->requires_grad);
  out->backward = [out, x, factor](Tape<T>& t) { t.accumulate(x, Mat<T>(out->grad * factor)); };
  return out;
}

template <class T>
Node<T>* relu(Tape<T>& tape, Node<T>* x) {
  // Exact zeros sit on the kink but cannot move off it under the tiny
  // perturbations a finite-difference probe applies, so they don't make the
  // check dishonest; only near-zero values do.
  double margin = std::numeric_limits<double>::infinity();
  const T* data = x->value.data();
  for (Eigen::Index i = 0; i < x->value.size(); ++i) {
    double a = std::abs(static_cast<double>(data[i]));
    if (a > 0.0) margin = std::min(margin, a);
  }
  tape.note_kink_margin(margin);
  Mat<T> y = x->value.cwiseMax(T(0));
  Node<T>* out = tape.make(std::move(y), x->requires_grad);
  out->backward = [out, x](Tape<T>& t) {
    Mat<T> g = ((x->value.array() > T(0)).template cast<T>() * out->grad.array()).matrix();
    t.accumulate(x, g);
  };
  return out;
}

// y = x * W + 1 * b   (x: n x Cin, W: Cin x Cout, b: 1 x Cout or null)
template <class T>
Node<T>* linear(Tape<T>& tape, Node<T>* x, Node<T>* w, Node<T>* b = nullptr) {
  if (x->cols() != w->rows()) throw ShapeMismatch("linear: inner dimensions differ");
  Mat<T> y = x->value * w->value;
  if (b) {
    if (b->rows() != 1 || b->cols() != y.cols()) throw ShapeMismatch("linear: bad bias shape");
    y.rowwise() += b->value.row(0);
  }
  bool rg = x->requires_grad || w->requires_grad || (b && b->requires_grad);
  Node<T>* out = tape.make(std::move(y), rg);
  out->backward = [out, x, w, b](Tape<T>& t) {
    t.accumulate(x, Mat<T>(out->grad * w->value.transpose()));
    t.accumulate(w, Mat<T>(x->value.transpose() * out->grad));
    if (b) t.accumulate(b, Mat<T>(out->grad.colwise().sum()));
  };
  return out;
}

// y = x * M with M held constant (e.g. classifier logits against a bank).
template <class T>
Node<T>* matmul_const(Tape<T>& tape, Node<T>* x, Mat<T> m) {
  if (x->cols() != m.rows()) throw ShapeMismatch("matmul_const: inner dimensions differ");
  auto shared = std::make_shared<Mat<T>>(std::move(m));
  Node<T>* out = tape.make(Mat<T>(x->value * *shared), x->requires_grad);
  out->backward = [out, x, shared](Tape<T>& t) {
    t.accumulate(x, Mat<T>(out->grad * shared->transpose()));
  };
  return out;
}

template <class T>
Node<T>* concat_cols(Tape<T>& tape, const std::vector<Node<T>*>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  Eigen::Index rows = parts[0]->rows(), cols = 0;
  bool rg = false;
  for (Node<T>* p : parts) {
    if (p->rows() != rows) throw ShapeMismatch("concat_cols: row counts differ");
    cols += p->cols();
    rg = rg || p->requires_grad;
  }
  Mat<T> y(rows, cols);
  Eigen::Index at = 0;
  for (Node<T>* p : parts) {
    y.middleCols(at, p->cols()) = p->value;
    at += p->cols();
  }
  Node<T>* out = tape.make(std::move(y), rg);
  std::vector<Node<T>*> ins = parts;
  out->backward = [out, ins](Tape<T>& t) {
    Eigen::Index at = 0;
    for (Node<T>* p : ins) {
      t.accumulate(p, Mat<T>(out->grad.middleCols(at, p->cols())));
      at += p->cols();
    }
  };
  return out;
}

template <class T>
Node<T>* stack_rows(Tape<T>& tape, const std::vector<Node<T>*>& parts) {
  if (parts.empty()) throw ShapeMismatch("stack_rows: no inputs");
  Eigen::Index cols = parts[0]->cols(), rows = 0;
  bool rg = false;
  for (Node<T>* p : parts) {
    if (p->cols() != cols) throw ShapeMismatch("stack_rows: column counts differ");
    rows += p->rows();
    rg = rg || p->requires_grad;
  }
  Mat<T> y(rows, cols);
  Eigen::Index at = 0;
  for (Node<T>* p : parts) {
    y.middleRows(at, p->rows()) = p->value;
    at += p->rows();
  }
  Node<T>* out = tape.make(std::move(y), rg);
  std::vector<Node<T>*> ins = parts;
  out->backward = [out, ins](Tape<T>& t) {
    Eigen::Index at = 0;
    for (Node<T>* p : ins) {
      t.accumulate(p, Mat<T>(out->grad.middleRows(at, p->rows())));
      at += p->rows();
    }
  };
  return out;
}

template <class T>
Node<T>* slice_rows(Tape<T>& tape, Node<T>* x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x->rows())
    throw IndexOutOfRange("slice_rows: range outside input");
  Node<T>* out = tape.make(Mat<T>(x->value.middleRows(begin, count)), x->requires_grad);
  out->backward = [out, x, begin, count](Tape<T>& t) {
    if (!x->requires_grad) return;
    Mat<T> g = Mat<T>::Zero(x->rows(), x->cols());
    g.middleRows(begin, count) = out->grad;
    t.accumulate(x, g);
  };
  return out;
}

template <class T>
Node<T>* gather_rows(Tape<T>& tape, Node<T>* x, std::vector<int32_t> indices) {
  for (int32_t i : indices)
    if (i < 0 || i >= x->rows()) throw IndexOutOfRange("gather_rows: index outside input");
  auto idx = std::make_shared<std::vector<int32_t>>(std::move(indices));
  Mat<T> y(static_cast<Eigen::Index>(idx->size()), x->cols());
  for (size_t r = 0; r < idx->size(); ++r) y.row(static_cast<Eigen::Index>(r)) = x->value.row((*idx)[r]);
  Node<T>* out = tape.make(std::move(y), x->requires_grad);
  out->backward = [out, x, idx](Tape<T>& t) {
    if (!x->requires_grad) return;
    Mat<T> g = Mat<T>::Zero(x->rows(), x->cols());
    for (size_t r = 0; r < idx->size(); ++r)
      g.row((*idx)[r]) += out->grad.row(static_cast<Eigen::Index>(r));
    t.accumulate(x, g);
  };
  return out;
}

template <class T>
Node<T>* mean_all(Tape<T>& tape, Node<T>* x) {
  if (x->value.size() == 0) throw ShapeMismatch("mean_all: empty input");
  Mat<T> y(1, 1);
  y(0, 0) = x->value.sum() / static_cast<T>(x->value.size());
  Node<T>* out = tape.make(std::move(y), x->requires_grad);
  out->backward = [out, x](Tape<T>& t) {
    T g = out->grad(0, 0) / static_cast<T>(x->value.size());
    t.accumulate(x, Mat<T>(Mat<T>::Constant(x->rows(), x->cols(), g)));
  };
  return out;
}

template <class T>
Node<T>* sum_all(Tape<T>& tape, Node<T>* x) {
  Mat<T> y(1, 1);
  y(0, 0) = x->value.sum();
  Node<T>* out = tape.make(std::move(y), x->requires_grad);
  out->backward = [out, x](Tape<T>& t) {
    t.accumulate(x, Mat<T>(Mat<T>::Constant(x->rows(), x->cols(), out->grad(0, 0))));
  };
  return out;
}

// Rows scaled to unit Euclidean norm. Rows with norm < 1e-12 are rejected:
// features feeding cosine similarities must never silently collapse.
template <class T>
Node<T>* l2_normalize_rows(Tape<T>& tape, Node<T>* x) {
  Mat<T> y = x->value;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_norm(x->rows());
  for (Eigen::Index r = 0; r < x->rows(); ++r) {
    double n = x->value.row(r).template cast<double>().norm();
    if (n < 1e-12) throw ZeroVector("l2_normalize_rows: row norm below 1e-12");
    inv_norm(r) = static_cast<T>(1.0 / n);
    y.row(r) *= inv_norm(r);
  }
  Node<T>* out = tape.make(std::move(y), x->requires_grad);
  auto inv = std::make_shared<Eigen::Matrix<T, Eigen::Dynamic, 1>>(std::move(inv_norm));
  out->backward = [out, x, inv](Tape<T>& t) {
    Mat<T> g(x->rows(), x->cols());
    for (Eigen::Index r = 0; r < x->rows(); ++r) {
      T dot = out->grad.row(r).dot(out->value.row(r));
      g.row(r) = (out->grad.row(r) - out->value.row(r) * dot) * (*inv)(r);
    }
    t.accumulate(x, g);
  };
  return out;
}

// Batch normalization over rows. Training mode uses batch statistics and
// updates the running state in place; eval mode reads the running state.
template <class T>
Node<T>* batchnorm(Tape<T>& tape, Node<T>* x, Node<T>* gamma, Node<T>* beta, BnState<T>* state,
                   bool training, T momentum = T(0.9), T eps = T(1e-5)) {
  const Eigen::Index n = x->rows(), c = x->cols();
  if (gamma->rows() != 1 || gamma->cols() != c || beta->rows() != 1 || beta->cols() != c)
    throw ShapeMismatch("batchnorm: gamma/beta must be 1 x channels");
  if (state->running_mean.cols() != c) throw ShapeMismatch("batchnorm: state channel mismatch");
  if (n == 0) throw ShapeMismatch("batchnorm: empty input");

  Mat<T> mean, var;
  if (training) {
    mean = x->value.colwise().mean();
    Mat<T> centered = x->value.rowwise() - mean.row(0);
    var = centered.array().square().colwise().mean();
    state->running_mean = momentum * state->running_mean + (T(1) - momentum) * mean;
    state->running_var = momentum * state->running_var + (T(1) - momentum) * var;
  } else {
    mean = state->running_mean;
    var = state->running_var;
  }
  Mat<T> inv_std = (var.array() + eps).rsqrt().matrix();
  Mat<T> xhat =
      ((x->value.rowwise() - mean.row(0)).array().rowwise() * inv_std.row(0).array()).matrix();
  Mat<T> y = ((xhat.array().rowwise() * gamma->value.row(0).array()).rowwise() +
              beta->value.row(0).array())
                 .matrix();

  bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  Node<T>* out = tape.make(std::move(y), rg);
  auto saved_xhat = std::make_shared<Mat<T>>(std::move(xhat));
  auto saved_inv = std::make_shared<Mat<T>>(std::move(inv_std));
  out->backward = [out, x, gamma, beta, saved_xhat, saved_inv, training](Tape<T>& t) {
    const Mat<T>& xh = *saved_xhat;
    t.accumulate(gamma, Mat<T>((out->grad.array() * xh.array()).colwise().sum().matrix()));
    t.accumulate(beta, Mat<T>(out->grad.colwise().sum()));
    if (!x->requires_grad) return;
    Mat<T> gscaled = (out->grad.array().rowwise() *
                      (gamma->value.row(0).array() * saved_inv->row(0).array()))
                         .matrix();
    if (!training) {
      t.accumulate(x, gscaled);
      return;
    }
    Mat<T> mean_g = gscaled.colwise().mean();
    Mat<T> mean_gx = (gscaled.array() * xh.array()).colwise().mean().matrix();
    Mat<T> g = gscaled;
    g.rowwise() -= mean_g.row(0);
    g = (g.array() - (xh.array().rowwise() * mean_gx.row(0).array())).matrix();
    t.accumulate(x, g);
  };
  return out;
}

// Per-row softmax cross-entropy with integer targets: loss_r =
// logsumexp(logits_r) - logits_r[target_r], computed with max-subtraction.
template <class T>
Node<T>* softmax_cross_entropy(Tape<T>& tape, Node<T>* logits, std::vector<int> targets) {
  const Eigen::Index n = logits->rows(), c = logits->cols();
  if (static_cast<Eigen::Index>(targets.size()) != n)
    throw ShapeMismatch("softmax_cross_entropy: one target per row required");
  for (int tgt : targets)
    if (tgt < 0 || tgt >= c) throw IndexOutOfRange("softmax_cross_entropy: target outside range");

  Mat<T> probs(n, c);
  Mat<T> loss(n, 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    T m = logits->value.row(r).maxCoeff();
    Eigen::Array<T, 1, Eigen::Dynamic> shifted = logits->value.row(r).array() - m;
    Eigen::Array<T, 1, Eigen::Dynamic> e = shifted.exp();
    T z = e.sum();
    probs.row(r) = e / z;
    loss(r, 0) = std::log(z) - shifted(targets[static_cast<size_t>(r)]);
  }
  Node<T>* out = tape.make(std::move(loss), logits->requires_grad);
  auto saved_probs = std::make_shared<Mat<T>>(std::move(probs));
  auto saved_targets = std::make_shared<std::vector<int>>(std::move(targets));
  out->backward = [out, logits, saved_probs, saved_targets](Tape<T>& t) {
    Mat<T> g = *saved_probs;
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      g(r, (*saved_targets)[static_cast<size_t>(r)]) -= T(1);
      g.row(r) *= out->grad(r, 0);
    }
    t.accumulate(logits, g);
  };
  return out;
}

// ---------------------------------------------------------------------------
// sparse octree ops (driven by precomputed index tables)

namespace detail {
template <class T>
Mat<T> gather_neighborhoods(const Mat<T>& x, const ConvGather& table) {
  const Eigen::Index cin = x.cols();
  Mat<T> g = Mat<T>::Zero(static_cast<Eigen::Index>(table.size()), 27 * cin);
  for (size_t r = 0; r < table.size(); ++r)
    for (int s = 0; s < 27; ++s) {
      int32_t src = table[r][static_cast<size_t>(s)];
      if (src != kEmptySlot) g.row(static_cast<Eigen::Index>(r)).segment(s * cin, cin) = x.row(src);
    }
  return g;
}
}  // namespace detail

// 3x3x3 sparse convolution: each output row mixes the 27 spatial neighbors
// of its octant (empty neighbors contribute zero). w: (27*Cin) x Cout.
template <class T>
Node<T>* octree_conv(Tape<T>& tape, Node<T>* x, Node<T>* w, Node<T>* b, const ConvGather& table) {
  const Eigen::Index cin = x->cols();
  if (w->rows() != 27 * cin) throw ShapeMismatch("octree_conv: weight rows must be 27 * in-channels");
  for (const auto& row : table)
    for (int32_t src : row)
      if (src != kEmptySlot && (src < 0 || src >= x->rows()))
        throw IndexOutOfRange("octree_conv: gather index outside input");
  Mat<T> g = detail::gather_neighborhoods(x->value, table);
  Mat<T> y = g * w->value;
  if (b) {
    if (b->rows() != 1 || b->cols() != y.cols()) throw ShapeMismatch("octree_conv: bad bias shape");
    y.rowwise() += b->value.row(0);
  }
  bool rg = x->requires_grad || w->requires_grad || (b && b->requires_grad);
  Node<T>* out = tape.make(std::move(y), rg);
  const ConvGather* tbl = &table;  // plans outlive the tape (owned by the batch)
  out->backward = [out, x, w, b, tbl, cin](Tape<T>& t) {
    // neighborhoods are regathered instead of saved: the extra pass is cheap
    // and keeps tape memory proportional to the feature maps themselves
    if (w->requires_grad) {
      Mat<T> g2 = detail::gather_neighborhoods(x->value, *tbl);
      t.accumulate(w, Mat<T>(g2.transpose() * out->grad));
    }
    if (b) t.accumulate(b, Mat<T>(out->grad.colwise().sum()));
    if (x->requires_grad) {
      Mat<T> dg = out->grad * w->value.transpose();  // rows x (27*Cin)
      Mat<T> dx = Mat<T>::Zero(x->rows(), cin);
      for (size_t r = 0; r < tbl->size(); ++r)
        for (int s = 0; s < 27; ++s) {
          int32_t src = (*tbl)[r][static_cast<size_t>(s)];
          if (src != kEmptySlot)
            dx.row(src) += dg.row(static_cast<Eigen::Index>(r)).segment(s * cin, cin);
        }
      t.accumulate(x, dx);
    }
  };
  return out;
}

// bias-free form (the backbone convs leave the shift to batchnorm)
template <class T>
Node<T>* octree_conv(Tape<T>& tape, Node<T>* x, Node<T>* w, const ConvGather& table) {
  return octree_conv(tape, x, w, static_cast<Node<T>*>(nullptr), table);
}

// Max over each parent's existing children. Ties keep the lowest child slot.
template <class T>
Node<T>* octree_maxpool(Tape<T>& tape, Node<T>* x, const PoolChildren& children) {
  const Eigen::Index c = x->cols();
  const Eigen::Index np = static_cast<Eigen::Index>(children.size());
  Mat<T> y(np, c);
  auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(np * c));
  double margin = std::numeric_limits<double>::infinity();
  for (Eigen::Index p = 0; p < np; ++p) {
    for (Eigen::Index ch = 0; ch < c; ++ch) {
      T best = std::numeric_limits<T>::lowest();
      T second = std::numeric_limits<T>::lowest();
      int32_t best_row = kEmptySlot;
      for (int slot = 0; slot < 8; ++slot) {
        int32_t src = children[static_cast<size_t>(p)][static_cast<size_t>(slot)];
        if (src == kEmptySlot) continue;
        if (src < 0 || src >= x->rows())
          throw IndexOutOfRange("octree_maxpool: child index outside input");
        T v = x->value(src, ch);
        if (v > best) {
          second = best;
          best = v;
          best_row = src;
        } else if (v > second) {
          second = v;
        }
      }
      if (best_row == kEmptySlot)
        throw ShapeMismatch("octree_maxpool: parent octant with no children");
      // Exact ties (common when dead relus feed sibling octants the same
      // zeros) stay tied under the perturbations a finite-difference probe
      // applies, so they are not a kink hazard; only narrow nonzero gaps are.
      if (second > std::numeric_limits<T>::lowest() && best != second)
        margin = std::min(margin, static_cast<double>(best - second));
      y(p, ch) = best;
      (*argmax)[static_cast<size_t>(p * c + ch)] = best_row;
    }
  }
  tape.note_kink_margin(margin);
  Node<T>* out = tape.make(std::move(y), x->requires_grad);
  out->backward = [out, x, argmax, c](Tape<T>& t) {
    if (!x->requires_grad) return;
    Mat<T> g = Mat<T>::Zero(x->rows(), x->cols());
    for (Eigen::Index p = 0; p < out->rows(); ++p)
      for (Eigen::Index ch = 0; ch < c; ++ch)
        g((*argmax)[static_cast<size_t>(p * c + ch)], ch) += out->grad(p, ch);
    t.accumulate(x, g);
  };
  return out;
}

// Nearest upsampling: every child copies its parent's features.
template <class T>
Node<T>* octree_upsample_nearest(Tape<T>& tape, Node<T>* x, const ParentIndex& parent) {
  std::vector<int32_t> idx(parent.begin(), parent.end());
  return gather_rows(tape, x, std::move(idx));
}

// Trilinear upsampling: each child blends the 8 coarse octants around its
// center; weights of absent octants were dropped at plan-build time.
template <class T>
Node<T>* octree_upsample_trilinear(Tape<T>& tape, Node<T>* x, const TrilinearTable& table) {
  const Eigen::Index c = x->cols();
  const Eigen::Index n = static_cast<Eigen::Index>(table.size());
  Mat<T> y = Mat<T>::Zero(n, c);
  for (Eigen::Index r = 0; r < n; ++r)
    for (int s = 0; s < 8; ++s) {
      int32_t src = table.index[static_cast<size_t>(r)][static_cast<size_t>(s)];
      if (src == kEmptySlot) continue;
      if (src < 0 || src >= x->rows())
        throw IndexOutOfRange("octree_upsample_trilinear: index outside input");
      y.row(r) += static_cast<T>(table.weight[static_cast<size_t>(r)][static_cast<size_t>(s)]) *
                  x->value.row(src);
    }
  Node<T>* out = tape.make(std::move(y), x->requires_grad);
  const TrilinearTable* tbl = &table;
  out->backward = [out, x, tbl](Tape<T>& t) {
    if (!x->requires_grad) return;
    Mat<T> g = Mat<T>::Zero(x->rows(), x->cols());
    for (Eigen::Index r = 0; r < out->rows(); ++r)
      for (int s = 0; s < 8; ++s) {
        int32_t src = tbl->index[static_cast<size_t>(r)][static_cast<size_t>(s)];
        if (src != kEmptySlot)
          g.row(src) +=
              static_cast<T>(tbl->weight[static_cast<size_t>(r)][static_cast<size_t>(s)]) *
              out->grad.row(r);
      }
    t.accumulate(x, g);
  };
  return out;
}

// Mean over each row segment (one segment per shape in the batch).
template <class T>
Node<T>* global_avg_pool(Tape<T>& tape, Node<T>* x, const RowSegments& segments) {
  Mat<T> y(static_cast<Eigen::Index>(segments.size()), x->cols());
  for (size_t i = 0; i < segments.size(); ++i) {
    auto [b, e] = segments[i];
    if (b < 0 || e > x->rows() || e <= b)
      throw ShapeMismatch("global_avg_pool: bad row segment");
    y.row(static_cast<Eigen::Index>(i)) =
        x->value.middleRows(b, e - b).colwise().sum() / static_cast<T>(e - b);
  }
  Node<T>* out = tape.make(std::move(y), x->requires_grad);
  auto segs = std::make_shared<RowSegments>(segments);
  out->backward = [out, x, segs](Tape<T>& t) {
    if (!x->requires_grad) return;
    Mat<T> g = Mat<T>::Zero(x->rows(), x->cols());
    for (size_t i = 0; i < segs->size(); ++i) {
      auto [b, e] = (*segs)[i];
      g.middleRows(b, e - b).rowwise() +=
          Eigen::Matrix<T, 1, Eigen::Dynamic>(out->grad.row(static_cast<Eigen::Index>(i)) /
                                              static_cast<T>(e - b));
    }
    t.accumulate(x, g);
  };
  return out;
}

}  // namespace midnet::autodiff
