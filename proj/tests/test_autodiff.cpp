#include <cmath>

#include "doctest.h"
#include "midnet/autodiff.hpp"
#include "midnet/gradcheck.hpp"
#include "midnet/rng.hpp"
#include "midnet/tensor.hpp"

using namespace midnet;
using autodiff::BnState;
using autodiff::Node;
using autodiff::Tape;

namespace {

MatD mat(std::initializer_list<std::initializer_list<double>> rows) {
  MatD m(static_cast<Eigen::Index>(rows.size()),
         static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

MatD randn(Eigen::Index r, Eigen::Index c, Rng& rng) {
  MatD m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("add and scale forward and backward") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{1, 2}, {3, 4}}));
  Node<double>* y = t.leaf(mat({{10, 20}, {30, 40}}));
  Node<double>* z = autodiff::scale(t, autodiff::add(t, x, y), 3.0);
  CHECK(z->value == mat({{33, 66}, {99, 132}}));

  Node<double>* loss = autodiff::sum_all(t, z);
  t.backward(loss);
  CHECK(x->grad == mat({{3, 3}, {3, 3}}));
  CHECK(y->grad == mat({{3, 3}, {3, 3}}));
}

TEST_CASE("relu masks and routes gradient, tracking its margin") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{-1.0, 0.25}, {2.0, -0.5}}));
  Node<double>* y = autodiff::relu(t, x);
  CHECK(y->value == mat({{0, 0.25}, {2, 0}}));
  CHECK(t.kink_margin() == 0.25);

  t.backward(autodiff::sum_all(t, y));
  CHECK(x->grad == mat({{0, 1}, {1, 0}}));
}

TEST_CASE("relu ignores exact zeros when noting the margin") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{0.0, 0.5}, {-2.0, 0.0}}));
  autodiff::relu(t, x);
  CHECK(t.kink_margin() == 0.5);
}

TEST_CASE("linear matches hand computation") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{1, 2}, {3, 4}}));
  Node<double>* w = t.leaf(mat({{1, 0, 2}, {0, 1, 1}}));
  Node<double>* b = t.leaf(mat({{0.5, -0.5, 0}}));
  Node<double>* y = autodiff::linear(t, x, w, b);
  CHECK(y->value == mat({{1.5, 1.5, 4}, {3.5, 3.5, 10}}));

  t.backward(autodiff::sum_all(t, y));
  // dx = ones * W^T, dW = x^T * ones, db = column sums of ones
  CHECK(x->grad == mat({{3, 2}, {3, 2}}));
  CHECK(w->grad == mat({{4, 4, 4}, {6, 6, 6}}));
  CHECK(b->grad == mat({{2, 2, 2}}));

  Tape<double> t2;
  CHECK_THROWS_AS(
      autodiff::linear(t2, t2.leaf(mat({{1, 2, 3}})), t2.leaf(mat({{1}, {2}}))),
      ShapeMismatch);
}

TEST_CASE("gather rows accumulates over duplicates") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{1}, {2}, {3}}));
  Node<double>* y = autodiff::gather_rows(t, x, {0, 0, 1});
  CHECK(y->value == mat({{1}, {1}, {2}}));
  t.backward(autodiff::sum_all(t, y));
  CHECK(x->grad == mat({{2}, {1}, {0}}));
}

TEST_CASE("slice, concat, stack move values and gradients in place") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{1, 2}, {3, 4}, {5, 6}}));
  Node<double>* s = autodiff::slice_rows(t, x, 1, 2);
  CHECK(s->value == mat({{3, 4}, {5, 6}}));

  Node<double>* a = t.leaf(mat({{1}, {2}}));
  Node<double>* b = t.leaf(mat({{10, 20}, {30, 40}}));
  Node<double>* cc = autodiff::concat_cols(t, {a, b});
  CHECK(cc->value == mat({{1, 10, 20}, {2, 30, 40}}));

  Node<double>* st = autodiff::stack_rows(t, {a, a});
  CHECK(st->rows() == 4);

  Node<double>* loss =
      autodiff::add(t, autodiff::sum_all(t, s),
                    autodiff::add(t, autodiff::sum_all(t, cc),
                                  autodiff::scale(t, autodiff::sum_all(t, st), 10.0)));
  t.backward(loss);
  CHECK(x->grad == mat({{0, 0}, {1, 1}, {1, 1}}));
  CHECK(a->grad == mat({{21}, {21}}));  // 1 from concat + 2 stacked copies * 10
  CHECK(b->grad == mat({{1, 1}, {1, 1}}));
}

TEST_CASE("mean and sum reduce to scalars") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{1, 2}, {3, 6}}));
  CHECK(autodiff::mean_all(t, x)->value(0, 0) == 3.0);
  CHECK(autodiff::sum_all(t, x)->value(0, 0) == 12.0);
  t.backward(autodiff::mean_all(t, x));
  CHECK(x->grad == mat({{0.25, 0.25}, {0.25, 0.25}}));
}

TEST_CASE("l2 normalization projects the gradient") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{3, 4}}));
  Node<double>* y = autodiff::l2_normalize_rows(t, x);
  CHECK(y->value(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y->value(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  t.backward(autodiff::sum_all(t, y));
  // (I - uu^T) 1 / |x|
  CHECK(x->grad(0, 0) == doctest::Approx(0.032).epsilon(1e-12));
  CHECK(x->grad(0, 1) == doctest::Approx(-0.024).epsilon(1e-12));

  Tape<double> t2;
  Node<double>* z = t2.leaf(mat({{0, 0}}));
  CHECK_THROWS_AS(autodiff::l2_normalize_rows(t2, z), ZeroVector);
}

TEST_CASE("softmax cross entropy values and gradient") {
  Tape<double> t;
  Node<double>* logits = t.leaf(mat({{0, 0, 0}, {1, 2, 3}}));
  Node<double>* ce = autodiff::softmax_cross_entropy(t, logits, {0, 2});
  CHECK(ce->value(0, 0) == doctest::Approx(1.0986122886681098).epsilon(1e-12));
  CHECK(ce->value(1, 0) == doctest::Approx(0.40760596444438013).epsilon(1e-12));

  t.backward(autodiff::sum_all(t, ce));
  // grad = softmax - onehot
  CHECK(logits->grad(0, 0) == doctest::Approx(1.0 / 3 - 1).epsilon(1e-12));
  CHECK(logits->grad(0, 1) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(logits->grad(1, 2) == doctest::Approx(0.6652409557748219 - 1).epsilon(1e-12));

  Tape<double> t2;
  CHECK_THROWS_AS(
      autodiff::softmax_cross_entropy(t2, t2.leaf(mat({{0.0, 1.0}})), {2}),
      IndexOutOfRange);
}

TEST_CASE("batchnorm normalizes in train mode and freezes in eval mode") {
  Rng rng(3);
  MatD x = randn(16, 3, rng);
  MatD gamma = mat({{1.5, 0.5, 2.0}});
  MatD beta = mat({{0.1, -0.2, 0.0}});

  Tape<double> t;
  BnState<double> state;
  state.init(3);
  Node<double>* xn = t.leaf(x);
  Node<double>* y = autodiff::batchnorm(t, xn, t.leaf(gamma), t.leaf(beta), &state, true);

  for (int c = 0; c < 3; ++c) {
    double mean = y->value.col(c).mean();
    double var = (y->value.col(c).array() - mean).square().mean();
    CHECK(mean == doctest::Approx(beta(0, c)).epsilon(1e-9));
    CHECK(std::sqrt(var) == doctest::Approx(std::abs(gamma(0, c))).epsilon(1e-4));
  }
  // running statistics blend toward the batch
  MatD bmean = x.colwise().mean();
  for (int c = 0; c < 3; ++c)
    CHECK(state.running_mean(0, c) == doctest::Approx(0.1 * bmean(0, c)).epsilon(1e-12));

  // eval mode: per-element affine map using the stored statistics
  BnState<double> st2;
  st2.init(3);
  st2.running_mean = mat({{1.0, -1.0, 0.5}});
  st2.running_var = mat({{4.0, 1.0, 0.25}});
  Tape<double> t2;
  Node<double>* y2 = autodiff::batchnorm(t2, t2.leaf(x), t2.leaf(gamma), t2.leaf(beta), &st2,
                                         false);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c) {
      double expect = gamma(0, c) * (x(r, c) - st2.running_mean(0, c)) /
                          std::sqrt(st2.running_var(0, c) + 1e-5) +
                      beta(0, c);
      CHECK(y2->value(r, c) == doctest::Approx(expect).epsilon(1e-12));
    }
  // eval mode leaves the state untouched
  CHECK(st2.running_mean == mat({{1.0, -1.0, 0.5}}));
}

TEST_CASE("maxpool picks children and routes gradient to the winners") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{1.0}, {5.0}, {3.0}, {4.0}}));
  PoolChildren children = {{0, 1, kEmptySlot, kEmptySlot, kEmptySlot, kEmptySlot, kEmptySlot,
                            kEmptySlot},
                           {2, 3, kEmptySlot, kEmptySlot, kEmptySlot, kEmptySlot, kEmptySlot,
                            kEmptySlot}};
  Node<double>* y = autodiff::octree_maxpool(t, x, children);
  CHECK(y->value == mat({{5.0}, {4.0}}));
  CHECK(t.kink_margin() == doctest::Approx(1.0));  // min(5-1, 4-3)

  t.backward(autodiff::sum_all(t, y));
  CHECK(x->grad == mat({{0}, {1}, {0}, {1}}));
}

TEST_CASE("maxpool skips exact ties when noting the margin") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{2.0}, {2.0}, {7.0}, {4.0}}));
  PoolChildren children = {{0, 1, kEmptySlot, kEmptySlot, kEmptySlot, kEmptySlot, kEmptySlot,
                            kEmptySlot},
                           {2, 3, kEmptySlot, kEmptySlot, kEmptySlot, kEmptySlot, kEmptySlot,
                            kEmptySlot}};
  autodiff::octree_maxpool(t, x, children);
  CHECK(t.kink_margin() == doctest::Approx(3.0));
}

TEST_CASE("upsampling copies parents and interpolates") {
  Tape<double> t;
  Node<double>* coarse = t.leaf(mat({{1.0, 10.0}, {2.0, 20.0}}));
  ParentIndex parent = {0, 0, 1};
  Node<double>* up = autodiff::octree_upsample_nearest(t, coarse, parent);
  CHECK(up->value == mat({{1, 10}, {1, 10}, {2, 20}}));
  t.backward(autodiff::sum_all(t, up));
  CHECK(coarse->grad == mat({{2, 2}, {1, 1}}));

  Tape<double> t2;
  Node<double>* c2 = t2.leaf(mat({{1.0}, {3.0}}));
  TrilinearTable table;
  table.index = {{0, 1, kEmptySlot, kEmptySlot, kEmptySlot, kEmptySlot, kEmptySlot, kEmptySlot}};
  table.weight = {{0.421875, 0.140625, 0, 0, 0, 0, 0, 0}};
  Node<double>* y = autodiff::octree_upsample_trilinear(t2, c2, table);
  CHECK(y->value(0, 0) == doctest::Approx(0.421875 * 1 + 0.140625 * 3).epsilon(1e-15));
  t2.backward(autodiff::sum_all(t2, y));
  CHECK(c2->grad(0, 0) == doctest::Approx(0.421875).epsilon(1e-15));
  CHECK(c2->grad(1, 0) == doctest::Approx(0.140625).epsilon(1e-15));
}

TEST_CASE("global average pool over segments") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{1.0}, {3.0}, {5.0}}));
  RowSegments segs = {{0, 2}, {2, 3}};
  Node<double>* y = autodiff::global_avg_pool(t, x, segs);
  CHECK(y->value == mat({{2.0}, {5.0}}));
  t.backward(autodiff::sum_all(t, y));
  CHECK(x->grad == mat({{0.5}, {0.5}, {1.0}}));
}

TEST_CASE("octree conv gathers neighbors with empty slots as zeros") {
  // two octants, each seeing only itself and the other in one slot
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{1.0, 2.0}, {3.0, 4.0}}));
  ConvGather table(2);
  table[0].fill(kEmptySlot);
  table[1].fill(kEmptySlot);
  table[0][13] = 0;
  table[0][14] = 1;  // +x neighbor
  table[1][13] = 1;
  table[1][12] = 0;  // -x neighbor

  // weights: out = sum_slots x[slot] * w[slot block]; pick w so the answer is
  // readable: center block = identity, slot 14 block = 10 * identity.
  MatD w = MatD::Zero(27 * 2, 2);
  w.block(13 * 2, 0, 2, 2) = MatD::Identity(2, 2);
  w.block(14 * 2, 0, 2, 2) = 10 * MatD::Identity(2, 2);
  Node<double>* wn = t.leaf(w);
  Node<double>* y = autodiff::octree_conv(t, x, wn, table);
  CHECK(y->value == mat({{31.0, 42.0}, {3.0, 4.0}}));

  t.backward(autodiff::sum_all(t, y));
  // octant 0 contributes through its own center tap; octant 1 through its
  // center tap and octant 0's +x tap
  CHECK(x->grad == mat({{1.0, 1.0}, {11.0, 11.0}}));
}

TEST_CASE("finite differences agree on a composite smooth graph") {
  Rng rng(17);
  std::vector<MatD> leaves = {randn(5, 4, rng), randn(4, 3, rng), randn(1, 3, rng)};
  gradcheck::CheckResult r = gradcheck::check_gradients(
      [](Tape<double>& t, const std::vector<Node<double>*>& L) {
        Node<double>* h = autodiff::linear(t, L[0], L[1], L[2]);
        h = autodiff::l2_normalize_rows(t, h);
        return autodiff::mean_all(t, h);
      },
      leaves);
  CHECK(!r.near_kink);
  CHECK(r.checked == 35);
  CHECK(r.max_rel_err < 1e-7);
}

TEST_CASE("gradient checker rejects non-scalar losses and flags kinks") {
  std::vector<MatD> leaves = {mat({{1.0, 2.0}})};
  CHECK_THROWS_AS(
      gradcheck::check_gradients(
          [](Tape<double>& t, const std::vector<Node<double>*>& L) { return L[0]; }, leaves),
      NonScalarLoss);

  // an input within 4 eps of the relu kink must be reported, not checked
  std::vector<MatD> near = {mat({{1e-6, 2.0}})};
  gradcheck::CheckResult r = gradcheck::check_gradients(
      [](Tape<double>& t, const std::vector<Node<double>*>& L) {
        return autodiff::sum_all(t, autodiff::relu(t, L[0]));
      },
      near);
  CHECK(r.near_kink);
  CHECK(r.checked == 0);
}

TEST_CASE("backward accumulates once per node in a diamond") {
  Tape<double> t;
  Node<double>* x = t.leaf(mat({{2.0}}));
  Node<double>* a = autodiff::scale(t, x, 3.0);
  Node<double>* b = autodiff::scale(t, x, 5.0);
  Node<double>* y = autodiff::add(t, a, b);
  t.backward(autodiff::sum_all(t, y));
  CHECK(x->grad(0, 0) == 8.0);
}
