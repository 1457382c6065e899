#include "midnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "midnet/datagen.hpp"
#include "midnet/errors.hpp"
#include "midnet/midloss.hpp"

namespace midnet::gradcheck {

using autodiff::Node;
using autodiff::Tape;

double relative_error(double analytic, double numeric) {
  // The floor keeps central-difference rounding noise on true-zero gradients
  // (dead relu units) from registering as error.
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

namespace {

// Distinct flat coordinate indices; all of them when k doesn't bind.
std::vector<Eigen::Index> pick_coords(Eigen::Index total, int k, Rng* rng) {
  std::vector<Eigen::Index> out;
  if (k < 0 || static_cast<Eigen::Index>(k) >= total || rng == nullptr) {
    out.resize(static_cast<size_t>(total));
    for (Eigen::Index i = 0; i < total; ++i) out[static_cast<size_t>(i)] = i;
    return out;
  }
  std::set<Eigen::Index> seen;
  while (static_cast<int>(seen.size()) < k)
    seen.insert(static_cast<Eigen::Index>(rng->uniform_int(static_cast<int>(total))));
  out.assign(seen.begin(), seen.end());
  return out;
}

}  // namespace

CheckResult check_gradients(const BuildFn& build, std::vector<MatD> leaves, double eps,
                            int max_coords_per_leaf, Rng* rng) {
  if (leaves.empty()) throw EmptyInput("check_gradients: no leaves");

  CheckResult res;

  std::vector<MatD> analytic(leaves.size());
  {
    Tape<double> tape;
    std::vector<Node<double>*> nodes;
    nodes.reserve(leaves.size());
    for (const auto& m : leaves) nodes.push_back(tape.leaf(m, true));
    Node<double>* loss = build(tape, nodes);
    tape.backward(loss);
    res.kink_margin = tape.kink_margin();
    res.near_kink = res.kink_margin <= 4.0 * eps;
    for (size_t i = 0; i < nodes.size(); ++i)
      analytic[i] = nodes[i]->grad.size() != 0
                        ? nodes[i]->grad
                        : MatD::Zero(leaves[i].rows(), leaves[i].cols());
  }
  if (res.near_kink) return res;

  auto eval = [&](const std::vector<MatD>& values) {
    Tape<double> tape;
    std::vector<Node<double>*> nodes;
    nodes.reserve(values.size());
    for (const auto& m : values) nodes.push_back(tape.leaf(m, false));
    Node<double>* loss = build(tape, nodes);
    if (loss->value.rows() != 1 || loss->value.cols() != 1)
      throw NonScalarLoss("check_gradients: build must return a 1x1 node");
    // Probes that land across (or hard against) a kink would silently corrupt
    // the estimate even when the unperturbed margin looked safe.
    if (tape.kink_margin() <= 2.0 * eps) res.near_kink = true;
    return loss->value(0, 0);
  };

  for (size_t li = 0; li < leaves.size(); ++li) {
    const Eigen::Index total = leaves[li].size();
    for (Eigen::Index flat : pick_coords(total, max_coords_per_leaf, rng)) {
      const Eigen::Index r = flat / leaves[li].cols();
      const Eigen::Index c = flat % leaves[li].cols();
      const double saved = leaves[li](r, c);

      leaves[li](r, c) = saved + eps;
      const double lp = eval(leaves);
      leaves[li](r, c) = saved - eps;
      const double lm = eval(leaves);
      leaves[li](r, c) = saved;
      if (res.near_kink) return res;

      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = analytic[li](r, c);
      res.max_rel_err = std::max(res.max_rel_err, relative_error(a, numeric));
      res.max_abs_err = std::max(res.max_abs_err, std::abs(a - numeric));
      ++res.checked;
    }
  }
  return res;
}

CheckResult check_network_gradients(network::Backbone<double>& net,
                                    const octree::OctreeBatch& batch, bool training,
                                    const NetLossFn& loss_fn, int coords_per_param,
                                    std::uint64_t seed, double eps) {
  CheckResult res;
  Rng rng(seed);

  // Training-mode forwards fold batch statistics into the running ones; keep
  // copies so the FD probes all see the state the analytic pass saw.
  std::vector<std::pair<MatD, MatD>> bn_saved;
  auto bn = net.bn_states();
  for (auto& [name, state] : bn) bn_saved.emplace_back(state->running_mean, state->running_var);
  auto restore_bn = [&]() {
    for (size_t i = 0; i < bn.size(); ++i) {
      bn[i].second->running_mean = bn_saved[i].first;
      bn[i].second->running_var = bn_saved[i].second;
    }
  };

  {
    Tape<double> tape;
    auto fwd = net.forward(tape, batch, training, true);
    Node<double>* loss = loss_fn(tape, fwd);
    tape.backward(loss);
    res.kink_margin = tape.kink_margin();
    res.near_kink = res.kink_margin <= 4.0 * eps;
    net.collect_gradients();
  }
  restore_bn();
  if (res.near_kink) return res;

  auto eval = [&]() {
    Tape<double> tape;
    auto fwd = net.forward(tape, batch, training, false);
    Node<double>* loss = loss_fn(tape, fwd);
    // An activation this close to a kink after an eps-probe means the probe
    // moved it much further than eps — some path amplifies perturbations, so
    // the unperturbed margin gate can't be trusted for this draw.
    if (tape.kink_margin() <= 2.0 * eps) res.near_kink = true;
    const double v = loss->value(0, 0);
    restore_bn();
    return v;
  };

  for (network::Parameter<double>* p : net.parameters()) {
    const Eigen::Index total = p->value.size();
    for (Eigen::Index flat : pick_coords(total, coords_per_param, &rng)) {
      const Eigen::Index r = flat / p->value.cols();
      const Eigen::Index c = flat % p->value.cols();
      const double saved = p->value(r, c);

      p->value(r, c) = saved + eps;
      const double lp = eval();
      p->value(r, c) = saved - eps;
      const double lm = eval();
      p->value(r, c) = saved;
      if (res.near_kink) return res;

      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = p->grad.size() != 0 ? p->grad(r, c) : 0.0;
      res.max_rel_err = std::max(res.max_rel_err, relative_error(a, numeric));
      res.max_abs_err = std::max(res.max_abs_err, std::abs(a - numeric));
      ++res.checked;
    }
  }
  return res;
}

namespace {

MatD randn(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  MatD m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

// Most checks are kink-free, but anything through a relu or maxpool can land
// too close to the hinge for the probe step; redraw and try again.
CheckResult with_retries(const std::function<CheckResult(std::uint64_t)>& run,
                         std::uint64_t seed) {
  CheckResult res;
  for (int attempt = 0; attempt < 6; ++attempt) {
    res = run(seed + 1000ull * static_cast<std::uint64_t>(attempt));
    if (!res.near_kink) return res;
  }
  return res;
}

// Two small shapes, preprocessed the way the training pipeline would.
octree::OctreeBatch make_check_batch(std::uint64_t seed, int depth, int patches) {
  datagen::ShapeSpec sphere;
  sphere.kind = "sphere";
  sphere.points = 256;
  sphere.seed = seed;
  datagen::ShapeSpec box;
  box.kind = "box";
  box.points = 256;
  box.seed = seed + 1;

  std::vector<geometry::PointCloud> clouds;
  for (const auto& spec : {sphere, box}) {
    geometry::PointCloud c = geometry::normalize_unit_sphere(datagen::make_shape(spec));
    if (patches > 0) c = geometry::kmeans_patches(c, patches, seed + 2);
    clouds.push_back(geometry::scale_points(c, 0.59));
  }
  return octree::OctreeBatch(std::move(clouds), depth);
}

network::NetConfig tiny_net_config(std::uint64_t seed, network::FusionMode mode) {
  network::NetConfig cfg;
  cfg.depth = 3;
  cfg.channels = {6, 8};
  cfg.stages = 1;
  cfg.blocks_per_stage = 1;
  cfg.shape_feature_dim = 8;
  cfg.point_feature_dim = 8;
  cfg.fusion_mode = mode;
  cfg.init_seed = seed;
  return cfg;
}

}  // namespace

std::vector<SuiteEntry> run_suite(std::uint64_t seed, double tolerance) {
  using autodiff::BnState;
  std::vector<SuiteEntry> out;

  auto entry = [&](const std::string& name, const CheckResult& r) {
    out.push_back({name, r, !r.near_kink && r.checked > 0 && r.max_rel_err < tolerance});
  };

  auto simple = [&](const std::string& name,
                    const std::function<std::vector<MatD>(Rng&)>& draw, const BuildFn& build) {
    entry(name, with_retries(
                    [&](std::uint64_t s) {
                      Rng rng(s);
                      std::vector<MatD> leaves = draw(rng);
                      Rng pick(s ^ 0x9e3779b97f4a7c15ull);
                      return check_gradients(build, std::move(leaves), 1e-5, -1, &pick);
                    },
                    seed));
  };

  using NodeVec = std::vector<autodiff::Node<double>*>;
  using Tp = autodiff::Tape<double>;

  simple(
      "add_scale", [](Rng& rng) { return std::vector<MatD>{randn(3, 4, rng), randn(3, 4, rng)}; },
      [](Tp& t, const NodeVec& L) {
        return autodiff::sum_all(t, autodiff::scale(t, autodiff::add(t, L[0], L[1]), 1.75));
      });

  simple(
      "relu", [](Rng& rng) { return std::vector<MatD>{randn(4, 5, rng)}; },
      [](Tp& t, const NodeVec& L) { return autodiff::sum_all(t, autodiff::relu(t, L[0])); });

  simple(
      "linear",
      [](Rng& rng) {
        return std::vector<MatD>{randn(5, 4, rng), randn(4, 3, rng), randn(1, 3, rng)};
      },
      [](Tp& t, const NodeVec& L) {
        return autodiff::mean_all(t, autodiff::linear(t, L[0], L[1], L[2]));
      });

  {
    Rng mrng(seed ^ 0xabcdull);
    const MatD m = randn(3, 6, mrng);
    simple(
        "matmul_const", [](Rng& rng) { return std::vector<MatD>{randn(4, 3, rng)}; },
        [m](Tp& t, const NodeVec& L) {
          return autodiff::mean_all(t, autodiff::matmul_const(t, L[0], m));
        });
  }

  simple(
      "concat_cols",
      [](Rng& rng) { return std::vector<MatD>{randn(3, 2, rng), randn(3, 4, rng)}; },
      [](Tp& t, const NodeVec& L) {
        return autodiff::mean_all(t, autodiff::concat_cols(t, {L[0], L[1]}));
      });

  simple(
      "stack_rows",
      [](Rng& rng) { return std::vector<MatD>{randn(2, 3, rng), randn(4, 3, rng)}; },
      [](Tp& t, const NodeVec& L) {
        return autodiff::mean_all(t, autodiff::stack_rows(t, {L[0], L[1]}));
      });

  simple(
      "slice_rows", [](Rng& rng) { return std::vector<MatD>{randn(6, 3, rng)}; },
      [](Tp& t, const NodeVec& L) {
        return autodiff::mean_all(t, autodiff::slice_rows(t, L[0], 1, 4));
      });

  simple(
      "gather_rows", [](Rng& rng) { return std::vector<MatD>{randn(5, 3, rng)}; },
      [](Tp& t, const NodeVec& L) {
        return autodiff::mean_all(
            t, autodiff::gather_rows(t, L[0], std::vector<int32_t>{4, 0, 2, 2, 4}));
      });

  simple(
      "mean_all", [](Rng& rng) { return std::vector<MatD>{randn(3, 7, rng)}; },
      [](Tp& t, const NodeVec& L) { return autodiff::mean_all(t, L[0]); });

  simple(
      "sum_all", [](Rng& rng) { return std::vector<MatD>{randn(3, 7, rng)}; },
      [](Tp& t, const NodeVec& L) { return autodiff::sum_all(t, L[0]); });

  {
    Rng mrng(seed ^ 0xbe77ull);
    const MatD m = randn(6, 2, mrng);
    simple(
        "l2_normalize_rows", [](Rng& rng) { return std::vector<MatD>{randn(4, 6, rng)}; },
        [m](Tp& t, const NodeVec& L) {
          return autodiff::sum_all(t, autodiff::matmul_const(t, autodiff::l2_normalize_rows(t, L[0]), m));
        });
  }

  auto bn_leaves = [](Rng& rng) {
    return std::vector<MatD>{randn(8, 4, rng), MatD::Ones(1, 4) + 0.3 * randn(1, 4, rng),
                             randn(1, 4, rng)};
  };
  {
    Rng mrng(seed ^ 0xb117ull);
    const MatD m = randn(4, 2, mrng);
    simple("batchnorm_train", bn_leaves, [m](Tp& t, const NodeVec& L) {
      BnState<double> state;
      state.init(4);
      autodiff::Node<double>* y = autodiff::batchnorm(t, L[0], L[1], L[2], &state, true);
      // Slice before reducing: a plain column sum of normalized activations
      // is constant in the input, which would make this check vacuous.
      return autodiff::sum_all(t, autodiff::matmul_const(t, autodiff::slice_rows(t, y, 0, 5), m));
    });

    Rng srng(seed ^ 0x5717ull);
    const MatD rmean = randn(1, 4, srng);
    const MatD rvar = MatD::Ones(1, 4) + 0.5 * randn(1, 4, srng).cwiseAbs();
    simple("batchnorm_eval", bn_leaves, [m, rmean, rvar](Tp& t, const NodeVec& L) {
      BnState<double> state;
      state.init(4);
      state.running_mean = rmean;
      state.running_var = rvar;
      autodiff::Node<double>* y = autodiff::batchnorm(t, L[0], L[1], L[2], &state, false);
      return autodiff::sum_all(t, autodiff::matmul_const(t, y, m));
    });
  }

  simple(
      "softmax_cross_entropy", [](Rng& rng) { return std::vector<MatD>{randn(6, 5, rng)}; },
      [](Tp& t, const NodeVec& L) {
        return autodiff::mean_all(
            t, autodiff::softmax_cross_entropy(t, L[0], std::vector<int>{0, 3, 2, 4, 1, 0}));
      });

  // --- octree ops against real batched trees --------------------------------

  const int depth = 3;
  auto octree_check = [&](const std::string& name,
                          const std::function<std::vector<MatD>(const octree::OctreeBatch&, Rng&)>&
                              draw,
                          const std::function<autodiff::Node<double>*(
                              Tp&, const NodeVec&, const octree::OctreeBatch&)>& build) {
    entry(name, with_retries(
                    [&](std::uint64_t s) {
                      octree::OctreeBatch batch = make_check_batch(s, depth, 0);
                      Rng rng(s ^ 0xfeedull);
                      std::vector<MatD> leaves = draw(batch, rng);
                      Rng pick(s ^ 0x51c3ull);
                      return check_gradients(
                          [&](Tp& t, const NodeVec& L) { return build(t, L, batch); },
                          std::move(leaves), 1e-5, 200, &pick);
                    },
                    seed));
  };

  octree_check(
      "octree_conv",
      [](const octree::OctreeBatch& b, Rng& rng) {
        return std::vector<MatD>{randn(b.rows(3), 3, rng), randn(27 * 3, 4, rng),
                                 randn(1, 4, rng)};
      },
      [](Tp& t, const NodeVec& L, const octree::OctreeBatch& b) {
        return autodiff::mean_all(t,
                                  autodiff::octree_conv(t, L[0], L[1], L[2], b.conv_gather(3)));
      });

  octree_check(
      "octree_maxpool",
      [](const octree::OctreeBatch& b, Rng& rng) {
        return std::vector<MatD>{randn(b.rows(3), 3, rng)};
      },
      [](Tp& t, const NodeVec& L, const octree::OctreeBatch& b) {
        return autodiff::mean_all(t, autodiff::octree_maxpool(t, L[0], b.pool_children(3)));
      });

  octree_check(
      "octree_upsample_nearest",
      [](const octree::OctreeBatch& b, Rng& rng) {
        return std::vector<MatD>{randn(b.rows(2), 3, rng)};
      },
      [](Tp& t, const NodeVec& L, const octree::OctreeBatch& b) {
        return autodiff::mean_all(t, autodiff::octree_upsample_nearest(t, L[0], b.parent_of(3)));
      });

  octree_check(
      "octree_upsample_trilinear",
      [](const octree::OctreeBatch& b, Rng& rng) {
        return std::vector<MatD>{randn(b.rows(2), 3, rng)};
      },
      [](Tp& t, const NodeVec& L, const octree::OctreeBatch& b) {
        return autodiff::mean_all(t, autodiff::octree_upsample_trilinear(t, L[0], b.trilinear(3)));
      });

  octree_check(
      "global_avg_pool",
      [](const octree::OctreeBatch& b, Rng& rng) {
        return std::vector<MatD>{randn(b.rows(3), 4, rng)};
      },
      [](Tp& t, const NodeVec& L, const octree::OctreeBatch& b) {
        return autodiff::mean_all(t, autodiff::global_avg_pool(t, L[0], b.segments(3)));
      });

  // --- full graphs -----------------------------------------------------------

  auto feature_loss = [](Tp& t, const network::ForwardResult<double>& fwd) {
    return autodiff::add(t, autodiff::mean_all(t, fwd.shape_features),
                         autodiff::mean_all(t, fwd.point_features));
  };

  auto net_check = [&](const std::string& name, network::FusionMode mode, bool training) {
    entry(name, with_retries(
                    [&](std::uint64_t s) {
                      octree::OctreeBatch batch = make_check_batch(s, depth, 0);
                      network::Backbone<double> net(tiny_net_config(s, mode));
                      // Freshly initialized running statistics (mean 0, var 1)
                      // leave eval-mode activations unnormalized and crowded
                      // around the relu kink; converge them onto the batch
                      // statistics first, as any trained checkpoint would have.
                      if (!training)
                        for (int warm = 0; warm < 30; ++warm) {
                          autodiff::Tape<double> t;
                          net.forward(t, batch, /*training=*/true, /*with_grad=*/false);
                        }
                      return check_network_gradients(net, batch, training, feature_loss, 2,
                                                     s ^ 0xc0deull);
                    },
                    seed));
  };

  net_check("backbone_parallel_train", network::FusionMode::kFull, true);
  net_check("backbone_unet_train", network::FusionMode::kUnet, true);
  net_check("backbone_eval", network::FusionMode::kFull, false);

  entry("mid_loss_graph",
        with_retries(
            [&](std::uint64_t s) {
              const int patches = 5;
              octree::OctreeBatch batch = make_check_batch(s, depth, patches);
              network::Backbone<double> net(
                  tiny_net_config(s, network::FusionMode::kFull));

              std::vector<int> shape_ids = {0, 1};
              std::vector<std::vector<int>> patch_ids;
              for (int t = 0; t < batch.size(); ++t) patch_ids.push_back(batch.cloud(t).patch_ids);
              midloss::ShapeBank<double> sbank = midloss::ShapeBank<double>::random(2, 8, s + 11);
              midloss::PatchBanks<double> pbanks =
                  midloss::PatchBanks<double>::random(2, patches, 8, s + 12);
              midloss::MidLossConfig lcfg;

              auto loss = [&](Tp& t, const network::ForwardResult<double>& fwd) {
                return midloss::mid_loss(t, fwd.shape_features, fwd.point_features, shape_ids,
                                         batch.point_segments(), patch_ids, sbank, pbanks, lcfg)
                    .total;
              };
              // The 1/temperature logit scaling amplifies roundoff in the
              // difference quotient; a slightly larger step keeps the check
              // truncation-limited instead.
              return check_network_gradients(net, batch, true, loss, 2, s ^ 0x10e5ull, 2e-5);
            },
            seed));

  return out;
}

}  // namespace midnet::gradcheck
