#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "midnet/autodiff.hpp"
#include "midnet/network.hpp"
#include "midnet/octree_batch.hpp"
#include "midnet/rng.hpp"
#include "midnet/tensor.hpp"

namespace midnet::gradcheck {

struct CheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int checked = 0;          // coordinates probed
  double kink_margin = 0.0; // smallest relu/maxpool margin seen on the analytic pass
  bool near_kink = false;   // margin too small for the probe step to be trusted
};

// |a - n| over max(|a|, |n|), floored so zero gradients compare cleanly.
double relative_error(double analytic, double numeric);

// Builds a scalar loss from leaves the checker owns. Must be a pure function
// of the leaf values: the checker re-invokes it on perturbed copies.
using BuildFn = std::function<autodiff::Node<double>*(
    autodiff::Tape<double>&, const std::vector<autodiff::Node<double>*>&)>;

// Central-difference check of d(loss)/d(leaf) for every leaf. Probes all
// coordinates unless max_coords_per_leaf caps them (then `rng` picks which).
// When the analytic pass comes within 4*eps of a relu/maxpool kink the result
// is flagged near_kink and the caller should rebuild with fresh inputs.
CheckResult check_gradients(const BuildFn& build, std::vector<MatD> leaves, double eps = 1e-5,
                            int max_coords_per_leaf = -1, Rng* rng = nullptr);

// Scalar loss on top of a forward pass, e.g. mean of the shape features.
using NetLossFn = std::function<autodiff::Node<double>*(
    autodiff::Tape<double>&, const network::ForwardResult<double>&)>;

// Same idea for a whole backbone: analytic gradients via collect_gradients,
// numeric ones by nudging parameter coordinates and re-running the forward
// pass. Checks `coords_per_param` random coordinates of every parameter.
CheckResult check_network_gradients(network::Backbone<double>& net,
                                    const octree::OctreeBatch& batch, bool training,
                                    const NetLossFn& loss_fn, int coords_per_param,
                                    std::uint64_t seed, double eps = 1e-5);

struct SuiteEntry {
  std::string name;
  CheckResult result;
  bool pass = false;
};

// Finite-difference coverage of every tape op, the octree ops on real batched
// trees, full forward graphs (both fusion layouts, train and eval modes), and
// the complete two-level discrimination loss. Draws that land near a kink are
// retried with fresh seeds before they can fail an entry.
std::vector<SuiteEntry> run_suite(std::uint64_t seed = 7, double tolerance = 1e-4);

}  // namespace midnet::gradcheck
