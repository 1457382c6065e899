#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "midnet/autodiff.hpp"
#include "midnet/config.hpp"
#include "midnet/errors.hpp"
#include "midnet/octree_batch.hpp"
#include "midnet/rng.hpp"
#include "midnet/tensor.hpp"

namespace midnet::network {

enum class FusionMode { kFull, kOneFusion, kNoFusion, kUnet };

FusionMode fusion_mode_from_string(const std::string& s);
std::string to_string(FusionMode m);

// Architecture of the multiresolution backbone. Branch b runs at octree
// level depth - b, so channels.front() is the finest resolution.
struct NetConfig {
  int depth = 6;
  std::vector<int> channels = {32, 64, 128};
  int stages = 2;            // fusion stages (parallel modes)
  int blocks_per_stage = 3;  // bottleneck blocks per branch per stage
  int shape_feature_dim = 128;
  int point_feature_dim = 64;
  FusionMode fusion_mode = FusionMode::kFull;
  uint64_t init_seed = 1;

  int branches() const { return static_cast<int>(channels.size()); }
  int level_of_branch(int b) const { return depth - b; }
  void validate() const;

  static NetConfig from_keyvalues(const config::KeyValues& kv);
  config::KeyValues to_keyvalues() const;
  uint64_t hash() const { return to_keyvalues().hash(); }
};

template <class T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;      // filled by Backbone::collect_gradients after backward()
  Mat<T> momentum;  // SGD velocity, owned here so checkpoints capture it
  bool no_decay = false;

  void ensure_momentum() {
    if (momentum.size() == 0) momentum = Mat<T>::Zero(value.rows(), value.cols());
  }
};

template <class T>
struct ForwardResult {
  autodiff::Node<T>* shape_features;  // batch x shape_feature_dim, unit rows
  autodiff::Node<T>* point_features;  // total points x point_feature_dim, unit rows
};

// The backbone: stem convolution at the finest level, parallel branches at
// progressively coarser levels exchanging features at fusion stages (or a
// U-shaped encoder/decoder), and two normalized feature heads.
template <class T>
class Backbone {
 public:
  explicit Backbone(NetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    build(rng);
  }

  const NetConfig& config() const { return cfg_; }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  Parameter<T>* find_parameter(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::vector<std::pair<std::string, autodiff::BnState<T>*>> bn_states() {
    std::vector<std::pair<std::string, autodiff::BnState<T>*>> out;
    for (size_t i = 0; i < bn_states_.size(); ++i) out.emplace_back(bn_names_[i], bn_states_[i].get());
    return out;
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  // Records the forward pass on the tape. `training` selects batch-vs-running
  // BN statistics (and updates the running state); `with_grad` controls
  // whether parameters enter as differentiable leaves.
  ForwardResult<T> forward(autodiff::Tape<T>& tape, const octree::OctreeBatch& batch,
                           bool training, bool with_grad = true) {
    if (batch.depth() != cfg_.depth)
      throw DepthMismatch("octree depth does not match network depth");
    bind(tape, with_grad);

    autodiff::Node<T>* signal = tape.constant(batch.signal_as<T>());
    autodiff::Node<T>* x = conv_bn_relu(tape, stem_, signal, cfg_.depth, batch, training);

    std::vector<autodiff::Node<T>*> outs =
        cfg_.fusion_mode == FusionMode::kUnet ? forward_unet(tape, x, batch, training)
                                              : forward_parallel(tape, x, batch, training);
    return heads(tape, outs, batch);
  }

  // Convenience eval pass: no gradients, no running-stat updates.
  std::pair<Mat<T>, Mat<T>> extract(const octree::OctreeBatch& batch) {
    autodiff::Tape<T> tape;
    ForwardResult<T> r = forward(tape, batch, /*training=*/false, /*with_grad=*/false);
    return {r.shape_features->value, r.point_features->value};
  }

  // Copies tape gradients back into Parameter::grad (zeros where untouched).
  void collect_gradients() {
    for (size_t i = 0; i < params_.size(); ++i) {
      autodiff::Node<T>* n = bound_[i];
      if (n && n->grad.size() != 0)
        params_[i]->grad = n->grad;
      else
        params_[i]->grad = Mat<T>::Zero(params_[i]->value.rows(), params_[i]->value.cols());
    }
  }

 private:
  struct ConvBn {
    Parameter<T>* w = nullptr;  // (taps * cin) x cout
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;
    autodiff::BnState<T>* bn = nullptr;
    int taps = 1;  // 1 = pointwise, 27 = full spatial stencil
  };
  struct Bottleneck {
    ConvBn reduce, spatial, expand;
  };
  struct Stage {
    std::vector<std::vector<Bottleneck>> blocks;   // [branch][block]
    std::map<std::pair<int, int>, ConvBn> fuse;    // (from, to) -> projection
    bool fused = false;
  };

  NetConfig cfg_;
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<std::unique_ptr<autodiff::BnState<T>>> bn_states_;
  std::vector<std::string> bn_names_;
  std::vector<autodiff::Node<T>*> bound_;  // leaf per parameter, this tape only

  ConvBn stem_;
  std::vector<ConvBn> inits_;   // branch/encoder level b reads inits_[b-1]
  std::vector<Stage> stages_;   // parallel modes
  std::vector<std::vector<Bottleneck>> enc_blocks_;  // unet
  std::vector<ConvBn> up_;                           // unet, dec level e reads up_[e]
  std::vector<std::vector<Bottleneck>> dec_blocks_;  // unet, index e in [0, B-2]
  Parameter<T>* shape_w_ = nullptr;
  Parameter<T>* shape_b_ = nullptr;
  Parameter<T>* point_w_ = nullptr;
  Parameter<T>* point_b_ = nullptr;

  Parameter<T>* add_param(const std::string& name, Mat<T> value, bool no_decay) {
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = std::move(value);
    p->no_decay = no_decay;
    params_.push_back(std::move(p));
    return params_.back().get();
  }

  ConvBn make_conv_bn(const std::string& name, int taps, int cin, int cout, Rng& rng) {
    ConvBn c;
    c.taps = taps;
    c.w = add_param(name + ".w", he_normal<T>(taps * cin, cout, taps * cin, rng), false);
    c.gamma = add_param(name + ".bn.gamma", Mat<T>::Ones(1, cout), true);
    c.beta = add_param(name + ".bn.beta", Mat<T>::Zero(1, cout), true);
    auto st = std::make_unique<autodiff::BnState<T>>();
    st->init(cout);
    c.bn = st.get();
    bn_states_.push_back(std::move(st));
    bn_names_.push_back(name + ".bn");
    return c;
  }

  Bottleneck make_bottleneck(const std::string& name, int channels, Rng& rng) {
    const int mid = std::max(1, channels / 4);
    Bottleneck b;
    b.reduce = make_conv_bn(name + ".reduce", 1, channels, mid, rng);
    b.spatial = make_conv_bn(name + ".spatial", 27, mid, mid, rng);
    b.expand = make_conv_bn(name + ".expand", 1, mid, channels, rng);
    return b;
  }

  void build(Rng& rng) {
    const int nb = cfg_.branches();
    stem_ = make_conv_bn("stem", 27, 4, cfg_.channels[0], rng);
    for (int b = 1; b < nb; ++b)
      inits_.push_back(make_conv_bn("init" + std::to_string(b), 1,
                                    cfg_.channels[static_cast<size_t>(b) - 1],
                                    cfg_.channels[static_cast<size_t>(b)], rng));
    if (cfg_.fusion_mode == FusionMode::kUnet) {
      for (int e = 0; e < nb; ++e) {
        std::vector<Bottleneck> blocks;
        for (int k = 0; k < cfg_.blocks_per_stage; ++k)
          blocks.push_back(make_bottleneck(
              "enc" + std::to_string(e) + ".k" + std::to_string(k),
              cfg_.channels[static_cast<size_t>(e)], rng));
        enc_blocks_.push_back(std::move(blocks));
      }
      up_.resize(static_cast<size_t>(std::max(0, nb - 1)));
      dec_blocks_.resize(static_cast<size_t>(std::max(0, nb - 1)));
      for (int e = nb - 2; e >= 0; --e) {
        up_[static_cast<size_t>(e)] =
            make_conv_bn("up" + std::to_string(e), 1, cfg_.channels[static_cast<size_t>(e) + 1],
                         cfg_.channels[static_cast<size_t>(e)], rng);
        std::vector<Bottleneck> blocks;
        for (int k = 0; k < cfg_.blocks_per_stage; ++k)
          blocks.push_back(make_bottleneck(
              "dec" + std::to_string(e) + ".k" + std::to_string(k),
              cfg_.channels[static_cast<size_t>(e)], rng));
        dec_blocks_[static_cast<size_t>(e)] = std::move(blocks);
      }
    } else {
      for (int s = 0; s < cfg_.stages; ++s) {
        Stage stage;
        stage.blocks.resize(static_cast<size_t>(nb));
        for (int b = 0; b < nb; ++b)
          for (int k = 0; k < cfg_.blocks_per_stage; ++k)
            stage.blocks[static_cast<size_t>(b)].push_back(make_bottleneck(
                "s" + std::to_string(s) + ".b" + std::to_string(b) + ".k" + std::to_string(k),
                cfg_.channels[static_cast<size_t>(b)], rng));
        stage.fused = cfg_.fusion_mode == FusionMode::kFull ||
                      (cfg_.fusion_mode == FusionMode::kOneFusion && s > 0);
        if (stage.fused && nb > 1)
          for (int from = 0; from < nb; ++from)
            for (int to = 0; to < nb; ++to) {
              if (from == to) continue;
              stage.fuse[{from, to}] = make_conv_bn(
                  "s" + std::to_string(s) + ".f" + std::to_string(from) + "to" + std::to_string(to),
                  1, cfg_.channels[static_cast<size_t>(from)],
                  cfg_.channels[static_cast<size_t>(to)], rng);
            }
        stages_.push_back(std::move(stage));
      }
    }
    int concat_dim = 0;
    for (int c : cfg_.channels) concat_dim += c;
    // Head biases start uniform in +-1/sqrt(fan_in) rather than zero: a relu-dead
    // input row then lands on the bias direction instead of the zero vector, so
    // the unit-norm guarantee on feature rows holds unconditionally.
    auto uniform_bias = [&rng](int fan_in, int dim) {
      Mat<T> b(1, dim);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Eigen::Index j = 0; j < dim; ++j) b(0, j) = static_cast<T>(rng.uniform(-bound, bound));
      return b;
    };
    shape_w_ = add_param("head.shape.w",
                         he_normal<T>(concat_dim, cfg_.shape_feature_dim, concat_dim, rng), false);
    shape_b_ = add_param("head.shape.b", uniform_bias(concat_dim, cfg_.shape_feature_dim), true);
    point_w_ = add_param(
        "head.point.w",
        he_normal<T>(cfg_.channels[0], cfg_.point_feature_dim, cfg_.channels[0], rng), false);
    point_b_ = add_param("head.point.b", uniform_bias(cfg_.channels[0], cfg_.point_feature_dim), true);
  }

  void bind(autodiff::Tape<T>& tape, bool with_grad) {
    bound_.assign(params_.size(), nullptr);
    for (size_t i = 0; i < params_.size(); ++i)
      bound_[i] = tape.leaf(params_[i]->value, with_grad);
  }

  autodiff::Node<T>* node_of(Parameter<T>* p) {
    for (size_t i = 0; i < params_.size(); ++i)
      if (params_[i].get() == p) return bound_[i];
    throw InvalidIndex("parameter not bound to tape");
  }

  autodiff::Node<T>* conv_bn(autodiff::Tape<T>& tape, const ConvBn& c, autodiff::Node<T>* x,
                             int level, const octree::OctreeBatch& batch, bool training) {
    autodiff::Node<T>* y;
    if (c.taps == 27)
      y = autodiff::octree_conv(tape, x, node_of(c.w), batch.conv_gather(level));
    else
      y = autodiff::linear(tape, x, node_of(c.w));
    return autodiff::batchnorm(tape, y, node_of(c.gamma), node_of(c.beta), c.bn, training);
  }

  autodiff::Node<T>* conv_bn_relu(autodiff::Tape<T>& tape, const ConvBn& c, autodiff::Node<T>* x,
                                  int level, const octree::OctreeBatch& batch, bool training) {
    return autodiff::relu(tape, conv_bn(tape, c, x, level, batch, training));
  }

  autodiff::Node<T>* run_bottleneck(autodiff::Tape<T>& tape, const Bottleneck& blk,
                                    autodiff::Node<T>* x, int level,
                                    const octree::OctreeBatch& batch, bool training) {
    autodiff::Node<T>* h = conv_bn_relu(tape, blk.reduce, x, level, batch, training);
    h = conv_bn_relu(tape, blk.spatial, h, level, batch, training);
    h = conv_bn(tape, blk.expand, h, level, batch, training);
    return autodiff::relu(tape, autodiff::add(tape, x, h));
  }

  // max-pools from `from_level` down to `to_level` (inclusive target)
  autodiff::Node<T>* pool_to(autodiff::Tape<T>& tape, autodiff::Node<T>* x, int from_level,
                             int to_level, const octree::OctreeBatch& batch) {
    for (int l = from_level; l > to_level; --l)
      x = autodiff::octree_maxpool(tape, x, batch.pool_children(l));
    return x;
  }

  autodiff::Node<T>* upsample_to(autodiff::Tape<T>& tape, autodiff::Node<T>* x, int from_level,
                                 int to_level, const octree::OctreeBatch& batch) {
    for (int l = from_level + 1; l <= to_level; ++l)
      x = autodiff::octree_upsample_trilinear(tape, x, batch.trilinear(l));
    return x;
  }

  std::vector<autodiff::Node<T>*> forward_parallel(autodiff::Tape<T>& tape,
                                                   autodiff::Node<T>* stem_out,
                                                   const octree::OctreeBatch& batch,
                                                   bool training) {
    const int nb = cfg_.branches();
    std::vector<autodiff::Node<T>*> x(static_cast<size_t>(nb));
    x[0] = stem_out;
    for (int b = 1; b < nb; ++b) {
      autodiff::Node<T>* pooled =
          pool_to(tape, x[static_cast<size_t>(b) - 1], cfg_.level_of_branch(b - 1),
                  cfg_.level_of_branch(b), batch);
      x[static_cast<size_t>(b)] = conv_bn_relu(tape, inits_[static_cast<size_t>(b) - 1], pooled,
                                               cfg_.level_of_branch(b), batch, training);
    }
    for (auto& stage : stages_) {
      for (int b = 0; b < nb; ++b)
        for (const auto& blk : stage.blocks[static_cast<size_t>(b)])
          x[static_cast<size_t>(b)] = run_bottleneck(tape, blk, x[static_cast<size_t>(b)],
                                                     cfg_.level_of_branch(b), batch, training);
      if (!stage.fused || nb == 1) continue;
      std::vector<autodiff::Node<T>*> fused(static_cast<size_t>(nb));
      for (int to = 0; to < nb; ++to) {
        autodiff::Node<T>* acc = x[static_cast<size_t>(to)];
        const int to_level = cfg_.level_of_branch(to);
        for (int from = 0; from < nb; ++from) {
          if (from == to) continue;
          const int from_level = cfg_.level_of_branch(from);
          autodiff::Node<T>* moved =
              from_level > to_level
                  ? pool_to(tape, x[static_cast<size_t>(from)], from_level, to_level, batch)
                  : upsample_to(tape, x[static_cast<size_t>(from)], from_level, to_level, batch);
          autodiff::Node<T>* proj =
              conv_bn(tape, stage.fuse.at({from, to}), moved, to_level, batch, training);
          acc = autodiff::add(tape, acc, proj);
        }
        fused[static_cast<size_t>(to)] = autodiff::relu(tape, acc);
      }
      x = std::move(fused);
    }
    return x;
  }

  std::vector<autodiff::Node<T>*> forward_unet(autodiff::Tape<T>& tape,
                                               autodiff::Node<T>* stem_out,
                                               const octree::OctreeBatch& batch, bool training) {
    const int nb = cfg_.branches();
    std::vector<autodiff::Node<T>*> enc(static_cast<size_t>(nb));
    for (int e = 0; e < nb; ++e) {
      autodiff::Node<T>* x;
      if (e == 0) {
        x = stem_out;
      } else {
        x = pool_to(tape, enc[static_cast<size_t>(e) - 1], cfg_.level_of_branch(e - 1),
                    cfg_.level_of_branch(e), batch);
        x = conv_bn_relu(tape, inits_[static_cast<size_t>(e) - 1], x, cfg_.level_of_branch(e),
                         batch, training);
      }
      for (const auto& blk : enc_blocks_[static_cast<size_t>(e)])
        x = run_bottleneck(tape, blk, x, cfg_.level_of_branch(e), batch, training);
      enc[static_cast<size_t>(e)] = x;
    }
    std::vector<autodiff::Node<T>*> out(static_cast<size_t>(nb));
    out[static_cast<size_t>(nb) - 1] = enc[static_cast<size_t>(nb) - 1];
    for (int e = nb - 2; e >= 0; --e) {
      const int level = cfg_.level_of_branch(e);
      autodiff::Node<T>* up = autodiff::octree_upsample_nearest(
          tape, out[static_cast<size_t>(e) + 1], batch.parent_of(level));
      autodiff::Node<T>* proj = conv_bn(tape, up_[static_cast<size_t>(e)], up, level, batch, training);
      autodiff::Node<T>* x =
          autodiff::relu(tape, autodiff::add(tape, proj, enc[static_cast<size_t>(e)]));
      for (const auto& blk : dec_blocks_[static_cast<size_t>(e)])
        x = run_bottleneck(tape, blk, x, level, batch, training);
      out[static_cast<size_t>(e)] = x;
    }
    return out;
  }

  ForwardResult<T> heads(autodiff::Tape<T>& tape, const std::vector<autodiff::Node<T>*>& outs,
                         const octree::OctreeBatch& batch) {
    std::vector<autodiff::Node<T>*> pooled;  // coarsest first
    for (int b = cfg_.branches() - 1; b >= 0; --b)
      pooled.push_back(autodiff::global_avg_pool(tape, outs[static_cast<size_t>(b)],
                                                 batch.segments(cfg_.level_of_branch(b))));
    autodiff::Node<T>* cat = autodiff::concat_cols(tape, pooled);
    autodiff::Node<T>* shape =
        autodiff::linear(tape, cat, node_of(shape_w_), node_of(shape_b_));
    shape = autodiff::l2_normalize_rows(tape, shape);

    autodiff::Node<T>* pt =
        autodiff::linear(tape, outs[0], node_of(point_w_), node_of(point_b_));
    pt = autodiff::l2_normalize_rows(tape, pt);
    pt = autodiff::gather_rows(tape, pt, batch.point_rows());
    return {shape, pt};
  }
};

}  // namespace midnet::network
