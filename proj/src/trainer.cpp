#include "midnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "midnet/checkpoint.hpp"
#include "midnet/errors.hpp"
#include "midnet/octree_batch.hpp"

namespace midnet::trainer {

using geometry::PointCloud;

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidConfig("batch_size must be positive");
  if (epochs < 1) throw InvalidConfig("epochs must be positive");
  if (lr <= 0.0) throw InvalidConfig("lr must be positive");
  if (lr_decay <= 0.0 || lr_decay > 1.0) throw InvalidConfig("lr_decay must be in (0, 1]");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidConfig("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw InvalidConfig("weight_decay must be non-negative");
  if (bank_momentum < 0.0 || bank_momentum > 1.0)
    throw InvalidConfig("bank_momentum must be in [0, 1]");
  if (shape_temperature <= 0.0 || patch_temperature <= 0.0)
    throw InvalidConfig("temperatures must be positive");
  if (patches_per_shape < 1) throw InvalidConfig("patches_per_shape must be positive");
  if (normals_knn < 3) throw InvalidConfig("normals_knn must be at least 3");
  for (double f : lr_milestone_fracs)
    if (f <= 0.0 || f >= 1.0) throw InvalidConfig("lr milestone fractions must be in (0, 1)");
  for (int m : lr_milestones)
    if (m < 0) throw InvalidConfig("lr milestones must be non-negative");
  augment.validate();
}

std::vector<int> TrainConfig::resolved_milestones() const {
  std::vector<int> out;
  if (!lr_milestone_fracs.empty()) {
    for (double f : lr_milestone_fracs)
      out.push_back(static_cast<int>(std::floor(f * static_cast<double>(epochs))));
  } else {
    out = lr_milestones;
  }
  std::sort(out.begin(), out.end());
  return out;
}

double TrainConfig::lr_at(int epoch) const {
  double v = lr;
  for (int m : resolved_milestones())
    if (epoch >= m) v *= lr_decay;
  return v;
}

TrainConfig TrainConfig::from_keyvalues(const config::KeyValues& kv) {
  TrainConfig c;
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.epochs = kv.get_int("epochs", c.epochs);
  c.lr = kv.get_double("lr", c.lr);
  c.lr_decay = kv.get_double("lr_decay", c.lr_decay);
  c.lr_milestones = kv.get_int_list("lr_milestones", c.lr_milestones);
  c.lr_milestone_fracs = kv.get_double_list("lr_milestone_fracs", c.lr_milestone_fracs);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.bank_momentum = kv.get_double("bank_momentum", c.bank_momentum);
  c.shape_temperature = kv.get_double("shape_temperature", c.shape_temperature);
  c.patch_temperature = kv.get_double("patch_temperature", c.patch_temperature);
  c.patches_per_shape = kv.get_int("patches_per_shape", c.patches_per_shape);
  c.normals_knn = kv.get_int("normals_knn", c.normals_knn);
  c.seed = kv.get_u64("seed", c.seed);
  c.checkpoint_every = kv.get_int("checkpoint_every", c.checkpoint_every);

  const std::string rot = kv.get_string("rotation", "upright");
  if (rot == "upright")
    c.augment.rotation_mode = geometry::RotationMode::kUprightAxisOnly;
  else if (rot == "so3")
    c.augment.rotation_mode = geometry::RotationMode::kFullSO3;
  else if (rot == "none")
    c.augment.rotation_mode = geometry::RotationMode::kNone;
  else
    throw InvalidConfig("rotation must be 'none', 'upright', or 'so3'");
  c.augment.up_axis = kv.get_int("up_axis", c.augment.up_axis);
  c.augment.translation_range = kv.get_double("translation", c.augment.translation_range);
  c.augment.scale_min = kv.get_double("scale_min", c.augment.scale_min);
  c.augment.scale_max = kv.get_double("scale_max", c.augment.scale_max);

  kv.check_all_consumed();
  c.validate();
  return c;
}

config::KeyValues TrainConfig::to_keyvalues() const {
  config::KeyValues kv;
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("epochs", std::to_string(epochs));
  kv.set("lr", config::format_double(lr));
  kv.set("lr_decay", config::format_double(lr_decay));
  std::string ms;
  for (size_t i = 0; i < lr_milestones.size(); ++i)
    ms += (i ? "," : "") + std::to_string(lr_milestones[i]);
  kv.set("lr_milestones", ms);
  if (!lr_milestone_fracs.empty()) {
    std::string fr;
    for (size_t i = 0; i < lr_milestone_fracs.size(); ++i)
      fr += (i ? "," : "") + config::format_double(lr_milestone_fracs[i]);
    kv.set("lr_milestone_fracs", fr);
  }
  kv.set("momentum", config::format_double(momentum));
  kv.set("weight_decay", config::format_double(weight_decay));
  kv.set("bank_momentum", config::format_double(bank_momentum));
  kv.set("shape_temperature", config::format_double(shape_temperature));
  kv.set("patch_temperature", config::format_double(patch_temperature));
  kv.set("patches_per_shape", std::to_string(patches_per_shape));
  kv.set("normals_knn", std::to_string(normals_knn));
  kv.set("seed", std::to_string(seed));
  kv.set("checkpoint_every", std::to_string(checkpoint_every));
  kv.set("rotation", augment.rotation_mode == geometry::RotationMode::kFullSO3      ? "so3"
                     : augment.rotation_mode == geometry::RotationMode::kNone ? "none"
                                                                              : "upright");
  kv.set("up_axis", std::to_string(augment.up_axis));
  kv.set("translation", config::format_double(augment.translation_range));
  kv.set("scale_min", config::format_double(augment.scale_min));
  kv.set("scale_max", config::format_double(augment.scale_max));
  return kv;
}

PretrainSet PretrainSet::prepare(const datagen::Dataset& dataset, const TrainConfig& cfg) {
  dataset.validate();
  PretrainSet set;
  set.patch_count = cfg.patches_per_shape;
  Rng rng(cfg.seed);
  Rng patch_rng = rng.fork(0x70617463686573ull);  // independent of the training stream
  set.shapes.reserve(dataset.items.size());
  for (const auto& item : dataset.items) {
    PointCloud c = geometry::normalize_unit_sphere(item.cloud);
    if (!c.has_normals()) c = geometry::estimate_normals_pca(c, cfg.normals_knn);
    c = geometry::kmeans_patches(c, cfg.patches_per_shape, patch_rng.next_u64());
    c.reset_point_ids();
    set.shapes.push_back(std::move(c));
  }
  return set;
}

void sgd_step(const std::vector<network::Parameter<float>*>& params, float lr, float momentum,
              float weight_decay) {
  for (network::Parameter<float>* p : params) {
    if (p->grad.size() == 0) continue;
    p->ensure_momentum();
    const float wd = p->no_decay ? 0.0f : weight_decay;
    p->momentum = momentum * p->momentum + p->grad + wd * p->value;
    p->value -= lr * p->momentum;
  }
}

namespace {

std::string metrics_row(int64_t step, int epoch, double lr, double loss, double shape_acc,
                        double patch_acc) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%d,%.9g,%.9g,%.9g,%.9g\n",
                static_cast<long long>(step), epoch, lr, loss, shape_acc, patch_acc);
  return buf;
}

void dump_divergence(const std::string& path, int64_t step, double loss,
                     network::Backbone<float>& net) {
  std::ofstream out(path);
  out << "training diverged at step " << step << " with loss " << loss << "\n";
  for (network::Parameter<float>* p : net.parameters())
    out << p->name << " value_norm=" << p->value.norm() << " grad_norm="
        << (p->grad.size() ? p->grad.norm() : 0.0f) << "\n";
}

}  // namespace

PretrainResult pretrain(const PretrainSet& data, const network::NetConfig& net_cfg,
                        const TrainConfig& cfg, const std::string& out_dir, std::ostream* log,
                        TrainState* resume) {
  net_cfg.validate();
  cfg.validate();
  if (data.shapes.empty()) throw EmptyInput("pretraining needs at least one shape");
  const int n_shapes = static_cast<int>(data.shapes.size());

  std::filesystem::create_directories(out_dir);

  TrainState fresh;
  TrainState* st = resume;
  if (!st) {
    fresh.backbone = std::make_unique<network::Backbone<float>>(net_cfg);
    fresh.shape_bank = midloss::ShapeBank<float>::random(n_shapes, net_cfg.shape_feature_dim,
                                                         cfg.seed ^ 0x5348415045ull);
    fresh.patch_banks = midloss::PatchBanks<float>::random(
        n_shapes, cfg.patches_per_shape, net_cfg.point_feature_dim, cfg.seed ^ 0x5041544348ull);
    fresh.rng = Rng(cfg.seed);
    st = &fresh;
  } else {
    if (st->shape_bank.rows.rows() != n_shapes ||
        static_cast<int>(st->patch_banks.shapes.size()) != n_shapes)
      throw ConfigMismatch("resumed checkpoint was trained on a different shape count");
  }

  midloss::MidLossConfig loss_cfg;
  loss_cfg.shape_temperature = cfg.shape_temperature;
  loss_cfg.patch_temperature = cfg.patch_temperature;
  loss_cfg.bank_momentum = cfg.bank_momentum;

  const double contraction = 1.0 / cfg.augment.headroom();
  std::vector<network::Parameter<float>*> params = st->backbone->parameters();

  const std::string metrics_path = out_dir + "/metrics.csv";
  std::ofstream metrics;
  if (st->step == 0) {
    metrics.open(metrics_path, std::ios::trunc);
    metrics << "step,epoch,lr,loss,shape_acc,patch_acc\n";
  } else {
    metrics.open(metrics_path, std::ios::app);
  }
  if (!metrics) throw IoError("cannot open metrics file: " + metrics_path);

  PretrainResult result;
  result.checkpoint_dir = out_dir;
  bool first_step_of_run = true;
  double epoch_loss = 0.0, epoch_shape = 0.0, epoch_patch = 0.0;
  int epoch_rows = 0;

  for (int epoch = st->epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    epoch_loss = epoch_shape = epoch_patch = 0.0;
    epoch_rows = 0;

    std::vector<int> order(static_cast<size_t>(n_shapes));
    for (int i = 0; i < n_shapes; ++i) order[static_cast<size_t>(i)] = i;
    for (int i = n_shapes - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(st->rng.uniform_int(i + 1))]);

    for (int begin = 0; begin < n_shapes; begin += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n_shapes - begin);
      std::vector<int> shape_ids(order.begin() + begin, order.begin() + begin + b);

      std::vector<PointCloud> views;
      views.reserve(static_cast<size_t>(b));
      std::vector<std::vector<int>> patch_ids;
      patch_ids.reserve(static_cast<size_t>(b));
      for (int id : shape_ids) {
        const PointCloud& canonical = data.shapes[static_cast<size_t>(id)];
        geometry::SimilarityTransform tf = geometry::sample_transform(cfg.augment, st->rng);
        PointCloud view =
            geometry::scale_points(geometry::apply_transform(canonical, tf), contraction);
        patch_ids.push_back(canonical.patch_ids);
        views.push_back(std::move(view));
      }

      octree::OctreeBatch batch(std::move(views), net_cfg.depth);
      autodiff::Tape<float> tape;
      network::ForwardResult<float> fwd = st->backbone->forward(tape, batch, /*training=*/true);
      midloss::MidLossResult<float> loss =
          midloss::mid_loss(tape, fwd.shape_features, fwd.point_features, shape_ids,
                            batch.point_segments(), patch_ids, st->shape_bank, st->patch_banks,
                            loss_cfg);

      const double loss_value = static_cast<double>(loss.total->value(0, 0));
      if (!std::isfinite(loss_value)) {
        tape.backward(loss.total);
        st->backbone->collect_gradients();
        dump_divergence(out_dir + "/diverged.txt", st->step, loss_value, *st->backbone);
        throw TrainingDiverged("non-finite loss at step " + std::to_string(st->step) +
                               "; diagnostics in " + out_dir + "/diverged.txt");
      }

      tape.backward(loss.total);
      st->backbone->collect_gradients();
      sgd_step(params, static_cast<float>(lr), static_cast<float>(cfg.momentum),
               static_cast<float>(cfg.weight_decay));

      const float lambda = static_cast<float>(cfg.bank_momentum);
      midloss::update_shape_bank(st->shape_bank, fwd.shape_features->value, shape_ids, lambda);
      for (int i = 0; i < b; ++i) {
        const auto [pb, pe] = batch.point_segments()[static_cast<size_t>(i)];
        midloss::update_patch_bank(
            st->patch_banks, shape_ids[static_cast<size_t>(i)],
            MatF(fwd.point_features->value.middleRows(pb, pe - pb)),
            patch_ids[static_cast<size_t>(i)], lambda);
      }

      ++st->step;
      if (first_step_of_run) {
        result.first_loss = loss_value;
        first_step_of_run = false;
      }
      epoch_loss += loss_value;
      epoch_shape += loss.shape_accuracy;
      epoch_patch += loss.patch_accuracy;
      ++epoch_rows;
      metrics << metrics_row(st->step, epoch, lr, loss_value, loss.shape_accuracy,
                             loss.patch_accuracy);
    }
    metrics.flush();
    st->epoch = epoch + 1;

    if (log)
      *log << "epoch " << epoch << " lr " << lr << " loss " << (epoch_loss / epoch_rows)
           << " shape_acc " << (epoch_shape / epoch_rows) << " patch_acc "
           << (epoch_patch / epoch_rows) << "\n";

    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs)
      checkpoint::save(out_dir, net_cfg, cfg, *st);
  }

  checkpoint::save(out_dir, net_cfg, cfg, *st);
  result.steps = st->step;
  if (epoch_rows > 0) {
    result.last_epoch_loss = epoch_loss / epoch_rows;
    result.last_epoch_shape_acc = epoch_shape / epoch_rows;
    result.last_epoch_patch_acc = epoch_patch / epoch_rows;
  }
  return result;
}

}  // namespace midnet::trainer
