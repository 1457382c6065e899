#include "midnet/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <ostream>

#include "midnet/autodiff.hpp"
#include "midnet/errors.hpp"
#include "midnet/octree_batch.hpp"
#include "midnet/trainer.hpp"

namespace midnet::downstream {

using autodiff::Node;
using autodiff::Tape;
using geometry::PointCloud;

Scheme scheme_from_string(const std::string& s) {
  if (s == "fix") return Scheme::kFix;
  if (s == "finetune") return Scheme::kFinetune;
  if (s == "nopre") return Scheme::kNoPre;
  throw InvalidConfig("unknown scheme: " + s + " (expected fix, finetune, or nopre)");
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::kFix: return "fix";
    case Scheme::kFinetune: return "finetune";
    case Scheme::kNoPre: return "nopre";
  }
  return "fix";
}

void ProbeConfig::validate() const {
  if (epochs < 1) throw InvalidConfig("probe epochs must be positive");
  if (batch_size < 1) throw InvalidConfig("probe batch_size must be positive");
  if (head_lr <= 0.0 || finetune_lr <= 0.0) throw InvalidConfig("probe rates must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidConfig("probe momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw InvalidConfig("probe weight_decay must be non-negative");
  if (views_per_shape < 1 || eval_views < 1) throw InvalidConfig("view counts must be positive");
  if (hidden < 1) throw InvalidConfig("hidden width must be positive");
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw InvalidConfig("train_fraction must be in (0, 1)");
}

ProbeConfig ProbeConfig::from_keyvalues(const config::KeyValues& kv) {
  ProbeConfig c;
  c.scheme = scheme_from_string(kv.get_string("scheme", to_string(c.scheme)));
  c.epochs = kv.get_int("epochs", c.epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.head_lr = kv.get_double("head_lr", c.head_lr);
  c.finetune_lr = kv.get_double("finetune_lr", c.finetune_lr);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.views_per_shape = kv.get_int("views_per_shape", c.views_per_shape);
  c.eval_views = kv.get_int("eval_views", c.eval_views);
  c.hidden = kv.get_int("hidden", c.hidden);
  c.train_fraction = kv.get_double("train_fraction", c.train_fraction);
  c.seed = kv.get_u64("seed", c.seed);
  kv.check_all_consumed();
  c.validate();
  return c;
}

std::string EvalReport::to_csv() const {
  std::string out = "name,value,support\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%d\n", r.name.c_str(), r.value, r.support);
    out += buf;
  }
  return out;
}

double EvalReport::value_of(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r.value;
  throw IndexOutOfRange("no report row named " + name);
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw ShapeMismatch("accuracy: prediction/label count differs");
  if (predictions.empty()) throw EmptyInput("accuracy: no predictions");
  int hits = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

MiouResult miou(const std::vector<std::vector<int>>& predictions,
                const std::vector<std::vector<int>>& labels, int part_count,
                const std::vector<int>& categories, bool absent_part_scores_one) {
  if (predictions.size() != labels.size() || predictions.size() != categories.size())
    throw ShapeMismatch("miou: per-shape list sizes differ");
  if (predictions.empty()) throw EmptyInput("miou: no shapes");
  if (part_count < 1) throw LabelRange("miou: part_count must be positive");

  MiouResult res;
  res.shape_iou.reserve(predictions.size());
  for (size_t s = 0; s < predictions.size(); ++s) {
    const auto& pred = predictions[s];
    const auto& gt = labels[s];
    if (pred.size() != gt.size() || pred.empty())
      throw ShapeMismatch("miou: prediction/label point counts differ");
    std::vector<int> inter(static_cast<size_t>(part_count), 0);
    std::vector<int> uni(static_cast<size_t>(part_count), 0);
    for (size_t p = 0; p < pred.size(); ++p) {
      if (pred[p] < 0 || pred[p] >= part_count || gt[p] < 0 || gt[p] >= part_count)
        throw LabelRange("miou: label outside [0, part_count)");
      if (pred[p] == gt[p]) {
        ++inter[static_cast<size_t>(gt[p])];
        ++uni[static_cast<size_t>(gt[p])];
      } else {
        ++uni[static_cast<size_t>(gt[p])];
        ++uni[static_cast<size_t>(pred[p])];
      }
    }
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < part_count; ++c) {
      if (uni[static_cast<size_t>(c)] == 0) {
        if (absent_part_scores_one) {
          sum += 1.0;
          ++counted;
        }
        continue;
      }
      sum += static_cast<double>(inter[static_cast<size_t>(c)]) /
             static_cast<double>(uni[static_cast<size_t>(c)]);
      ++counted;
    }
    res.shape_iou.push_back(counted > 0 ? sum / counted : 1.0);
  }

  double total = 0.0;
  for (double v : res.shape_iou) total += v;
  res.i_miou = total / static_cast<double>(res.shape_iou.size());

  std::map<int, std::pair<double, int>> per_cat;
  for (size_t s = 0; s < res.shape_iou.size(); ++s) {
    auto& [sum, n] = per_cat[categories[s]];
    sum += res.shape_iou[s];
    ++n;
  }
  double cat_total = 0.0;
  for (const auto& [cat, sn] : per_cat) cat_total += sn.first / sn.second;
  res.c_miou = cat_total / static_cast<double>(per_cat.size());
  return res;
}

namespace {

struct Split {
  std::vector<int> train;
  std::vector<int> eval;
};

// Stratified by class so small sets keep every class on both sides.
Split stratified_split(const datagen::Dataset& dataset, double fraction, Rng& rng) {
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < dataset.items.size(); ++i)
    by_class[dataset.items[i].class_id].push_back(static_cast<int>(i));
  Split split;
  for (auto& [cls, idx] : by_class) {
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
    size_t n_train = static_cast<size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    n_train = std::min(std::max<size_t>(n_train, 1), idx.size() - 1);
    for (size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? split.train : split.eval).push_back(idx[i]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.eval.begin(), split.eval.end());
  return split;
}

struct View {
  int item = 0;  // dataset index
  PointCloud cloud;
};

std::vector<View> make_views(pipeline::FeatureExtractor& fx,
                             const std::vector<PointCloud>& canonicals,
                             const std::vector<int>& items, int per_shape, Rng rng) {
  std::vector<View> views;
  views.reserve(items.size() * static_cast<size_t>(per_shape));
  const auto& policy = fx.train_config().augment;
  for (int item : items)
    for (int v = 0; v < per_shape; ++v) {
      geometry::SimilarityTransform t = geometry::sample_transform(policy, rng);
      views.push_back({item, fx.prepare_view(canonicals[static_cast<size_t>(item)], t)});
    }
  return views;
}

// Standalone head parameters bound to a fresh tape every step.
class HeadParams {
 public:
  network::Parameter<float>* add(const std::string& name, MatF value, bool no_decay) {
    auto p = std::make_unique<network::Parameter<float>>();
    p->name = name;
    p->value = std::move(value);
    p->no_decay = no_decay;
    params_.push_back(std::move(p));
    return params_.back().get();
  }

  std::vector<network::Parameter<float>*> all() {
    std::vector<network::Parameter<float>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  Node<float>* bind(Tape<float>& tape, network::Parameter<float>* p) {
    nodes_[p] = tape.leaf(p->value, true);
    return nodes_[p];
  }

  void collect() {
    for (auto& p : params_) {
      auto it = nodes_.find(p.get());
      if (it != nodes_.end() && it->second->grad.size() != 0)
        p->grad = it->second->grad;
      else
        p->grad = MatF::Zero(p->value.rows(), p->value.cols());
    }
    nodes_.clear();
  }

 private:
  std::vector<std::unique_ptr<network::Parameter<float>>> params_;
  std::map<network::Parameter<float>*, Node<float>*> nodes_;
};

double decayed_lr(double base, int epoch, int total_epochs) {
  double v = base;
  if (epoch >= total_epochs / 2) v *= 0.1;
  if (epoch >= (3 * total_epochs) / 4) v *= 0.1;
  return v;
}

// Eval-mode shape/point features for a list of views, in chunks that keep
// the batched octree tables modest.
constexpr int kExtractChunk = 16;

MatF shape_features_of(pipeline::FeatureExtractor& fx, const std::vector<View>& views) {
  MatF out(static_cast<Eigen::Index>(views.size()), fx.net_config().shape_feature_dim);
  for (size_t at = 0; at < views.size(); at += kExtractChunk) {
    const size_t n = std::min<size_t>(kExtractChunk, views.size() - at);
    std::vector<PointCloud> clouds;
    clouds.reserve(n);
    for (size_t i = 0; i < n; ++i) clouds.push_back(views[at + i].cloud);
    out.middleRows(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(n)) =
        fx.extract(std::move(clouds)).first;
  }
  return out;
}

std::vector<MatF> point_features_of(pipeline::FeatureExtractor& fx,
                                    const std::vector<View>& views) {
  std::vector<MatF> out(views.size());
  for (size_t at = 0; at < views.size(); at += kExtractChunk) {
    const size_t n = std::min<size_t>(kExtractChunk, views.size() - at);
    std::vector<PointCloud> clouds;
    clouds.reserve(n);
    for (size_t i = 0; i < n; ++i) clouds.push_back(views[at + i].cloud);
    MatF all = fx.extract(std::move(clouds)).second;
    Eigen::Index row = 0;
    for (size_t i = 0; i < n; ++i) {
      const Eigen::Index m = views[at + i].cloud.size();
      out[at + i] = all.middleRows(row, m);
      row += m;
    }
  }
  return out;
}

std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  for (size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
  return idx;
}

}  // namespace

ClassificationResult linear_probe(pipeline::FeatureExtractor& fx,
                                  const datagen::Dataset& dataset, const ProbeConfig& cfg,
                                  std::ostream* log) {
  cfg.validate();
  dataset.validate();
  const int classes = dataset.class_count();
  if (classes < 2) throw InvalidConfig("classification probe needs at least two classes");

  Rng root(cfg.seed);
  Rng split_rng = root.fork(1);
  Rng train_view_rng = root.fork(2);
  Rng eval_view_rng = root.fork(3);
  Rng head_rng = root.fork(4);
  Rng shuffle_rng = root.fork(5);

  std::vector<PointCloud> canonicals;
  canonicals.reserve(dataset.items.size());
  for (const auto& item : dataset.items) canonicals.push_back(fx.canonicalize(item.cloud));

  Split split = stratified_split(dataset, cfg.train_fraction, split_rng);
  std::vector<View> train_views =
      make_views(fx, canonicals, split.train, cfg.views_per_shape, train_view_rng);
  std::vector<View> eval_views =
      make_views(fx, canonicals, split.eval, cfg.eval_views, eval_view_rng);

  const int sdim = fx.net_config().shape_feature_dim;
  HeadParams head;
  network::Parameter<float>* w =
      head.add("probe.w", he_normal<float>(sdim, classes, sdim, head_rng), false);
  network::Parameter<float>* b = head.add("probe.b", MatF::Zero(1, classes), true);

  std::vector<int> train_labels;
  train_labels.reserve(train_views.size());
  for (const auto& v : train_views)
    train_labels.push_back(dataset.items[static_cast<size_t>(v.item)].class_id);

  if (cfg.scheme == Scheme::kFix) {
    MatF feats = shape_features_of(fx, train_views);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const float lr = static_cast<float>(decayed_lr(cfg.head_lr, epoch, cfg.epochs));
      Tape<float> tape;
      Node<float>* x = tape.constant(feats);
      Node<float>* logits = autodiff::linear(tape, x, head.bind(tape, w), head.bind(tape, b));
      Node<float>* loss =
          autodiff::mean_all(tape, autodiff::softmax_cross_entropy(tape, logits, train_labels));
      tape.backward(loss);
      head.collect();
      trainer::sgd_step(head.all(), lr, static_cast<float>(cfg.momentum),
                        static_cast<float>(cfg.weight_decay));
      if (log && (epoch + 1) % 50 == 0)
        *log << "probe epoch " << epoch << " loss " << loss->value(0, 0) << "\n";
    }
  } else {
    const double backbone_base = cfg.scheme == Scheme::kNoPre ? cfg.head_lr : cfg.finetune_lr;
    std::vector<network::Parameter<float>*> backbone_params = fx.backbone().parameters();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const float head_lr = static_cast<float>(decayed_lr(cfg.head_lr, epoch, cfg.epochs));
      const float net_lr = static_cast<float>(decayed_lr(backbone_base, epoch, cfg.epochs));
      std::vector<size_t> order = shuffled_indices(train_views.size(), shuffle_rng);
      double epoch_loss = 0.0;
      int steps = 0;
      for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
        const size_t n = std::min<size_t>(cfg.batch_size, order.size() - at);
        std::vector<PointCloud> clouds;
        std::vector<int> labels;
        for (size_t i = 0; i < n; ++i) {
          clouds.push_back(train_views[order[at + i]].cloud);
          labels.push_back(train_labels[order[at + i]]);
        }
        octree::OctreeBatch batch(std::move(clouds), fx.net_config().depth);
        Tape<float> tape;
        network::ForwardResult<float> fwd = fx.backbone().forward(tape, batch, true, true);
        Node<float>* logits =
            autodiff::linear(tape, fwd.shape_features, head.bind(tape, w), head.bind(tape, b));
        Node<float>* loss =
            autodiff::mean_all(tape, autodiff::softmax_cross_entropy(tape, logits, labels));
        tape.backward(loss);
        head.collect();
        fx.backbone().collect_gradients();
        trainer::sgd_step(head.all(), head_lr, static_cast<float>(cfg.momentum),
                          static_cast<float>(cfg.weight_decay));
        trainer::sgd_step(backbone_params, net_lr, static_cast<float>(cfg.momentum),
                          static_cast<float>(cfg.weight_decay));
        epoch_loss += loss->value(0, 0);
        ++steps;
      }
      if (log) *log << "probe epoch " << epoch << " loss " << epoch_loss / steps << "\n";
    }
  }

  ClassificationResult result;
  {
    MatF feats = shape_features_of(fx, train_views);
    std::vector<int> preds;
    preds.reserve(train_views.size());
    MatF logits = feats * w->value;
    logits.rowwise() += b->value.row(0);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best = 0;
      logits.row(r).maxCoeff(&best);
      preds.push_back(static_cast<int>(best));
    }
    result.train_accuracy = accuracy(preds, train_labels);
  }

  // Held-out shapes: aggregate view logits per shape, then argmax.
  MatF eval_feats = shape_features_of(fx, eval_views);
  std::map<int, Eigen::RowVectorXf> shape_logits;
  for (size_t i = 0; i < eval_views.size(); ++i) {
    Eigen::RowVectorXf row = eval_feats.row(static_cast<Eigen::Index>(i)) * w->value;
    row += b->value.row(0);
    auto [it, fresh] = shape_logits.try_emplace(eval_views[i].item,
                                                Eigen::RowVectorXf::Zero(classes));
    it->second += row;
  }
  std::vector<int> eval_preds, eval_labels;
  std::map<int, std::pair<int, int>> class_tally;  // class -> (hits, total)
  for (const auto& [item, logits] : shape_logits) {
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    const int label = dataset.items[static_cast<size_t>(item)].class_id;
    eval_preds.push_back(static_cast<int>(best));
    eval_labels.push_back(label);
    auto& [hits, total] = class_tally[label];
    if (static_cast<int>(best) == label) ++hits;
    ++total;
  }
  result.eval_accuracy = accuracy(eval_preds, eval_labels);

  for (int c = 0; c < classes; ++c) {
    const auto it = class_tally.find(c);
    const int hits = it == class_tally.end() ? 0 : it->second.first;
    const int total = it == class_tally.end() ? 0 : it->second.second;
    result.report.rows.push_back({dataset.class_names[static_cast<size_t>(c)],
                                  total ? static_cast<double>(hits) / total : 0.0, total});
  }
  result.report.rows.push_back({"overall", result.eval_accuracy,
                                static_cast<int>(eval_preds.size())});
  return result;
}

SegmentationResult segmentation_probe(pipeline::FeatureExtractor& fx,
                                      const datagen::Dataset& dataset, const ProbeConfig& cfg,
                                      std::ostream* log) {
  cfg.validate();
  dataset.validate();
  if (dataset.part_count < 2)
    throw LabelMismatch("segmentation probe needs part labels with at least two parts");
  const int parts = dataset.part_count;

  Rng root(cfg.seed);
  Rng split_rng = root.fork(1);
  Rng train_view_rng = root.fork(2);
  Rng eval_view_rng = root.fork(3);
  Rng head_rng = root.fork(4);
  Rng shuffle_rng = root.fork(5);

  std::vector<PointCloud> canonicals;
  canonicals.reserve(dataset.items.size());
  for (const auto& item : dataset.items) canonicals.push_back(fx.canonicalize(item.cloud));

  Split split = stratified_split(dataset, cfg.train_fraction, split_rng);
  std::vector<View> train_views =
      make_views(fx, canonicals, split.train, cfg.views_per_shape, train_view_rng);
  std::vector<View> eval_views =
      make_views(fx, canonicals, split.eval, cfg.eval_views, eval_view_rng);

  const int pdim = fx.net_config().point_feature_dim;
  HeadParams head;
  network::Parameter<float>* w1 =
      head.add("seg.w1", he_normal<float>(pdim, cfg.hidden, pdim, head_rng), false);
  network::Parameter<float>* b1 = head.add("seg.b1", MatF::Zero(1, cfg.hidden), true);
  network::Parameter<float>* w2 =
      head.add("seg.w2", he_normal<float>(cfg.hidden, parts, cfg.hidden, head_rng), false);
  network::Parameter<float>* b2 = head.add("seg.b2", MatF::Zero(1, parts), true);

  auto head_logits = [&](Tape<float>& tape, Node<float>* x) {
    Node<float>* h =
        autodiff::relu(tape, autodiff::linear(tape, x, head.bind(tape, w1), head.bind(tape, b1)));
    return autodiff::linear(tape, h, head.bind(tape, w2), head.bind(tape, b2));
  };

  const bool joint = cfg.scheme != Scheme::kFix;
  std::vector<network::Parameter<float>*> backbone_params = fx.backbone().parameters();
  const double backbone_base = cfg.scheme == Scheme::kNoPre ? cfg.head_lr : cfg.finetune_lr;

  std::vector<MatF> fixed_feats;
  if (!joint) fixed_feats = point_features_of(fx, train_views);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float head_lr = static_cast<float>(decayed_lr(cfg.head_lr, epoch, cfg.epochs));
    const float net_lr = static_cast<float>(decayed_lr(backbone_base, epoch, cfg.epochs));
    std::vector<size_t> order = shuffled_indices(train_views.size(), shuffle_rng);
    double epoch_loss = 0.0;
    int steps = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t n = std::min<size_t>(cfg.batch_size, order.size() - at);
      std::vector<int> labels;
      for (size_t i = 0; i < n; ++i) {
        const View& v = train_views[order[at + i]];
        const auto& part = dataset.items[static_cast<size_t>(v.item)].cloud.part_labels;
        labels.insert(labels.end(), part.begin(), part.end());
      }

      Tape<float> tape;
      Node<float>* feats;
      if (joint) {
        std::vector<PointCloud> clouds;
        for (size_t i = 0; i < n; ++i) clouds.push_back(train_views[order[at + i]].cloud);
        octree::OctreeBatch batch(std::move(clouds), fx.net_config().depth);
        feats = fx.backbone().forward(tape, batch, true, true).point_features;
        Node<float>* loss = autodiff::mean_all(
            tape, autodiff::softmax_cross_entropy(tape, head_logits(tape, feats), labels));
        tape.backward(loss);
        head.collect();
        fx.backbone().collect_gradients();
        trainer::sgd_step(head.all(), head_lr, static_cast<float>(cfg.momentum),
                          static_cast<float>(cfg.weight_decay));
        trainer::sgd_step(backbone_params, net_lr, static_cast<float>(cfg.momentum),
                          static_cast<float>(cfg.weight_decay));
        epoch_loss += loss->value(0, 0);
      } else {
        Eigen::Index rows = 0;
        for (size_t i = 0; i < n; ++i) rows += fixed_feats[order[at + i]].rows();
        MatF x(rows, pdim);
        Eigen::Index r = 0;
        for (size_t i = 0; i < n; ++i) {
          x.middleRows(r, fixed_feats[order[at + i]].rows()) = fixed_feats[order[at + i]];
          r += fixed_feats[order[at + i]].rows();
        }
        feats = tape.constant(std::move(x));
        Node<float>* loss = autodiff::mean_all(
            tape, autodiff::softmax_cross_entropy(tape, head_logits(tape, feats), labels));
        tape.backward(loss);
        head.collect();
        trainer::sgd_step(head.all(), head_lr, static_cast<float>(cfg.momentum),
                          static_cast<float>(cfg.weight_decay));
        epoch_loss += loss->value(0, 0);
      }
      ++steps;
    }
    if (log && (epoch + 1) % 10 == 0)
      *log << "seg epoch " << epoch << " loss " << epoch_loss / steps << "\n";
  }

  // Eval: per-point logits summed over the shape's views, then argmax.
  std::vector<MatF> eval_feats = point_features_of(fx, eval_views);
  std::map<int, MatF> logit_sum;
  for (size_t i = 0; i < eval_views.size(); ++i) {
    MatF h = (eval_feats[i] * w1->value).rowwise() + b1->value.row(0);
    h = h.cwiseMax(0.0f);
    MatF logits = (h * w2->value).rowwise() + b2->value.row(0);
    auto [it, fresh] = logit_sum.try_emplace(eval_views[i].item,
                                             MatF::Zero(logits.rows(), logits.cols()));
    it->second += logits;
  }

  std::vector<std::vector<int>> preds, gts;
  std::vector<int> cats;
  for (const auto& [item, logits] : logit_sum) {
    std::vector<int> pred(static_cast<size_t>(logits.rows()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best = 0;
      logits.row(r).maxCoeff(&best);
      pred[static_cast<size_t>(r)] = static_cast<int>(best);
    }
    preds.push_back(std::move(pred));
    gts.push_back(dataset.items[static_cast<size_t>(item)].cloud.part_labels);
    cats.push_back(dataset.items[static_cast<size_t>(item)].category);
  }
  MiouResult m = miou(preds, gts, parts, cats);

  SegmentationResult result;
  result.eval_i_miou = m.i_miou;
  result.eval_c_miou = m.c_miou;
  result.shape_iou = m.shape_iou;
  std::map<int, std::pair<double, int>> per_cat;
  for (size_t s = 0; s < m.shape_iou.size(); ++s) {
    auto& [sum, nn] = per_cat[cats[s]];
    sum += m.shape_iou[s];
    ++nn;
  }
  for (const auto& [cat, sn] : per_cat) {
    std::string name = cat >= 0 && cat < dataset.class_count()
                           ? dataset.class_names[static_cast<size_t>(cat)]
                           : "category_" + std::to_string(cat);
    result.report.rows.push_back({name, sn.first / sn.second, sn.second});
  }
  result.report.rows.push_back({"i_miou", m.i_miou, static_cast<int>(m.shape_iou.size())});
  result.report.rows.push_back({"c_miou", m.c_miou, static_cast<int>(m.shape_iou.size())});
  return result;
}

}  // namespace midnet::downstream
