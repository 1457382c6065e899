#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "midnet/config.hpp"
#include "midnet/datagen.hpp"
#include "midnet/pipeline.hpp"

namespace midnet::downstream {

// How much of the backbone moves while a task head is trained on top of it.
enum class Scheme { kFix, kFinetune, kNoPre };

Scheme scheme_from_string(const std::string& s);
std::string to_string(Scheme s);

struct ProbeConfig {
  Scheme scheme = Scheme::kFix;
  int epochs = 200;        // head training epochs
  int batch_size = 8;      // views per joint-training step
  double head_lr = 0.1;
  double finetune_lr = 0.01;  // backbone rate under kFinetune (kNoPre uses head_lr)
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int views_per_shape = 4;  // augmented training views per labeled shape
  int eval_views = 2;       // augmented views aggregated per eval prediction
  int hidden = 256;         // segmentation head width
  double train_fraction = 0.75;
  uint64_t seed = 0;

  void validate() const;
  static ProbeConfig from_keyvalues(const config::KeyValues& kv);
};

struct EvalReport {
  struct Row {
    std::string name;
    double value = 0.0;
    int support = 0;  // shapes behind this row
  };
  std::vector<Row> rows;

  std::string to_csv() const;
  double value_of(const std::string& name) const;  // IndexOutOfRange if absent
};

struct ClassificationResult {
  double train_accuracy = 0.0;  // on training views, final head
  double eval_accuracy = 0.0;   // per held-out shape, views aggregated
  EvalReport report;            // per-class rows + "overall"
};

struct SegmentationResult {
  double eval_i_miou = 0.0;  // mean IoU over held-out shapes
  double eval_c_miou = 0.0;  // mean of per-category means
  std::vector<double> shape_iou;
  EvalReport report;  // per-category rows + "i_miou"/"c_miou"
};

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

struct MiouResult {
  std::vector<double> shape_iou;
  double i_miou = 0.0;
  double c_miou = 0.0;
};

// Per-shape IoU averaged over part classes. A part absent from both the
// prediction and the labels of a shape counts as IoU 1 for that shape
// (configurable via absent_part_scores_one).
MiouResult miou(const std::vector<std::vector<int>>& predictions,
                const std::vector<std::vector<int>>& labels, int part_count,
                const std::vector<int>& categories, bool absent_part_scores_one = true);

// Trains a linear classifier on shape features over augmented views of a
// stratified train split and scores the held-out shapes.
ClassificationResult linear_probe(pipeline::FeatureExtractor& extractor,
                                  const datagen::Dataset& dataset, const ProbeConfig& cfg,
                                  std::ostream* log = nullptr);

// Trains a two-layer head on point features for part labeling.
SegmentationResult segmentation_probe(pipeline::FeatureExtractor& extractor,
                                      const datagen::Dataset& dataset, const ProbeConfig& cfg,
                                      std::ostream* log = nullptr);

}  // namespace midnet::downstream
