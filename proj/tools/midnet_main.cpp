#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "midnet/checkpoint.hpp"
#include "midnet/config.hpp"
#include "midnet/datagen.hpp"
#include "midnet/downstream.hpp"
#include "midnet/errors.hpp"
#include "midnet/gradcheck.hpp"
#include "midnet/network.hpp"
#include "midnet/pipeline.hpp"
#include "midnet/registration.hpp"
#include "midnet/trainer.hpp"

namespace {

using json = nlohmann::json;
using midnet::config::KeyValues;

constexpr const char* kVersion = "midnet 0.1.0";

// Collects everything a rerun needs and writes <out>/run.json at the end.
class RunRecord {
 public:
  RunRecord(std::string command, std::string out_dir)
      : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["version"] = kVersion;
    j_["config"] = json::object();
    j_["seeds"] = json::array();
    j_["input_hashes"] = json::object();
    j_["outputs"] = json::array();
  }

  void config(const std::string& section, const KeyValues& kv) {
    j_["config"][section] = kv.canonical();
  }
  void seed(std::uint64_t s) { j_["seeds"].push_back(s); }
  void input(const std::string& path) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(
                      midnet::config::fnv1a64(midnet::config::read_text_file(path))));
    j_["input_hashes"][path] = hex;
  }
  void output(const std::string& path) { j_["outputs"].push_back(path); }

  void finish() {
    if (out_dir_.empty()) return;
    const auto dt = std::chrono::steady_clock::now() - start_;
    j_["wall_time_s"] = std::chrono::duration<double>(dt).count();
    std::filesystem::create_directories(out_dir_);
    midnet::config::write_text_file_atomic(out_dir_ + "/run.json", j_.dump(2) + "\n");
  }

 private:
  json j_;
  std::string out_dir_;
  std::chrono::steady_clock::time_point start_;
};

void require_file(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw midnet::InvalidConfig("no such file: " + path);
}

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

KeyValues load_config_or_empty(const std::string& path) {
  if (path.empty()) return KeyValues{};
  require_file(path);
  return KeyValues::parse_file(path);
}

struct CommonOpts {
  bool deterministic = false;
  int threads = 0;
  bool print_config = false;
};

void apply_threads(const CommonOpts& c) {
  int n = c.deterministic ? 1 : c.threads;
  if (n > 0) Eigen::setNbThreads(n);
}

// ---- gen --------------------------------------------------------------------

int run_gen(const std::string& spec_path, const std::string& out_dir, const CommonOpts& common,
            const std::string& cmdline) {
  require_file(spec_path);
  KeyValues kv = KeyValues::parse_file(spec_path);
  const std::string task = kv.get_string("task", "classification");
  const std::string kinds_raw = kv.get_string("kinds");
  const int per_class = kv.get_int("per_class", 20);
  const int points = kv.get_int("points", 2048);
  const std::uint64_t seed = kv.get_u64("seed", 1);
  kv.check_all_consumed();

  if (common.print_config) {
    std::cout << kv.canonical();
    return 0;
  }
  if (per_class < 1) throw midnet::InvalidSpec("per_class must be positive");
  if (points < 64) throw midnet::InvalidSpec("points must be at least 64");

  std::vector<std::string> kind_names;
  {
    std::string cur;
    for (char ch : kinds_raw + ",") {
      if (ch == ',') {
        if (!cur.empty()) kind_names.push_back(cur);
        cur.clear();
      } else if (!std::isspace(static_cast<unsigned char>(ch))) {
        cur += ch;
      }
    }
  }
  if (kind_names.empty()) throw midnet::InvalidSpec("spec lists no shape kinds");

  midnet::datagen::Dataset dataset;
  if (task == "classification") {
    std::vector<midnet::datagen::ShapeKind> kinds;
    for (const auto& n : kind_names) kinds.push_back(midnet::datagen::shape_kind_from_string(n));
    dataset = midnet::datagen::generate_classification(kinds, per_class, points, seed);
  } else if (task == "segmentation") {
    std::vector<midnet::datagen::CompositeKind> kinds;
    for (const auto& n : kind_names)
      kinds.push_back(midnet::datagen::composite_kind_from_string(n));
    dataset = midnet::datagen::generate_segmentation(kinds, per_class, points, seed);
  } else {
    throw midnet::InvalidSpec("task must be classification or segmentation, got " + task);
  }

  midnet::datagen::write_dataset(dataset, out_dir);
  std::cout << "wrote " << dataset.items.size() << " shapes to " << out_dir << "\n";

  RunRecord rec(cmdline, out_dir);
  rec.config("spec", kv);
  rec.seed(seed);
  rec.input(spec_path);
  rec.output(out_dir + "/manifest.csv");
  rec.finish();
  return 0;
}

// ---- pretrain ---------------------------------------------------------------

int run_pretrain(const std::string& data_path, const std::string& net_path,
                 const std::string& train_path, const std::string& out_dir,
                 const CommonOpts& common, const std::string& cmdline) {
  KeyValues net_kv = load_config_or_empty(net_path);
  KeyValues train_kv = load_config_or_empty(train_path);
  midnet::network::NetConfig net_cfg = midnet::network::NetConfig::from_keyvalues(net_kv);
  midnet::trainer::TrainConfig train_cfg = midnet::trainer::TrainConfig::from_keyvalues(train_kv);

  if (common.print_config) {
    std::cout << "# net\n"
              << net_cfg.to_keyvalues().canonical() << "# train\n"
              << train_cfg.to_keyvalues().canonical();
    return 0;
  }

  require_file(data_path);
  midnet::datagen::Dataset dataset = midnet::datagen::load_dataset(data_path);
  midnet::trainer::PretrainSet set = midnet::trainer::PretrainSet::prepare(dataset, train_cfg);
  midnet::trainer::PretrainResult result =
      midnet::trainer::pretrain(set, net_cfg, train_cfg, out_dir, &std::cout);

  std::cout << "done: " << result.steps << " steps, last epoch loss " << result.last_epoch_loss
            << ", shape acc " << result.last_epoch_shape_acc << ", patch acc "
            << result.last_epoch_patch_acc << "\n"
            << "checkpoint: " << result.checkpoint_dir << "\n";

  RunRecord rec(cmdline, out_dir);
  rec.config("net", net_cfg.to_keyvalues());
  rec.config("train", train_cfg.to_keyvalues());
  rec.seed(train_cfg.seed);
  rec.input(data_path);
  rec.output(result.checkpoint_dir);
  rec.output(out_dir + "/metrics.csv");
  rec.finish();
  return 0;
}

// ---- probe ------------------------------------------------------------------

int run_probe(const std::string& ckpt_dir, const std::string& data_path, const std::string& task,
              const std::string& scheme, const std::string& probe_path, bool random_init,
              std::uint64_t seed, const std::string& out_dir, const CommonOpts& common,
              const std::string& cmdline) {
  KeyValues probe_kv = load_config_or_empty(probe_path);
  probe_kv.set("scheme", scheme);
  probe_kv.set("seed", std::to_string(seed));
  midnet::downstream::ProbeConfig cfg = midnet::downstream::ProbeConfig::from_keyvalues(probe_kv);

  if (common.print_config) {
    std::cout << probe_kv.canonical();
    return 0;
  }

  require_file(ckpt_dir + "/net.cfg");
  require_file(data_path);

  midnet::pipeline::FeatureExtractor fx = [&] {
    if (!random_init) return midnet::pipeline::FeatureExtractor::load(ckpt_dir);
    auto net_cfg = midnet::network::NetConfig::from_keyvalues(
        KeyValues::parse_file(ckpt_dir + "/net.cfg"));
    auto train_cfg = midnet::trainer::TrainConfig::from_keyvalues(
        KeyValues::parse_file(ckpt_dir + "/train.cfg"));
    return midnet::pipeline::FeatureExtractor::random(net_cfg, train_cfg);
  }();

  midnet::datagen::Dataset dataset = midnet::datagen::load_dataset(data_path);

  std::string report_csv;
  if (task == "cls") {
    auto result = midnet::downstream::linear_probe(fx, dataset, cfg, &std::cout);
    std::cout << "train accuracy " << result.train_accuracy << "\n"
              << "eval accuracy " << result.eval_accuracy << "\n";
    report_csv = result.report.to_csv();
  } else if (task == "seg") {
    auto result = midnet::downstream::segmentation_probe(fx, dataset, cfg, &std::cout);
    std::cout << "eval I.mIoU " << result.eval_i_miou << "\n"
              << "eval C.mIoU " << result.eval_c_miou << "\n";
    report_csv = result.report.to_csv();
  } else {
    throw midnet::InvalidConfig("task must be cls or seg, got " + task);
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    midnet::config::write_text_file(out_dir + "/report.csv", report_csv);
    std::cout << "report: " << out_dir << "/report.csv\n";

    RunRecord rec(cmdline, out_dir);
    rec.config("probe", probe_kv);
    rec.seed(cfg.seed);
    rec.input(data_path);
    rec.input(ckpt_dir + "/net.cfg");
    rec.output(out_dir + "/report.csv");
    rec.finish();
  } else {
    std::cout << report_csv;
  }
  return 0;
}

// ---- register ---------------------------------------------------------------

int run_register(const std::string& ckpt_dir, const std::string& data_path, int trials,
                 const std::string& init, std::uint64_t seed, double threshold,
                 const std::string& out_dir, const CommonOpts& common,
                 const std::string& cmdline) {
  if (common.print_config) {
    std::cout << "init = " << init << "\nseed = " << seed << "\nthreshold = " << threshold
              << "\ntrials = " << trials << "\n";
    return 0;
  }
  if (trials < 1) throw midnet::InvalidConfig("trials must be positive");
  if (init != "feature" && init != "identity")
    throw midnet::InvalidConfig("init must be feature or identity, got " + init);

  require_file(ckpt_dir + "/net.cfg");
  require_file(data_path);
  midnet::pipeline::FeatureExtractor fx = midnet::pipeline::FeatureExtractor::load(ckpt_dir);
  midnet::datagen::Dataset dataset = midnet::datagen::load_dataset(data_path);

  // Rigid poses only: full rotations plus a bounded shift.
  midnet::geometry::AugmentPolicy pose;
  pose.rotation_mode = midnet::geometry::RotationMode::kFullSO3;
  pose.translation_range = 0.25;
  pose.scale_min = 1.0;
  pose.scale_max = 1.0;

  midnet::Rng rng(seed);
  int successes = 0;
  std::string rows = "trial,shape,hausdorff,success\n";
  char buf[128];
  for (int t = 0; t < trials; ++t) {
    const int shape = t % static_cast<int>(dataset.items.size());
    midnet::geometry::PointCloud src = fx.canonicalize(dataset.items[shape].cloud);
    midnet::geometry::SimilarityTransform pose_t = midnet::geometry::sample_transform(pose, rng);
    midnet::geometry::PointCloud tgt = midnet::geometry::apply_transform(src, pose_t);

    double h;
    if (init == "feature") {
      auto result = midnet::registration::register_clouds(src, tgt, fx);
      h = result.hausdorff_after;
    } else {
      auto icp = midnet::registration::icp_refine(src, tgt, midnet::registration::RigidTransform{});
      h = midnet::registration::hausdorff(icp.transform.apply(src), tgt);
    }
    const bool ok = h < threshold;
    successes += ok ? 1 : 0;
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%d\n", t, shape, h, ok ? 1 : 0);
    rows += buf;
  }

  const double rate = static_cast<double>(successes) / trials;
  std::cout << "success rate " << rate << " (" << successes << "/" << trials << ", init=" << init
            << ")\n";

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    midnet::config::write_text_file(out_dir + "/trials.csv", rows);
    std::cout << "trials: " << out_dir << "/trials.csv\n";

    RunRecord rec(cmdline, out_dir);
    rec.seed(seed);
    rec.input(data_path);
    rec.input(ckpt_dir + "/net.cfg");
    rec.output(out_dir + "/trials.csv");
    rec.finish();
  }
  return 0;
}

// ---- gradcheck ---------------------------------------------------------------

int run_gradcheck(std::uint64_t seed, const std::string& out_dir, const std::string& cmdline) {
  auto entries = midnet::gradcheck::run_suite(seed);
  bool all_pass = true;
  char buf[160];
  std::string rows = "name,max_rel_err,checked,pass\n";
  for (const auto& e : entries) {
    all_pass = all_pass && e.pass;
    std::snprintf(buf, sizeof(buf), "%s %s (rel %.3g, %d coords)\n", e.pass ? "PASS" : "FAIL",
                  e.name.c_str(), e.result.max_rel_err, e.result.checked);
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%d,%d\n", e.name.c_str(), e.result.max_rel_err,
                  e.result.checked, e.pass ? 1 : 0);
    rows += buf;
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    midnet::config::write_text_file(out_dir + "/gradcheck.csv", rows);
    RunRecord rec(cmdline, out_dir);
    rec.seed(seed);
    rec.output(out_dir + "/gradcheck.csv");
    rec.finish();
  }
  if (!all_pass) throw midnet::Error("gradient check failed");
  return 0;
}

// ---- eval --------------------------------------------------------------------

int run_eval(const std::vector<std::string>& reports, const std::string& out_dir,
             const std::string& cmdline) {
  if (reports.empty()) throw midnet::InvalidConfig("eval needs at least one --report");

  // name -> (weighted sum, total support)
  std::vector<std::pair<std::string, std::pair<double, long>>> agg;
  for (const auto& path : reports) {
    require_file(path);
    std::istringstream in(midnet::config::read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "name,value,support")
      throw midnet::ParseError("report " + path + " must start with `name,value,support`");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const size_t c1 = line.find(',');
      const size_t c2 = line.find(',', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos)
        throw midnet::ParseError("report " + path + ": bad row `" + line + "`");
      const std::string name = line.substr(0, c1);
      double value = 0.0;
      long support = 0;
      try {
        value = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        support = std::stol(line.substr(c2 + 1));
      } catch (const std::exception&) {
        throw midnet::ParseError("report " + path + ": bad row `" + line + "`");
      }
      auto it = std::find_if(agg.begin(), agg.end(),
                             [&](const auto& kv) { return kv.first == name; });
      if (it == agg.end()) it = agg.insert(agg.end(), {name, {0.0, 0}});
      if (support > 0) {
        it->second.first += value * static_cast<double>(support);
        it->second.second += support;
      }
    }
  }

  std::string rows = "name,value,support\n";
  char buf[160];
  for (const auto& [name, sv] : agg) {
    const double mean = sv.second > 0 ? sv.first / static_cast<double>(sv.second) : 0.0;
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%ld\n", name.c_str(), mean, sv.second);
    rows += buf;
  }
  std::cout << rows;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    midnet::config::write_text_file(out_dir + "/aggregate.csv", rows);
    RunRecord rec(cmdline, out_dir);
    for (const auto& path : reports) rec.input(path);
    rec.output(out_dir + "/aggregate.csv");
    rec.finish();
  }
  return 0;
}

std::string diagnostic_dump(const std::string& out_dir, const std::string& cmdline,
                            const std::string& what) {
  const std::string path =
      (out_dir.empty() ? std::string("midnet_diagnostic.txt") : out_dir + "/diagnostic.txt");
  try {
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    midnet::config::write_text_file(path, "command: " + cmdline + "\nerror: " + what + "\n");
  } catch (...) {
    return "<unwritable>";
  }
  return path;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cmdline = command_line(argc, argv);
  CLI::App app{"octree point-cloud representation learning"};
  app.require_subcommand(1);

  CommonOpts common;
  app.add_flag("--deterministic", common.deterministic,
               "single-threaded, bitwise-reproducible runs");
  app.add_option("--threads", common.threads, "worker threads (0 = library default)");
  app.add_flag("--print-config", common.print_config,
               "print the effective configuration and exit");

  std::string spec_path, out_dir, data_path, net_path, train_path, ckpt_dir, probe_path;
  std::string task = "cls", scheme = "fix", init = "feature";
  std::vector<std::string> reports;
  std::uint64_t seed = 1;
  int trials = 50;
  double threshold = 0.05;
  bool random_init = false;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "dataset spec file")->required();
  gen->add_option("--out", out_dir, "output directory")->required();

  CLI::App* pretrain = app.add_subcommand("pretrain", "self-supervised pretraining");
  pretrain->add_option("--data", data_path, "dataset manifest")->required();
  pretrain->add_option("--net", net_path, "network config file");
  pretrain->add_option("--train", train_path, "training config file");
  pretrain->add_option("--out", out_dir, "output directory")->required();

  CLI::App* probe = app.add_subcommand("probe", "train a downstream probe");
  probe->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
  probe->add_option("--data", data_path, "dataset manifest")->required();
  probe->add_option("--task", task, "cls or seg");
  probe->add_option("--scheme", scheme, "fix, finetune, or nopre");
  probe->add_option("--probe", probe_path, "probe config file");
  probe->add_option("--seed", seed, "probe seed");
  probe->add_flag("--random-init", random_init,
                  "use a freshly initialized backbone (baseline arm)");
  probe->add_option("--out", out_dir, "output directory for report.csv");

  CLI::App* reg = app.add_subcommand("register", "rigid registration benchmark");
  reg->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
  reg->add_option("--data", data_path, "dataset manifest")->required();
  reg->add_option("--trials", trials, "number of trials");
  reg->add_option("--init", init, "feature or identity");
  reg->add_option("--seed", seed, "pose seed");
  reg->add_option("--threshold", threshold, "success threshold on the Hausdorff distance");
  reg->add_option("--out", out_dir, "output directory for trials.csv");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", seed, "draw seed");
  gc->add_option("--out", out_dir, "output directory for gradcheck.csv");

  CLI::App* ev = app.add_subcommand("eval", "aggregate report CSVs");
  ev->add_option("--report", reports, "report csv (repeatable)");
  ev->add_option("--out", out_dir, "output directory for aggregate.csv");

  // let --deterministic/--threads/--print-config appear after the subcommand
  for (CLI::App* sub : {gen, pretrain, probe, reg, gc, ev}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems are validation errors
  }

  try {
    apply_threads(common);
    if (gen->parsed()) return run_gen(spec_path, out_dir, common, cmdline);
    if (pretrain->parsed())
      return run_pretrain(data_path, net_path, train_path, out_dir, common, cmdline);
    if (probe->parsed())
      return run_probe(ckpt_dir, data_path, task, scheme, probe_path, random_init, seed, out_dir,
                       common, cmdline);
    if (reg->parsed())
      return run_register(ckpt_dir, data_path, trials, init, seed, threshold, out_dir, common,
                          cmdline);
    if (gc->parsed()) return run_gradcheck(seed, out_dir, cmdline);
    if (ev->parsed()) return run_eval(reports, out_dir, cmdline);
  } catch (const midnet::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    const std::string dump = diagnostic_dump(out_dir, cmdline, e.what());
    std::cerr << "error: " << e.what() << "\ndiagnostic: " << dump << "\n";
    return 2;
  }
  return 0;
}
