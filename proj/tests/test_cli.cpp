#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "midnet/config.hpp"

namespace fs = std::filesystem;
using midnet::config::read_text_file;
using midnet::config::write_text_file;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "midnet_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

CliResult run_cli(const std::string& args) {
  static int call = 0;
  fs::path out = scratch_root() / ("stdout" + std::to_string(call) + ".txt");
  fs::path err = scratch_root() / ("stderr" + std::to_string(call) + ".txt");
  ++call;
  const std::string cmd = std::string(MIDNET_CLI_PATH) + " " + args + " > " + out.string() +
                          " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  if (status != -1 && WIFEXITED(status)) r.code = WEXITSTATUS(status);
  r.out = read_text_file(out.string());
  r.err = read_text_file(err.string());
  return r;
}

// dataset + checkpoint shared by the pipeline cases below, built once
struct Fixture {
  fs::path data_dir;
  fs::path ckpt_dir;
  std::string manifest;
};

const Fixture& fixture() {
  static Fixture f = [] {
    Fixture fx;
    fs::path root = scratch_root();
    fx.data_dir = root / "data";
    fx.ckpt_dir = root / "ckpt";
    write_text_file((root / "gen.spec").string(),
                    "task = classification\n"
                    "kinds = sphere, box\n"
                    "per_class = 2\n"
                    "points = 64\n"
                    "seed = 9\n");
    CliResult gen = run_cli("gen --spec " + (root / "gen.spec").string() + " --out " +
                            fx.data_dir.string());
    REQUIRE(gen.code == 0);
    fx.manifest = (fx.data_dir / "manifest.csv").string();

    write_text_file((root / "net.cfg").string(),
                    "depth = 3\n"
                    "channels = 6, 8\n"
                    "stages = 1\n"
                    "blocks_per_stage = 1\n"
                    "shape_feature_dim = 8\n"
                    "point_feature_dim = 8\n"
                    "init_seed = 5\n");
    write_text_file((root / "train.cfg").string(),
                    "epochs = 2\n"
                    "batch_size = 4\n"
                    "lr = 0.01\n"
                    "patches_per_shape = 4\n"
                    "normals_knn = 8\n"
                    "seed = 3\n");
    CliResult pre = run_cli("pretrain --data " + fx.manifest + " --net " +
                            (root / "net.cfg").string() + " --train " +
                            (root / "train.cfg").string() + " --out " + fx.ckpt_dir.string());
    REQUIRE(pre.code == 0);
    return fx;
  }();
  return f;
}

}  // namespace

TEST_CASE("gradcheck subcommand passes cleanly") {
  fs::path out = scratch_root() / "gc";
  CliResult r = run_cli("gradcheck --seed 7 --out " + out.string());
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(fs::exists(out / "gradcheck.csv"));
  CHECK(fs::exists(out / "run.json"));
  std::string csv = read_text_file((out / "gradcheck.csv").string());
  CHECK(csv.rfind("name,max_rel_err,checked,pass\n", 0) == 0);
}

TEST_CASE("usage and validation failures exit 1") {
  SUBCASE("missing manifest is named in the error") {
    fs::path missing = scratch_root() / "does_not_exist.csv";
    CliResult r = run_cli("pretrain --data " + missing.string() + " --out " +
                          (scratch_root() / "p_out").string());
    CHECK(r.code == 1);
    CHECK(r.err.find("does_not_exist.csv") != std::string::npos);
    CHECK(!fs::exists(scratch_root() / "p_out" / "diagnostic.txt"));
  }
  SUBCASE("unknown subcommand") {
    CHECK(run_cli("frobnicate").code == 1);
  }
  SUBCASE("missing required option") {
    CHECK(run_cli("gen --out somewhere").code == 1);
  }
  SUBCASE("bad register init mode") {
    CliResult r = run_cli("register --ckpt nowhere --data nowhere --init sloppy");
    CHECK(r.code == 1);
    CHECK(r.err.find("feature or identity") != std::string::npos);
  }
  SUBCASE("eval without reports") {
    CHECK(run_cli("eval").code == 1);
  }
}

TEST_CASE("gen writes a loadable dataset and honors print-config") {
  const Fixture& fx = fixture();
  std::string manifest = read_text_file(fx.manifest);
  CHECK(manifest.rfind("path,class,seed,kind\n", 0) == 0);
  CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 5);  // header + 4 shapes
  CHECK(fs::exists(fx.data_dir / "shape_0000.xyz"));
  CHECK(fs::exists(fx.data_dir / "run.json"));

  fs::path never = scratch_root() / "never_created";
  CliResult r = run_cli("gen --print-config --spec " + (scratch_root() / "gen.spec").string() +
                        " --out " + never.string());
  CHECK(r.code == 0);
  CHECK(r.out.find("kinds = sphere, box") != std::string::npos);
  CHECK(!fs::exists(never));
}

TEST_CASE("pretrain writes a resumable checkpoint directory") {
  const Fixture& fx = fixture();
  for (const char* name : {"ckpt.bin", "ckpt.meta", "net.cfg", "train.cfg", "metrics.csv",
                           "run.json"})
    CHECK(fs::exists(fx.ckpt_dir / name));
  std::string metrics = read_text_file((fx.ckpt_dir / "metrics.csv").string());
  CHECK(metrics.rfind("step,epoch,lr,loss,shape_acc,patch_acc\n", 0) == 0);
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 3);  // header + 2 steps
}

TEST_CASE("probe reruns are byte-identical") {
  const Fixture& fx = fixture();
  write_text_file((scratch_root() / "probe.cfg").string(),
                  "epochs = 3\n"
                  "views_per_shape = 2\n"
                  "eval_views = 1\n"
                  "hidden = 8\n");
  const std::string base = "probe --ckpt " + fx.ckpt_dir.string() + " --data " + fx.manifest +
                           " --task cls --scheme fix --seed 5 --probe " +
                           (scratch_root() / "probe.cfg").string() + " --out ";
  CliResult first = run_cli(base + (scratch_root() / "probe1").string());
  CliResult second = run_cli(base + (scratch_root() / "probe2").string());
  REQUIRE(first.code == 0);
  REQUIRE(second.code == 0);
  CHECK(first.out.find("eval accuracy") != std::string::npos);
  std::string r1 = read_text_file((scratch_root() / "probe1" / "report.csv").string());
  std::string r2 = read_text_file((scratch_root() / "probe2" / "report.csv").string());
  CHECK(r1 == r2);
  CHECK(r1.rfind("name,value,support\n", 0) == 0);
}

TEST_CASE("register runs both initialization modes") {
  const Fixture& fx = fixture();
  fs::path out = scratch_root() / "reg";
  CliResult ident = run_cli("register --ckpt " + fx.ckpt_dir.string() + " --data " + fx.manifest +
                            " --trials 2 --init identity --seed 4 --out " + out.string());
  CHECK(ident.code == 0);
  CHECK(ident.out.find("success rate") != std::string::npos);
  std::string trials = read_text_file((out / "trials.csv").string());
  CHECK(trials.rfind("trial,shape,hausdorff,success\n", 0) == 0);
  CHECK(std::count(trials.begin(), trials.end(), '\n') == 3);

  CliResult feat = run_cli("register --ckpt " + fx.ckpt_dir.string() + " --data " + fx.manifest +
                           " --trials 1 --init feature --seed 4");
  CHECK(feat.code == 0);
}

TEST_CASE("corrupt checkpoints exit 2 with a diagnostic dump") {
  const Fixture& fx = fixture();
  fs::path broken = scratch_root() / "broken_ckpt";
  fs::create_directories(broken);
  for (const char* name : {"ckpt.meta", "net.cfg", "train.cfg"})
    fs::copy_file(fx.ckpt_dir / name, broken / name, fs::copy_options::overwrite_existing);
  write_text_file((broken / "ckpt.bin").string(), "not a tensor file");

  fs::path out = scratch_root() / "broken_out";
  CliResult r = run_cli("probe --ckpt " + broken.string() + " --data " + fx.manifest +
                        " --task cls --scheme fix --out " + out.string());
  CHECK(r.code == 2);
  CHECK(r.err.find("diagnostic") != std::string::npos);
  CHECK(fs::exists(out / "diagnostic.txt"));
  std::string dump = read_text_file((out / "diagnostic.txt").string());
  CHECK(dump.find("error:") != std::string::npos);
}

TEST_CASE("eval aggregates report rows weighted by support") {
  fs::path dir = scratch_root() / "eval";
  fs::create_directories(dir);
  write_text_file((dir / "r1.csv").string(),
                  "name,value,support\noverall,0.5,10\nsphere,1,4\n");
  write_text_file((dir / "r2.csv").string(),
                  "name,value,support\noverall,1,30\n");
  CliResult r = run_cli("eval --report " + (dir / "r1.csv").string() + " --report " +
                        (dir / "r2.csv").string() + " --out " + dir.string());
  CHECK(r.code == 0);
  CHECK(r.out.find("overall,0.875,40") != std::string::npos);
  CHECK(r.out.find("sphere,1,4") != std::string::npos);
  CHECK(fs::exists(dir / "aggregate.csv"));

  write_text_file((dir / "bad.csv").string(), "wrong,header\n");
  CHECK(run_cli("eval --report " + (dir / "bad.csv").string()).code == 1);
}
