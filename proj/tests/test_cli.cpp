#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "grapy/io.hpp"
#include "grapy/pnm.hpp"
#include "grapy/synth.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" GRAPY_CLI "' " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const fs::path& root() {
  static const fs::path p = fs::temp_directory_path() / "grapy_cli";
  return p;
}

std::string path(const fs::path& p) { return "'" + p.string() + "'"; }

const std::string kTiny =
    " --hidden 6,6 --channels 4 --pretrain-epochs 1 --epochs 1 --batch-size 4 --seed 3";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(root());
    fs::create_directories(root());
    const Result g = run("gen-data --out " + path(root() / "data") + " --scale 0.05 --seed 2");
    ASSERT_EQ(g.code, 0) << g.out;
  }

  static fs::path manifest(const std::string& name, const std::string& split = "train") {
    return root() / "data" / name / split / "manifest.tsv";
  }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train --out x").code, 2);
  EXPECT_EQ(run("train --train a --out b --lr -1").code, 2);
  EXPECT_EQ(run("train --train a --out b --levels 14").code, 2);
  EXPECT_EQ(run("gen-data --out x --size 8").code, 2);
  EXPECT_EQ(run("gradcheck --filter nothing-matches-this").code, 2);
  EXPECT_EQ(run("gradcheck --filter matmul", "GRAPY_SEED=abc").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, ConfigFiles) {
  const fs::path cfg = root() / "bad.cfg";
  grapy::write_file_atomically(cfg, "train = x\nout = y\nwarp_speed = 9\n");
  const Result unknown = run("train --config " + path(cfg));
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.out.find("warp_speed"), std::string::npos);
  grapy::write_file_atomically(cfg, "train = x\nout = y\nlr = 99\n");
  EXPECT_EQ(run("train --config " + path(cfg)).code, 2);

  grapy::write_file_atomically(cfg, "# tiny run\ntrain = " + manifest("A").string() + "\nout = " +
                           (root() / "cfg_run").string() + "\nchannels = 4\nhidden = \"6,6\"\n" +
                           "pretrain-epochs = 1\nepochs = 1\nbatch-size = 8\n");
  const Result ok = run("train --config " + path(cfg) + " --epochs 0");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_TRUE(fs::exists(root() / "cfg_run" / "model.grpy"));
}

TEST_F(Cli, GenDataIsDeterministic) {
  const Result g = run("gen-data --out " + path(root() / "again") + " --scale 0.05 --seed 2");
  ASSERT_EQ(g.code, 0) << g.out;
  for (const auto& e : fs::recursive_directory_iterator(root() / "data")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root() / "data");
    EXPECT_EQ(grapy::read_file(e.path()), grapy::read_file(root() / "again" / rel)) << rel;
  }
  const auto a = grapy::load_dataset(manifest("A"));
  EXPECT_EQ(a.size(), 10u);
  EXPECT_EQ(a.taxonomy.classes(3), 7);
}

TEST_F(Cli, TrainEvalPredict) {
  const fs::path out = root() / "single";
  const Result t = run("train --train " + path(manifest("A")) + " --test " + path(manifest("A", "test")) +
                    " --out " + path(out) + kTiny);
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_NE(t.out.find("test_miou="), std::string::npos);

  std::ifstream log(out / "train.log");
  std::string line;
  int records = 0;
  while (std::getline(log, line)) {
    std::istringstream is(line);
    int epoch = 0, step = 0;
    double loss = 0, lr = 0;
    ASSERT_TRUE(is >> epoch >> step >> loss >> lr) << line;
    EXPECT_TRUE(is.eof() || (is >> std::ws).eof()) << line;
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_GT(lr, 0);
    ++records;
  }
  EXPECT_EQ(records, 6);  // 10 samples, batch 4, two epochs

  const Result e = run("eval --model " + path(out / "model.grpy") + " --data " + path(manifest("A", "test")));
  ASSERT_EQ(e.code, 0) << e.out;
  for (const char* head : {"main", "gpm"}) {
    for (int level = 1; level <= 3; ++level) {
      const std::string key = std::string(head) + ".level" + std::to_string(level) + ".";
      EXPECT_NE(e.out.find(key + "miou="), std::string::npos) << key;
      EXPECT_NE(e.out.find(key + "mean_accuracy="), std::string::npos) << key;
    }
  }
  EXPECT_EQ(run("eval --model " + path(out / "model.grpy") + " --data " + path(manifest("B", "test"))).code, 4);
  EXPECT_EQ(run("eval --model " + path(manifest("A")) + " --data " + path(manifest("A", "test"))).code, 4);

  const fs::path pred = root() / "pred";
  const Result p = run("predict --model " + path(out / "model.grpy") + " --data " +
                    path(manifest("A", "test")) + " --out " + path(pred));
  ASSERT_EQ(p.code, 0) << p.out;
  const auto labels = grapy::load_dataset(manifest("A", "test")).labels;
  ASSERT_TRUE(fs::exists(pred / "00000.ppm"));
  ASSERT_TRUE(fs::exists(pred / "00001.ppm"));
  const grapy::RgbImage img = grapy::read_ppm(pred / "00000.ppm");
  EXPECT_EQ(img.height, 32);
  for (std::uint8_t v : img.pixels) EXPECT_TRUE(v == 0 || v == 64 || v == 128 || v == 192) << int(v);
}

TEST_F(Cli, LambdaZeroAndNoGpm) {
  const Result t = run("train --train " + path(manifest("A")) + " --out " + path(root() / "lam0") + kTiny +
                    " --lambda 0");
  EXPECT_EQ(t.code, 0) << t.out;
  const Result n = run("train --train " + path(manifest("A")) + " --out " + path(root() / "nogpm") + kTiny +
                    " --no-gpm");
  ASSERT_EQ(n.code, 0) << n.out;
  const Result e = run("eval --model " + path(root() / "nogpm" / "model.grpy") + " --data " +
                    path(manifest("A", "test")));
  EXPECT_EQ(e.code, 0);
  EXPECT_EQ(e.out.find("gpm.level1"), std::string::npos);
}

TEST_F(Cli, TrainIsReproducible) {
  for (const char* d : {"rep1", "rep2"}) {
    ASSERT_EQ(run("train --train " + path(manifest("C")) + " --out " + path(root() / d) + kTiny).code, 0);
  }
  EXPECT_EQ(grapy::read_file(root() / "rep1" / "model.grpy"), grapy::read_file(root() / "rep2" / "model.grpy"));
}

TEST_F(Cli, MutualLearning) {
  const fs::path out = root() / "ml";
  const Result t = run("train-ml --data " + path(root() / "data") + " --datasets A,B,C --finetune A" +
                    " --finetune-epochs 1 --rounds 2 --audit-sharing --out " + path(out) + kTiny);
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_NE(t.out.find("audit"), std::string::npos);
  EXPECT_EQ(t.out.find("FAIL"), std::string::npos) << t.out;
  EXPECT_TRUE(fs::exists(out / "joint.grpy"));
  EXPECT_TRUE(fs::exists(out / "finetuned-A.grpy"));

  std::ifstream log(out / "train_ml.log");
  std::string line;
  std::vector<int> datasets;
  while (std::getline(log, line)) {
    std::istringstream is(line);
    int epoch = 0, step = 0, dataset = 0;
    double loss = 0, lr = 0;
    ASSERT_TRUE(is >> epoch >> step >> loss >> lr >> dataset) << line;
    datasets.push_back(dataset);
  }
  // phase 2 cycles 1,2,3 right after the 1 pretrain epoch; fine-tuning stays on A
  ASSERT_GE(datasets.size(), 7u);
  EXPECT_EQ(datasets.back(), 1);
  std::set<int> seen(datasets.begin(), datasets.end());
  EXPECT_EQ(seen, (std::set<int>{1, 2, 3}));

  const Result e = run("eval --model " + path(out / "joint.grpy") + " --data " + path(manifest("B", "test")));
  EXPECT_EQ(e.code, 0) << e.out;
  EXPECT_EQ(run("eval --model " + path(out / "joint.grpy") + " --branch 1 --data " +
                path(manifest("B", "test"))).code, 4);
  EXPECT_EQ(run("train-ml --data " + path(root() / "data") + " --datasets A --out " + path(root() / "ml1")).code, 2);
}

TEST_F(Cli, GradcheckPasses) {
  const Result g = run("gradcheck");
  EXPECT_EQ(g.code, 0) << g.out;
  EXPECT_NE(g.out.find("PASS"), std::string::npos);
  EXPECT_EQ(g.out.find("FAIL"), std::string::npos);
}
