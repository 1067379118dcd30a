#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "helpers.hpp"

using namespace molddp;
using molddp::testing::read_text;
using molddp::testing::TempDir;
using molddp::testing::write_text;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

Run cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + MOLDDP_CLI + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.output.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string dir_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + read_text(f);
  return all;
}

nlohmann::json load_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

const std::string kThree = "smiles,gap\nC,1.5\nCCO,2.25\nc1ccccc1,3.0\n";

}  // namespace

TEST(Cli, PreprocessThreeMolecules) {
  TempDir tmp;
  write_text(tmp / "m.csv", kThree);
  const auto r = cli("preprocess --input " + (tmp / "m.csv").string() + " --output " + (tmp / "m.gpack").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("vocab: H C O"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("rejected: 0 of 3 records"), std::string::npos);
  gpack::GpackReader reader(tmp / "m.gpack");
  ASSERT_EQ(reader.num_graphs(), 3);
  EXPECT_EQ(reader.read_graph(0).num_nodes, 5);
  EXPECT_EQ(reader.read_graph(1).num_nodes, 9);
  EXPECT_EQ(reader.read_graph(2).num_nodes, 12);
  EXPECT_EQ(reader.read_graph(1).y, std::vector<float>{2.25f});
  EXPECT_EQ(reader.summary().total_nodes, 26u);

  const auto i = cli("inspect " + (tmp / "m.gpack").string() + " --graph 0");
  ASSERT_EQ(i.code, 0) << i.output;
  EXPECT_NE(i.output.find("graph 0: nodes=5 edges=8 y=1.5"), std::string::npos) << i.output;
  EXPECT_NE(i.output.find("vocab: H C O"), std::string::npos);
}

TEST(Cli, BadRecordReportedWithLineNumber) {
  TempDir tmp;
  write_text(tmp / "m.csv", "smiles,gap\nC,1\nC1CC,2\nCC,3\nCCC,4\n");
  const auto r = cli("preprocess --input " + (tmp / "m.csv").string() + " --output " + (tmp / "m.gpack").string() +
                     " --max-failure-rate 0.5");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("m.csv:3: UnclosedRing"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("rejected: 1 of 4 records"), std::string::npos) << r.output;
  EXPECT_EQ(gpack::GpackReader(tmp / "m.gpack").num_graphs(), 3);

  const auto log = tmp / "errors.log";
  const auto again = cli("preprocess --input " + (tmp / "m.csv").string() + " --output " + (tmp / "n.gpack").string() +
                         " --max-failure-rate 0.5 --error-log " + log.string());
  ASSERT_EQ(again.code, 0);
  EXPECT_NE(read_text(log).find(":3: UnclosedRing"), std::string::npos);
}

TEST(Cli, FailureThresholdExitsTwoAndWritesNothing) {
  TempDir tmp;
  write_text(tmp / "m.csv", "smiles,gap\nC,1\nC1CC,2\nCX,3\nCC,4\n");
  const auto r = cli("preprocess --input " + (tmp / "m.csv").string() + " --output " + (tmp / "m.gpack").string());
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_FALSE(fs::exists(tmp / "m.gpack" / "meta.idx"));
}

TEST(Cli, RerunIsByteIdenticalAcrossWorkerCounts) {
  TempDir tmp;
  molddp::testing::write_corpus(tmp / "c.csv", 300, 3);
  const std::string in = " --input " + (tmp / "c.csv").string();
  ASSERT_EQ(cli("preprocess" + in + " --output " + (tmp / "a.gpack").string() + " --subfiles 2").code, 0);
  ASSERT_EQ(cli("preprocess" + in + " --output " + (tmp / "b.gpack").string() + " --subfiles 2").code, 0);
  EXPECT_EQ(dir_bytes(tmp / "a.gpack"), dir_bytes(tmp / "b.gpack"));
  ASSERT_EQ(cli("preprocess" + in + " --output " + (tmp / "o1").string() + " --format object").code, 0);
  ASSERT_EQ(cli("preprocess" + in + " --output " + (tmp / "o2").string() + " --format object --workers 3").code, 0);
  EXPECT_EQ(dir_bytes(tmp / "o1"), dir_bytes(tmp / "o2"));
  // existing output needs --overwrite
  EXPECT_EQ(cli("preprocess" + in + " --output " + (tmp / "a.gpack").string()).code, 1);
  EXPECT_EQ(cli("preprocess" + in + " --output " + (tmp / "a.gpack").string() + " --overwrite").code, 0);
}

TEST(Cli, InspectErrorsAndEmptyContainer) {
  TempDir tmp;
  write_text(tmp / "m.csv", kThree);
  ASSERT_EQ(cli("preprocess --input " + (tmp / "m.csv").string() + " --output " + (tmp / "m.gpack").string()).code, 0);
  EXPECT_EQ(cli("inspect " + (tmp / "m.gpack").string() + " --graph 3").code, 1);
  EXPECT_EQ(cli("inspect " + tmp.path().string()).code, 1);

  gpack::GpackSchema s;
  s.node_features = 5;
  s.vocab = {"H", "C"};
  gpack::write_container(tmp / "e.gpack", s, std::vector<GraphSample>{}, 1, 1);
  const auto r = cli("inspect " + (tmp / "e.gpack").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("e.gpack                             0              0              0        0.0"),
            std::string::npos)
      << r.output;

  ASSERT_EQ(cli("preprocess --input " + (tmp / "m.csv").string() + " --output " + (tmp / "m.obj").string() +
                " --format object")
                .code,
            0);
  const auto o = cli("inspect " + (tmp / "m.obj").string());
  ASSERT_EQ(o.code, 0) << o.output;
  EXPECT_NE(o.output.find("object store, 3 records"), std::string::npos);
}

TEST(Cli, TrainWritesArtefactsWithPerRankTimings) {
  TempDir tmp;
  molddp::testing::write_corpus(tmp / "c.csv", 200, 4);
  ASSERT_EQ(cli("preprocess --input " + (tmp / "c.csv").string() + " --output " + (tmp / "c.gpack").string()).code, 0);
  const auto out = tmp / "run";
  const auto r = cli("train --data " + (tmp / "c.gpack").string() + " --world-size 2 --epochs 3 --layers 1 --hidden 8" +
                     " --batch-size 16 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"metrics.json", "parity.csv", "loss.csv", "checkpoint.bin"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto j = load_json(out / "metrics.json");
  EXPECT_TRUE(metrics_compatible(j));
  EXPECT_EQ(j["timings"].size(), 6u);
  EXPECT_EQ(j["history"].size(), 3u);
  EXPECT_EQ(j["run"]["world_size"], 2);
  EXPECT_EQ(j["run"]["backend"], "gpack");
  const auto loss = read_text(out / "loss.csv");
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 4);
  const auto ckpt = load_checkpoint<float>(out / "checkpoint.bin");
  EXPECT_EQ(ckpt.config().num_conv_layers, 1);
}

TEST(Cli, EnvironmentAndConfigFilePrecedence) {
  TempDir tmp;
  molddp::testing::write_corpus(tmp / "c.csv", 120, 5);
  const std::string data = " --data " + (tmp / "c.csv").string() + " --backend inline --layers 1 --hidden 4";
  auto epochs_of = [&](const std::string& name) {
    return load_json(tmp / name / "metrics.json")["run"]["hyper"]["max_epochs"].get<int>();
  };
  ASSERT_EQ(cli("train" + data + " --out " + (tmp / "env").string(), "MOLDDP_EPOCHS=1").code, 0);
  EXPECT_EQ(epochs_of("env"), 1);
  ASSERT_EQ(cli("train" + data + " --epochs 2 --out " + (tmp / "flag").string(), "MOLDDP_EPOCHS=1").code, 0);
  EXPECT_EQ(epochs_of("flag"), 2);
  write_text(tmp / "run.ini", "epochs = 4\nbatch-size = 64\n");
  ASSERT_EQ(cli("train" + data + " --config " + (tmp / "run.ini").string() + " --out " + (tmp / "cfg").string(),
                "MOLDDP_EPOCHS=1")
                .code,
            0);
  EXPECT_EQ(epochs_of("cfg"), 4);
  EXPECT_EQ(load_json(tmp / "cfg" / "metrics.json")["run"]["hyper"]["local_batch_size"], 64);
}

TEST(Cli, ArgumentValidation) {
  TempDir tmp;
  EXPECT_NE(cli("bench-io --gpack " + tmp.path().string() + " --repeats 1").code, 0);
  EXPECT_NE(cli("train --data x --precision f16").code, 0);
  EXPECT_NE(cli("preprocess --input x").code, 0);
  EXPECT_NE(cli("frobnicate").code, 0);
  EXPECT_EQ(cli("train --data " + (tmp / "missing").string() + " --out " + (tmp / "o").string()).code, 1);
}

TEST(Cli, SynthThenBenchIo) {
  TempDir tmp;
  ASSERT_EQ(cli("synth --output " + (tmp / "s.csv").string() + " --count 150 --seed 2").code, 0);
  const auto text = read_text(tmp / "s.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 151);
  EXPECT_EQ(text.substr(0, 11), "smiles,gap\n");
  ASSERT_EQ(cli("preprocess --input " + (tmp / "s.csv").string() + " --output " + (tmp / "s.gpack").string()).code, 0);
  ASSERT_EQ(cli("preprocess --input " + (tmp / "s.csv").string() + " --output " + (tmp / "s.obj").string() +
                " --format object")
                .code,
            0);
  const auto r = cli("bench-io --warm --repeats 3 --batch-size 16 --inline " + (tmp / "s.csv").string() +
                     " --object " + (tmp / "s.obj").string() + " --gpack " + (tmp / "s.gpack").string() + " --out " +
                     (tmp / "b.json").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = load_json(tmp / "b.json");
  ASSERT_TRUE(j.contains("backends"));
  EXPECT_EQ(j["backends"].size(), 3u);
  EXPECT_TRUE(j["checksums_match"].get<bool>());
}
