#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "advdoodle/store/attack_file.hpp"
#include "support.hpp"

#ifndef ADVDOODLE_CLI
#error "ADVDOODLE_CLI must name the advdoodle binary"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI inside `dir`, capturing both streams.
Run cli(const fs::path& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.string() + "' && '" + ADVDOODLE_CLI + "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

json last_json_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return json::parse(last);
}

// A tiny workspace: 3 classes of 40 px shapes, cropped to 32 px, short runs.
class CliWorkspace : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = testing_support::scratch_dir("cli");
    std::ofstream(dir / "run.json") << R"({
      "seed": 3, "dataset_root": "data", "out_dir": "out",
      "synth": {"classes": 3, "per_class": 20, "image_size": 40},
      "preprocess": {"resize_to": 36, "center_crop": 32},
      "train": {"epochs": 6},
      "attack": {"iterations": 60, "transform_batch": 4}
    })";
    ASSERT_EQ(cli(dir, "gen-dataset --config run.json").code, 0);
    ASSERT_EQ(cli(dir, "train --config run.json --arch cnn-a").code, 0);
    ASSERT_EQ(cli(dir, "train --config run.json --arch cnn-b").code, 0);
  }
};

fs::path CliWorkspace::dir;

}  // namespace

TEST_F(CliWorkspace, TrainWithTheSameSeedIsByteIdentical) {
  const auto a = cli(dir, "train --config run.json --seed 7 --model seven_a.model");
  const auto b = cli(dir, "train --config run.json --seed 7 --model seven_b.model");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(dir / "seven_a.model"), slurp(dir / "seven_b.model"));
  const auto c = cli(dir, "train --config run.json --seed 8 --model eight.model");
  ASSERT_EQ(c.code, 0);
  EXPECT_NE(slurp(dir / "seven_a.model"), slurp(dir / "eight.model"));
  const auto rep = last_json_line(a.out);
  EXPECT_EQ(rep["arch"], "cnn-a");
  EXPECT_GE(rep["val_accuracy"].get<double>(), 0.0);
}

TEST_F(CliWorkspace, AttackOverridesAndOutputs) {
  const auto r = cli(dir, "attack --config run.json --L 3 --n-itr 40 --alpha 0.5 --limit 3");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = last_json_line(r.out);
  EXPECT_EQ(rep["L"], 3);
  EXPECT_EQ(rep["images"], 3);
  std::size_t files = 0;
  for (const auto& f : fs::directory_iterator(dir / "out" / "attacks" / "cnn-a-L3-eot")) {
    const auto a = advdoodle::store::load_attack(f.path());
    EXPECT_EQ(a.config.curves, 3);
    EXPECT_EQ(a.config.iterations, 40);
    EXPECT_EQ(a.config.alpha, 0.5);
    EXPECT_FALSE(a.config.eot.is_identity());
    ++files;
  }
  EXPECT_EQ(files, 3u);
  const auto noeot = cli(dir, "attack --config run.json --no-eot --limit 1 --n-itr 5");
  ASSERT_EQ(noeot.code, 0) << noeot.err;
  for (const auto& f : fs::directory_iterator(dir / "out" / "attacks" / "cnn-a-L1-noeot"))
    EXPECT_TRUE(advdoodle::store::load_attack(f.path()).config.eot.is_identity());
  // Header plus one row per attacked image, across both runs.
  std::istringstream csv(slurp(dir / "out" / "outcomes.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, 1 + 3 + 1);
}

TEST_F(CliWorkspace, ValidateGradcamExportTransfer) {
  ASSERT_EQ(cli(dir, "attack --config run.json --limit 12 --n-itr 80").code, 0);
  std::string winner;
  for (const auto& f : fs::directory_iterator(dir / "out" / "attacks" / "cnn-a-L1-eot"))
    if (advdoodle::store::load_attack(f.path()).success) winner = f.path().string();
  ASSERT_FALSE(winner.empty()) << "no attack succeeded";

  const auto v = cli(dir, "validate --config run.json --attack '" + winner + "' --draws 25");
  ASSERT_EQ(v.code, 0) << v.err;
  const double rate = last_json_line(v.out)["robustness"].get<double>();
  EXPECT_GE(rate, 0.0);
  EXPECT_LE(rate, 1.0);

  const auto g = cli(dir, "gradcam --config run.json --attack '" + winner + "'");
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_TRUE(fs::exists(dir / "out" / "gradcam"));
  EXPECT_FALSE(fs::is_empty(dir / "out" / "gradcam"));

  const auto e = cli(dir, "export --attack '" + winner + "' --out ref.svg");
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(slurp(dir / "ref.svg").find("<path "), std::string::npos);

  const auto t = cli(dir, "transfer --config run.json --source cnn-a --target cnn-b");
  ASSERT_EQ(t.code, 0) << t.err;
  const auto rep = last_json_line(t.out);
  EXPECT_EQ(rep["source"], "cnn-a");
  EXPECT_EQ(rep["target"], "cnn-b");
  EXPECT_LE(rep["n_total"].get<int>(), 12);
  const auto csv = slurp(dir / "out" / "transfer.csv");
  EXPECT_EQ(csv.rfind("source,target,L,eot,n_total,n_success,score\n", 0), 0u);
  EXPECT_NE(csv.find("cnn-a,cnn-b,1,true,"), std::string::npos);
}

TEST_F(CliWorkspace, AblateReportsBothArms) {
  const auto r = cli(dir, "ablate --config run.json --limit 2 --n-itr 20");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto arms = last_json_line(r.out)["arms"];
  ASSERT_EQ(arms.size(), 2u);
  EXPECT_TRUE(arms[0]["eot"].get<bool>());
  EXPECT_FALSE(arms[1]["eot"].get<bool>());
  EXPECT_EQ(arms[0]["replicas_total"], 10);
}

TEST_F(CliWorkspace, ServeAnswersOverHttp) {
  ASSERT_EQ(cli(dir, "attack --config run.json --limit 12 --n-itr 80").code, 0);
  int pipefd[2];
  ASSERT_EQ(pipe(pipefd), 0);
  const pid_t pid = fork();
  if (pid == 0) {
    dup2(pipefd[1], STDOUT_FILENO);
    close(pipefd[0]);
    if (chdir(dir.c_str()) != 0) _exit(127);
    execl(ADVDOODLE_CLI, ADVDOODLE_CLI, "serve", "--config", "run.json", "--port", "0", nullptr);
    _exit(127);
  }
  close(pipefd[1]);
  FILE* out = fdopen(pipefd[0], "r");
  char buf[256] = {};
  ASSERT_NE(fgets(buf, sizeof(buf), out), nullptr);
  const auto where = json::parse(buf)["listening"].get<std::string>();
  const int port = std::stoi(where.substr(where.rfind(':') + 1));

  httplib::Client client("127.0.0.1", port);
  std::string attack_id;
  for (const auto& f : fs::directory_iterator(dir / "out" / "attacks" / "cnn-a-L1-eot"))
    if (advdoodle::store::load_attack(f.path()).success)
      attack_id = "cnn-a-L1-eot/" + f.path().stem().string();
  ASSERT_FALSE(attack_id.empty());
  auto created = client.Post("/sessions", json{{"attack", attack_id}}.dump(), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201) << created->body;
  const auto id = json::parse(created->body)["id"].get<std::string>();
  auto sub = client.Post("/sessions/" + id + "/strokes", R"({"strokes": []})", "application/json");
  ASSERT_TRUE(sub);
  EXPECT_EQ(sub->status, 200);
  const auto outcome = json::parse(sub->body)["outcome"];
  EXPECT_EQ(outcome["fooled"].get<bool>(),
            outcome["predicted_class_id"] != json::parse(created->body)["class_id"]);
  auto missing = client.Get("/sessions/nope");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  fclose(out);
  EXPECT_TRUE(WIFEXITED(status));
  EXPECT_TRUE(fs::exists(dir / "out" / "sessions" / (id + ".jsonl")));
}

TEST_F(CliWorkspace, FailuresPrintOneMachineReadableLine) {
  const auto missing_model = cli(dir, "attack --config run.json --model nowhere.model");
  EXPECT_NE(missing_model.code, 0);
  const auto e = last_json_line(missing_model.err)["error"];
  EXPECT_EQ(e["kind"], "not_found");
  EXPECT_NE(e["hint"].get<std::string>().find("advdoodle train"), std::string::npos);

  const auto missing_data = cli(dir, "train --config run.json --dataset nowhere");
  EXPECT_NE(missing_data.code, 0);
  EXPECT_NE(last_json_line(missing_data.err)["error"]["hint"].get<std::string>().find("gen-dataset"),
            std::string::npos);

  const auto missing_config = cli(dir, "train --config nope.json");
  EXPECT_NE(missing_config.code, 0);
  EXPECT_EQ(last_json_line(missing_config.err)["error"]["kind"], "not_found");

  std::ofstream(dir / "typo.json") << R"({"atack": {}})";
  const auto typo = cli(dir, "train --config typo.json");
  EXPECT_NE(typo.code, 0);
  EXPECT_EQ(last_json_line(typo.err)["error"]["kind"], "invalid_input");

  const auto bad_flag = cli(dir, "attack --bogus");
  EXPECT_NE(bad_flag.code, 0);
  EXPECT_TRUE(last_json_line(bad_flag.err).contains("error"));

  const auto bad_l = cli(dir, "attack --config run.json --L 0");
  EXPECT_NE(bad_l.code, 0);
  EXPECT_EQ(last_json_line(bad_l.err)["error"]["kind"], "invalid_input");

  EXPECT_NE(cli(dir, "").code, 0);
}
