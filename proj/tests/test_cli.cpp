#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <string>
#include <sys/wait.h>

#include "skilleval/kinematics.hpp"
#include "test_util.hpp"

using namespace skilleval;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(SKILLEVAL_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult result;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) result.output.append(buf, n);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
  std::size_t count = 0, pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    ++count;
    pos += needle.size();
  }
  return count;
}

}  // namespace

TEST_CASE("help lists subcommands and defaults") {
  const auto help = run_cli("--help");
  CHECK(help.exit_code == 0);
  for (const char* sub : {"synth", "train", "eval", "cam", "gradcheck"}) {
    CHECK(help.output.find(sub) != std::string::npos);
  }
  const auto train_help = run_cli("train --help");
  CHECK(train_help.exit_code == 0);
  CHECK(train_help.output.find("0.001") != std::string::npos);   // lr default
  CHECK(train_help.output.find("1000") != std::string::npos);    // epochs default
  CHECK(train_help.output.find("1e-05") != std::string::npos);   // l2 default
}

TEST_CASE("synth writes a manifest and is byte-deterministic") {
  testutil::TempDir dir;
  const std::string base =
      " --seed 4 --per-class 3 --length-min 30 --length-max 40 --tasks Suturing";
  const auto a = run_cli("synth --out " + (dir.path() / "a").string() + base);
  CHECK(a.exit_code == 0);
  CHECK(a.output.find("manifest.json") != std::string::npos);
  const auto b = run_cli("synth --out " + (dir.path() / "b").string() + base);
  CHECK(b.exit_code == 0);

  const auto manifest = kin::parse_manifest(dir.path() / "a" / "manifest.json");
  CHECK(manifest.entries.size() == 9);

  CHECK(testutil::read_text(dir.path() / "a" / "manifest.json") ==
        testutil::read_text(dir.path() / "b" / "manifest.json"));
  CHECK(testutil::read_text(dir.path() / "a" / "motifs.json") ==
        testutil::read_text(dir.path() / "b" / "motifs.json"));
  CHECK(testutil::read_text(dir.path() / "a" / manifest.entries[0].kinematics_path) ==
        testutil::read_text(dir.path() / "b" / manifest.entries[0].kinematics_path));

  CHECK(run_cli("synth --out " + (dir.path() / "c").string() + " --per-class 0").exit_code != 0);

  // Multiple tasks land in one manifest.
  const auto multi = run_cli("synth --out " + (dir.path() / "m").string() +
                             " --seed 4 --per-class 2 --length-min 30 --length-max 40" +
                             " --tasks Suturing,KnotTying");
  CHECK(multi.exit_code == 0);
  const auto combined = kin::parse_manifest(dir.path() / "m" / "manifest.json");
  CHECK(combined.entries.size() == 12);
  std::size_t knot = 0;
  for (const auto& e : combined.entries) knot += e.task == kin::Task::KnotTying;
  CHECK(knot == 6);
}

TEST_CASE("train, cam, and eval drive the full pipeline") {
  testutil::TempDir dir;
  const auto data = (dir.path() / "data").string();
  REQUIRE(run_cli("synth --out " + data +
                  " --seed 2 --per-class 3 --length-min 30 --length-max 40")
              .exit_code == 0);
  const std::string manifest = data + "/manifest.json";

  // Classification training with a tiny epoch budget.
  const auto model_path = (dir.path() / "clf.json").string();
  const auto train_out = run_cli("train --manifest " + manifest +
                                 " --task Suturing --head classification --out " + model_path +
                                 " --epochs 2 --seed 1");
  CHECK(train_out.exit_code == 0);
  const auto history = testutil::read_text(dir.path() / "clf.history.json");
  CHECK(history.find("\"learning_rate\": 0.001") != std::string::npos);
  CHECK(history.find("\"l2_lambda\": 1e-05") != std::string::npos);
  CHECK(count_occurrences(history, "\"train_loss\"") == 2);  // one record per epoch

  // Missing regression labels are a hard error.
  const auto entries = kin::parse_manifest(manifest);
  const auto kin_file = data + "/" + entries.entries[0].kinematics_path;
  testutil::write_text(dir.file("skill_only.json"),
                       R"({"trials": [{"task": "Suturing", "subject_id": "X",
                           "super_trial_index": 1, "kinematics_path": ")" +
                           kin_file + R"(", "skill": "Novice"}]})");
  CHECK(run_cli("train --manifest " + dir.file("skill_only.json").string() +
                " --task Suturing --head regression --out " + (dir.path() / "x.json").string())
            .exit_code != 0);

  // Activation-map export: one column pair per class.
  const auto cam_csv = (dir.path() / "cam.csv").string();
  const auto cam_out = run_cli("cam --model " + model_path + " --kinematics " + kin_file +
                               " --outputs all --format csv --out " + cam_csv);
  CHECK(cam_out.exit_code == 0);
  const auto csv = testutil::read_text(cam_csv);
  CHECK(count_occurrences(csv.substr(0, csv.find('\n')), "cam_raw_") == 3);

  // Regression model: selected outputs are named by rating component.
  const auto reg_path = (dir.path() / "reg.json").string();
  REQUIRE(run_cli("train --manifest " + manifest +
                  " --task Suturing --head regression --out " + reg_path +
                  " --epochs 2 --seed 1")
              .exit_code == 0);
  const auto reg_cam = run_cli("cam --model " + reg_path + " --kinematics " + kin_file +
                               " --outputs 1,5 --format csv --out " + cam_csv);
  CHECK(reg_cam.exit_code == 0);
  const auto reg_csv = testutil::read_text(cam_csv);
  const auto reg_header = reg_csv.substr(0, reg_csv.find('\n'));
  CHECK(count_occurrences(reg_header, "cam_raw_") == 2);
  CHECK(reg_header.find("suture_needle_handling") != std::string::npos);
  CHECK(reg_header.find("quality_of_final_product") != std::string::npos);

  // Out-of-range output index.
  CHECK(run_cli("cam --model " + reg_path + " --kinematics " + kin_file +
                " --outputs 7 --out " + cam_csv)
            .exit_code != 0);

  // Evaluation prints the aggregate and rejects --repeats 0.
  const auto report = (dir.path() / "report.json").string();
  const auto eval_out = run_cli("eval --manifest " + manifest +
                                " --task Suturing --head classification --repeats 1 --seed 3" +
                                " --epochs 2 --report " + report);
  CHECK(eval_out.exit_code == 0);
  CHECK(eval_out.output.find("micro") != std::string::npos);
  CHECK(run_cli("eval --manifest " + manifest +
                " --task Suturing --head classification --repeats 0 --report " + report)
            .exit_code != 0);
}

TEST_CASE("gradcheck rejects lengths below the kernel span") {
  CHECK(run_cli("gradcheck --length 2").exit_code != 0);
}

TEST_CASE("gradcheck output is deterministic for a fixed seed") {
  const auto a = run_cli("gradcheck --seed 3 --length 5");
  const auto b = run_cli("gradcheck --seed 3 --length 5");
  CHECK(a.exit_code == 0);
  CHECK(a.output == b.output);
  CHECK(a.output.find("max_rel_err") != std::string::npos);
}
