#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "skilleval/cam.hpp"
#include "skilleval/rng.hpp"
#include "test_util.hpp"

using namespace skilleval;
using namespace skilleval::cam;

namespace {

kin::Matrix random_samples(std::size_t rows, Rng& rng) {
  kin::Matrix m(rows, kin::kNumChannels);
  for (double& v : m.data) v = rng.normal();
  return m;
}

nn::FcnModel zero_model(nn::HeadKind kind) {
  nn::FcnModel model = nn::init_model(kind, kin::default_channel_layout(), 0);
  for (auto& ref : nn::tensors(model.params)) {
    std::fill(ref.values->begin(), ref.values->end(), 0.0);
  }
  return model;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoError;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

TEST_CASE("one-hot head weight over a constant map gives a constant cam") {
  auto model = zero_model(nn::HeadKind::Classification);
  // Zero conv weights with a positive layer-3 bias make every final map the
  // constant 0.75 after ReLU.
  std::fill(model.params.layer3.b.begin(), model.params.layer3.b.end(), 0.75);
  model.params.head.w[1 * 32 + 4] = 1.0;  // class 1 reads filter 4 only

  Rng rng(1);
  const auto trace = nn::forward(model, random_samples(12, rng));
  const auto result = compute_cam(model, trace, 1);
  for (double v : result.values) CHECK(v == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(result.z_check == doctest::Approx(trace.z[1]).epsilon(1e-12));
}

TEST_CASE("zero head weights give a zero cam and bias-only reconstruction") {
  auto model = zero_model(nn::HeadKind::Regression);
  model.params.head.b[2] = 1.25;
  std::fill(model.params.layer3.b.begin(), model.params.layer3.b.end(), 0.5);
  Rng rng(2);
  const auto trace = nn::forward(model, random_samples(9, rng));
  const auto result = compute_cam(model, trace, 2);
  for (double v : result.values) CHECK(v == 0.0);
  CHECK(result.z_check == 1.25);
  // Degenerate flat map normalizes to all zeros.
  for (double v : result.normalized) CHECK(v == 0.0);
}

TEST_CASE("cam reconstruction matches the head pre-activation") {
  Rng rng(3);
  for (const auto kind : {nn::HeadKind::Classification, nn::HeadKind::Regression}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto model =
          nn::init_model(kind, kin::default_channel_layout(), rng.next_u64());
      const auto trace =
          nn::forward(model, random_samples(static_cast<std::size_t>(rng.uniform_int(5, 60)), rng));
      for (int c = 0; c < model.n_out(); ++c) {
        const auto result = compute_cam(model, trace, c);
        CHECK(std::abs(result.z_check - trace.z[c]) <= 1e-10);
      }
    }
  }
}

TEST_CASE("cam is linear in the head weights") {
  Rng rng(4);
  auto model = nn::init_model(nn::HeadKind::Classification, kin::default_channel_layout(), 9);
  const auto trace = nn::forward(model, random_samples(17, rng));

  auto model_a = model;
  auto model_b = model;
  for (double& v : model_a.params.head.w) v = rng.normal();
  for (double& v : model_b.params.head.w) v = rng.normal();
  auto model_sum = model;
  for (std::size_t i = 0; i < model.params.head.w.size(); ++i) {
    model_sum.params.head.w[i] = model_a.params.head.w[i] + model_b.params.head.w[i];
  }
  const auto cam_a = compute_cam(model_a, trace, 0);
  const auto cam_b = compute_cam(model_b, trace, 0);
  const auto cam_sum = compute_cam(model_sum, trace, 0);
  for (std::size_t t = 0; t < cam_sum.values.size(); ++t) {
    CHECK(std::abs(cam_sum.values[t] - (cam_a.values[t] + cam_b.values[t])) <= 1e-12);
  }
}

TEST_CASE("between-class cam differences ignore uniform per-filter shifts") {
  Rng rng(5);
  const auto model = nn::init_model(nn::HeadKind::Classification, kin::default_channel_layout(), 10);
  const auto trace = nn::forward(model, random_samples(21, rng));

  auto shifted = model;
  std::vector<double> shift(32);
  for (double& v : shift) v = rng.normal();
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < 32; ++k) shifted.params.head.w[c * 32 + k] += shift[k];
  }
  const auto a0 = compute_cam(model, trace, 0);
  const auto a2 = compute_cam(model, trace, 2);
  const auto b0 = compute_cam(shifted, trace, 0);
  const auto b2 = compute_cam(shifted, trace, 2);
  for (std::size_t t = 0; t < a0.values.size(); ++t) {
    const double before = a0.values[t] - a2.values[t];
    const double after = b0.values[t] - b2.values[t];
    CHECK(std::abs(before - after) <= 1e-10);
  }
}

TEST_CASE("normalization is invariant under positive affine maps") {
  Rng rng(6);
  std::vector<double> values(40);
  for (double& v : values) v = rng.normal();
  const auto base = minmax_normalize(values);
  auto transformed = values;
  for (double& v : transformed) v = 3.7 * v - 11.0;
  const auto scaled = minmax_normalize(transformed);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(std::abs(base[i] - scaled[i]) <= 1e-12);
    CHECK(base[i] >= 0.0);
    CHECK(base[i] <= 1.0);
  }
}

TEST_CASE("compute_cam validates index and trace") {
  Rng rng(7);
  const auto clf = nn::init_model(nn::HeadKind::Classification, kin::default_channel_layout(), 11);
  const auto reg = nn::init_model(nn::HeadKind::Regression, kin::default_channel_layout(), 12);
  const auto samples = random_samples(10, rng);
  const auto trace = nn::forward(clf, samples);
  CHECK(code_of([&] { compute_cam(clf, trace, 3); }) == ErrorCode::IndexOutOfRange);
  CHECK(code_of([&] { compute_cam(clf, trace, -1); }) == ErrorCode::IndexOutOfRange);
  CHECK(code_of([&] { compute_cam(reg, trace, 0); }) == ErrorCode::TraceMismatch);
}

TEST_CASE("csv export round-trips the raw map") {
  Rng rng(8);
  const auto model = nn::init_model(nn::HeadKind::Classification, kin::default_channel_layout(), 13);
  kin::KinematicTrial trial;
  trial.trial_id = "demo";
  trial.skill = kin::SkillLevel::Expert;
  trial.samples = random_samples(3, rng);
  const auto trace = nn::forward(model, trial.samples);
  std::vector<CamResult> results{compute_cam(model, trace, 0)};

  testutil::TempDir dir;
  export_cam(trial, model.layout, results, dir.file("cam.csv"), ExportFormat::Csv);

  std::ifstream in(dir.file("cam.csv"));
  std::string header;
  REQUIRE(std::getline(in, header));
  const auto cols = split_csv(header);
  REQUIRE(cols.size() == 2 + 2 + 12);  // index, seconds, raw+norm, 4x3 Cartesian
  CHECK(cols[2] == "cam_raw_Novice");
  CHECK(cols[3] == "cam_norm_Novice");
  CHECK(cols[4] == "ML_x");

  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto cells = split_csv(line);
    REQUIRE(cells.size() == cols.size());
    CHECK(std::stoul(cells[0]) == rows);
    const double raw = std::stod(cells[2]);
    CHECK(std::abs(raw - results[0].values[rows]) <= 1e-12);
    const double norm = std::stod(cells[3]);
    CHECK(norm >= 0.0);
    CHECK(norm <= 1.0);
    ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("json export mirrors the csv content") {
  Rng rng(9);
  const auto model = nn::init_model(nn::HeadKind::Regression, kin::default_channel_layout(), 14);
  kin::KinematicTrial trial;
  trial.trial_id = "demo";
  trial.osats = kin::OsatsScores{};
  trial.samples = random_samples(5, rng);
  const auto trace = nn::forward(model, trial.samples);
  std::vector<CamResult> results{compute_cam(model, trace, 1), compute_cam(model, trace, 5)};

  testutil::TempDir dir;
  export_cam(trial, model.layout, results, dir.file("cam.json"), ExportFormat::Json);
  const auto text = testutil::read_text(dir.file("cam.json"));
  CHECK(text.find("\"suture_needle_handling\"") != std::string::npos);
  CHECK(text.find("\"quality_of_final_product\"") != std::string::npos);
  CHECK(text.find("\"cartesian\"") != std::string::npos);
}

TEST_CASE("export rejects length mismatches") {
  Rng rng(10);
  const auto model = nn::init_model(nn::HeadKind::Classification, kin::default_channel_layout(), 15);
  kin::KinematicTrial trial;
  trial.trial_id = "demo";
  trial.skill = kin::SkillLevel::Novice;
  trial.samples = random_samples(6, rng);
  const auto trace = nn::forward(model, trial.samples);
  auto result = compute_cam(model, trace, 0);
  result.values.pop_back();
  result.normalized.pop_back();
  testutil::TempDir dir;
  CHECK(code_of([&] {
          export_cam(trial, model.layout, {result}, dir.file("bad.csv"), ExportFormat::Csv);
        }) == ErrorCode::LengthMismatch);
}
