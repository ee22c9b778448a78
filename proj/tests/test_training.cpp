#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "skilleval/training.hpp"
#include "test_util.hpp"

using namespace skilleval;
using namespace skilleval::train;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoError;
}

std::vector<kin::KinematicTrial> small_dataset(std::uint64_t seed, int per_class) {
  kin::SynthConfig config;
  config.n_per_class = per_class;
  config.min_length = 30;
  config.max_length = 40;
  return kin::synth_dataset(seed, config).trials;
}

bool same_params(const nn::ModelParams& a, const nn::ModelParams& b) {
  const auto ta = nn::tensors(a);
  const auto tb = nn::tensors(b);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (*ta[i].values != *tb[i].values) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam_step with zero gradients and no decay is the identity") {
  auto model = nn::init_model(nn::HeadKind::Classification, kin::default_channel_layout(), 1);
  const auto before = model.params;
  auto state = AdamState::zeros_like(model.params);
  TrainConfig config;
  config.l2_lambda = 0.0;
  adam_step(model, nn::zeros_like(model.params), state, config);
  CHECK(same_params(model.params, before));
  CHECK(state.t == 1);
}

TEST_CASE("adam_step single-parameter hand value") {
  auto model = nn::init_model(nn::HeadKind::Classification, kin::default_channel_layout(), 2);
  for (auto& ref : nn::tensors(model.params)) {
    std::fill(ref.values->begin(), ref.values->end(), 0.0);
  }
  auto grads = nn::zeros_like(model.params);
  grads.layer3.b[0] = 1.0;

  auto state = AdamState::zeros_like(model.params);
  TrainConfig config;
  config.l2_lambda = 0.0;
  adam_step(model, grads, state, config);

  // m_hat = v_hat = 1 after one step, so the update is lr / (1 + eps).
  const double expected = -0.001 / (1.0 + 1e-8);
  CHECK(model.params.layer3.b[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(model.params.layer3.b[1] == 0.0);
  CHECK(model.params.head.w[0] == 0.0);
}

TEST_CASE("weight decay shrinks parameters when data gradients vanish") {
  // One update with zero data gradient moves every parameter toward zero,
  // whatever the step counter's bias correction says.
  const auto reference =
      nn::init_model(nn::HeadKind::Regression, kin::default_channel_layout(), 3);
  TrainConfig config;  // defaults: l2 = 1e-5
  const auto zero_grads = nn::zeros_like(reference.params);
  for (long t : {1L, 2L, 10L, 1000L}) {
    auto model = reference;
    auto state = AdamState::zeros_like(model.params);
    state.t = t - 1;  // adam_step increments before use
    adam_step(model, zero_grads, state, config);
    CHECK(state.t == t);
    const auto now = nn::tensors(model.params);
    const auto before = nn::tensors(reference.params);
    for (std::size_t ti = 0; ti < now.size(); ++ti) {
      for (std::size_t i = 0; i < now[ti].values->size(); ++i) {
        const double was = (*before[ti].values)[i];
        const double is = (*now[ti].values)[i];
        if (was == 0.0) {
          CHECK(is == 0.0);
        } else {
          CHECK(std::abs(is) < std::abs(was));
        }
      }
    }
  }
}

TEST_CASE("adam_step rejects mismatched shapes") {
  auto model = nn::init_model(nn::HeadKind::Classification, kin::default_channel_layout(), 4);
  auto grads = nn::zeros_like(model.params);
  grads.layer3.w.pop_back();
  auto state = AdamState::zeros_like(model.params);
  TrainConfig config;
  CHECK(code_of([&] { adam_step(model, grads, state, config); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("split_validation sizes, determinism, and stratification") {
  const auto ten = small_dataset(5, 4);  // 12 trials; take the first 10
  std::vector<kin::KinematicTrial> trials(ten.begin(), ten.begin() + 10);
  {
    Rng rng(9);
    const auto [train_set, val_set] = split_validation(trials, 0.1, rng);
    CHECK(train_set.size() == 9);
    CHECK(val_set.size() == 1);
  }
  {
    Rng r1(9), r2(9);
    const auto [t1, v1] = split_validation(trials, 0.3, r1);
    const auto [t2, v2] = split_validation(trials, 0.3, r2);
    REQUIRE(v1.size() == v2.size());
    for (std::size_t i = 0; i < v1.size(); ++i) CHECK(v1[i].trial_id == v2[i].trial_id);
  }
  {
    const auto thirty = small_dataset(6, 10);
    Rng rng(10);
    const auto [train_set, val_set] = split_validation(thirty, 0.2, rng);
    CHECK(val_set.size() == 6);
    std::array<int, 3> counts{};
    for (const auto& t : val_set) ++counts[static_cast<int>(*t.skill)];
    CHECK(counts == std::array<int, 3>{2, 2, 2});

    // Disjoint and exhaustive.
    std::set<std::string> ids;
    for (const auto& t : train_set) ids.insert(t.trial_id);
    for (const auto& t : val_set) CHECK(ids.insert(t.trial_id).second);
    CHECK(ids.size() == thirty.size());
  }
  {
    std::vector<kin::KinematicTrial> one(trials.begin(), trials.begin() + 1);
    Rng rng(11);
    CHECK(code_of([&] { split_validation(one, 0.1, rng); }) == ErrorCode::TooFewTrials);
  }
}

TEST_CASE("train bookkeeping with a single epoch") {
  const auto dataset = small_dataset(7, 2);
  TrainConfig config;
  config.max_epochs = 1;
  config.seed = 3;
  const auto result = train::train(dataset, nn::HeadKind::Classification, config);
  REQUIRE(result.history.epochs.size() == 1);
  CHECK(result.history.best_epoch == 1);
  CHECK(result.history.best_validation_loss == result.history.epochs[0].validation_loss);
}

TEST_CASE("train is a pure function of dataset, head, and config") {
  const auto dataset = small_dataset(8, 2);
  TrainConfig config;
  config.max_epochs = 3;
  config.seed = 17;
  const auto a = train::train(dataset, nn::HeadKind::Classification, config);
  const auto b = train::train(dataset, nn::HeadKind::Classification, config);
  CHECK(same_params(a.model.params, b.model.params));
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    CHECK(a.history.epochs[i].train_loss == b.history.epochs[i].train_loss);
    CHECK(a.history.epochs[i].validation_loss == b.history.epochs[i].validation_loss);
  }
}

TEST_CASE("checkpoint selects the minimum validation loss") {
  const auto dataset = small_dataset(9, 3);
  TrainConfig config;
  config.max_epochs = 8;
  config.seed = 5;
  const auto result = train::train(dataset, nn::HeadKind::Regression, config);

  double min_val = result.history.epochs[0].validation_loss;
  for (const auto& e : result.history.epochs) min_val = std::min(min_val, e.validation_loss);
  CHECK(result.history.best_validation_loss == min_val);
  for (const auto& e : result.history.epochs) {
    CHECK(e.validation_loss >= result.history.best_validation_loss);
  }

  // Re-evaluating the returned snapshot on the validation split reproduces the
  // recorded best loss.
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& trial : dataset) {
    if (std::find(result.history.val_ids.begin(), result.history.val_ids.end(), trial.trial_id) ==
        result.history.val_ids.end()) {
      continue;
    }
    const auto trace = predict_trace(result.model, result.stats, trial.samples);
    total += nn::trace_loss(trace, nn::Target{*trial.osats});
    ++n;
  }
  REQUIRE(n == result.history.val_ids.size());
  CHECK(std::abs(total / n - result.history.best_validation_loss) <= 1e-12);
}

TEST_CASE("early stopping halts once validation stalls") {
  const auto dataset = small_dataset(13, 3);
  TrainConfig config;
  config.max_epochs = 200;
  config.seed = 2;
  config.early_stop = true;
  config.early_stop_patience = 1;  // stop at the first non-improving epoch
  const auto result = train::train(dataset, nn::HeadKind::Classification, config);
  const auto epochs = static_cast<int>(result.history.epochs.size());
  CHECK(epochs < config.max_epochs);
  CHECK(epochs == result.history.best_epoch + config.early_stop_patience);
}

TEST_CASE("train validates labels and inputs") {
  TrainConfig config;
  CHECK(code_of([&] { train::train({}, nn::HeadKind::Classification, config); }) ==
        ErrorCode::EmptyDataset);

  auto dataset = small_dataset(10, 2);
  for (auto& t : dataset) t.osats.reset();
  CHECK(code_of([&] { train::train(dataset, nn::HeadKind::Regression, config); }) ==
        ErrorCode::LabelMismatch);

  TrainConfig bad;
  bad.max_epochs = 0;
  CHECK(code_of([&] { train::train(dataset, nn::HeadKind::Classification, bad); }) ==
        ErrorCode::InvalidConfig);
}

TEST_CASE("model files round-trip exactly") {
  testutil::TempDir dir;
  const auto dataset = small_dataset(11, 2);
  TrainConfig config;
  config.max_epochs = 2;
  config.seed = 23;
  const auto result = train::train(dataset, nn::HeadKind::Classification, config);

  const auto path = dir.file("model.json");
  save_model(result.model, result.stats, path);
  const auto [loaded, stats] = load_model(path);

  CHECK(loaded.head_kind == result.model.head_kind);
  CHECK(same_params(loaded.params, result.model.params));
  for (int c = 0; c < kin::kNumChannels; ++c) {
    CHECK(stats.mean[c] == result.stats.mean[c]);
    CHECK(stats.stddev[c] == result.stats.stddev[c]);
  }

  const auto probe = dataset.front().samples;
  const auto t1 = predict_trace(result.model, result.stats, probe);
  const auto t2 = predict_trace(loaded, stats, probe);
  REQUIRE(t1.z.size() == t2.z.size());
  for (std::size_t i = 0; i < t1.z.size(); ++i) {
    CHECK(std::abs(t1.z[i] - t2.z[i]) <= 1e-15);
  }
}

TEST_CASE("model loader flags corruption and version drift") {
  testutil::TempDir dir;
  const auto dataset = small_dataset(12, 2);
  TrainConfig config;
  config.max_epochs = 1;
  const auto result = train::train(dataset, nn::HeadKind::Regression, config);
  const auto path = dir.file("model.json");
  save_model(result.model, result.stats, path);

  const std::string full = testutil::read_text(path);
  testutil::write_text(dir.file("trunc.json"), full.substr(0, full.size() / 2));
  CHECK(code_of([&] { load_model(dir.file("trunc.json")); }) == ErrorCode::CorruptModel);

  testutil::write_text(dir.file("v0.json"), R"({"format_version": "0"})");
  CHECK(code_of([&] { load_model(dir.file("v0.json")); }) == ErrorCode::VersionMismatch);

  testutil::write_text(dir.file("v9.json"), R"({"format_version": 9})");
  CHECK(code_of([&] { load_model(dir.file("v9.json")); }) == ErrorCode::VersionMismatch);
}
