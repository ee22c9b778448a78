#include "skilleval/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "skilleval/json_io.hpp"
#include "skilleval/kernels.hpp"

namespace skilleval::train {

namespace {

// Sub-seed stream ids within one training run.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSplitStream = 2;
constexpr std::uint64_t kShuffleStream = 3;

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorCode::InvalidConfig, "learning_rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    fail(ErrorCode::InvalidConfig, "beta1/beta2 must lie in [0, 1)");
  }
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    fail(ErrorCode::InvalidConfig, "validation_fraction must lie in [0, 1)");
  }
  if (max_epochs < 1) fail(ErrorCode::InvalidConfig, "max_epochs must be >= 1");
  if (epsilon_adam <= 0.0) fail(ErrorCode::InvalidConfig, "epsilon_adam must be positive");
  if (l2_lambda < 0.0) fail(ErrorCode::InvalidConfig, "l2_lambda must be >= 0");
  if (early_stop_patience < 1) fail(ErrorCode::InvalidConfig, "patience must be >= 1");
}

AdamState AdamState::zeros_like(const nn::ModelParams& params) {
  AdamState state;
  state.m = nn::zeros_like(params);
  state.v = nn::zeros_like(params);
  return state;
}

void adam_step(nn::FcnModel& model, const nn::Gradients& grads, AdamState& state,
               const TrainConfig& config) {
  auto theta = nn::tensors(model.params);
  auto grad = nn::tensors(grads);
  auto m = nn::tensors(state.m);
  auto v = nn::tensors(state.v);

  state.t += 1;
  const double inv_bias1 = 1.0 / (1.0 - std::pow(config.beta1, static_cast<double>(state.t)));
  const double inv_bias2 = 1.0 / (1.0 - std::pow(config.beta2, static_cast<double>(state.t)));

  const auto& ops = kernels::active_ops();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const std::size_t n = theta[i].values->size();
    if (grad[i].values->size() != n || m[i].values->size() != n || v[i].values->size() != n) {
      fail(ErrorCode::ShapeMismatch, "gradient/state shape differs from model at " + theta[i].name);
    }
    ops.adam_step(theta[i].values->data(), m[i].values->data(), v[i].values->data(),
                  grad[i].values->data(), n, config.learning_rate, config.beta1, config.beta2,
                  config.epsilon_adam, config.l2_lambda, inv_bias1, inv_bias2);
  }
}

std::pair<std::vector<kin::KinematicTrial>, std::vector<kin::KinematicTrial>>
split_validation(const std::vector<kin::KinematicTrial>& trials, double fraction, Rng& rng) {
  const std::size_t n = trials.size();
  if (n < 2) fail(ErrorCode::TooFewTrials, "need at least 2 trials to split");
  if (!(fraction > 0.0 && fraction < 1.0)) {
    fail(ErrorCode::InvalidConfig, "validation fraction must lie in (0, 1)");
  }
  std::size_t target = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  target = std::min(target, n - 1);

  std::vector<bool> in_val(n, false);
  bool stratified = std::all_of(trials.begin(), trials.end(),
                                [](const auto& t) { return t.skill.has_value(); });
  if (stratified) {
    std::map<kin::SkillLevel, std::size_t> counts;
    for (const auto& t : trials) ++counts[*t.skill];
    // All-singleton classes leave nothing eligible; fall back to a plain split.
    stratified = std::any_of(counts.begin(), counts.end(),
                             [](const auto& kv) { return kv.second >= 2; });
  }
  if (stratified) {
    std::map<kin::SkillLevel, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[*trials[i].skill].push_back(i);

    // Proportional quotas with largest-remainder rounding; a class never gives
    // up its last member.
    struct Share {
      kin::SkillLevel level;
      std::size_t size;
      std::size_t quota;
      double remainder;
    };
    std::vector<Share> shares;
    std::size_t assigned = 0;
    for (const auto& [level, members] : by_class) {
      if (members.size() < 2) continue;
      const double exact = fraction == 0.0
                               ? 0.0
                               : static_cast<double>(target) * static_cast<double>(members.size()) /
                                     static_cast<double>(n);
      const auto quota = std::min<std::size_t>(static_cast<std::size_t>(exact), members.size() - 1);
      shares.push_back({level, members.size(), quota, exact - std::floor(exact)});
      assigned += quota;
    }
    std::stable_sort(shares.begin(), shares.end(),
                     [](const Share& a, const Share& b) { return a.remainder > b.remainder; });
    for (auto& share : shares) {
      if (assigned >= target) break;
      if (share.quota < share.size - 1) {
        ++share.quota;
        ++assigned;
      }
    }
    for (const auto& share : shares) {
      auto members = by_class[share.level];
      rng.shuffle(members);
      for (std::size_t i = 0; i < share.quota; ++i) in_val[members[i]] = true;
    }
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t i = 0; i < target; ++i) in_val[order[i]] = true;
  }

  std::vector<kin::KinematicTrial> train_set, val_set;
  for (std::size_t i = 0; i < n; ++i) {
    (in_val[i] ? val_set : train_set).push_back(trials[i]);
  }
  return {std::move(train_set), std::move(val_set)};
}

namespace {

nn::Target target_of(const kin::KinematicTrial& trial, nn::HeadKind head) {
  if (head == nn::HeadKind::Classification) return *trial.skill;
  return *trial.osats;
}

void check_labels(const std::vector<kin::KinematicTrial>& dataset, nn::HeadKind head) {
  for (const auto& trial : dataset) {
    if (head == nn::HeadKind::Classification && !trial.skill) {
      fail(ErrorCode::LabelMismatch, "trial '" + trial.trial_id + "' lacks a skill label");
    }
    if (head == nn::HeadKind::Regression && !trial.osats) {
      fail(ErrorCode::LabelMismatch, "trial '" + trial.trial_id + "' lacks rating scores");
    }
  }
}

double mean_data_loss(const nn::FcnModel& model, const std::vector<kin::KinematicTrial>& trials,
                      nn::HeadKind head) {
  double total = 0.0;
  for (const auto& trial : trials) {
    total += nn::trace_loss(nn::forward(model, trial.samples), target_of(trial, head));
  }
  return total / static_cast<double>(trials.size());
}

}  // namespace

TrainResult train(const std::vector<kin::KinematicTrial>& dataset, nn::HeadKind head_kind,
                  const TrainConfig& config, const kin::ChannelLayout& layout) {
  config.validate();
  if (dataset.empty()) fail(ErrorCode::EmptyDataset, "training dataset is empty");
  check_labels(dataset, head_kind);

  std::vector<kin::KinematicTrial> train_set;
  std::vector<kin::KinematicTrial> val_set;
  if (config.validation_fraction > 0.0 && dataset.size() >= 2) {
    Rng split_rng(mix_seed(config.seed, kSplitStream));
    std::tie(train_set, val_set) = split_validation(dataset, config.validation_fraction, split_rng);
  } else {
    // No held-out split; the post-epoch training loss doubles as the
    // checkpoint criterion.
    train_set = dataset;
  }

  const auto stats = config.standardize ? kin::fit_standardization(train_set)
                                        : kin::StandardizationStats::identity();
  for (auto& trial : train_set) trial.samples = kin::apply_standardization(trial.samples, stats);
  for (auto& trial : val_set) trial.samples = kin::apply_standardization(trial.samples, stats);

  TrainResult result;
  result.model = nn::init_model(head_kind, layout, mix_seed(config.seed, kInitStream));
  result.stats = stats;
  for (const auto& t : train_set) result.history.train_ids.push_back(t.trial_id);
  for (const auto& t : val_set) result.history.val_ids.push_back(t.trial_id);

  AdamState state = AdamState::zeros_like(result.model.params);
  Rng shuffle_rng(mix_seed(config.seed, kShuffleStream));

  nn::FcnModel best_model = result.model;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      const auto& trial = train_set[idx];
      const auto target = target_of(trial, head_kind);
      const auto trace = nn::forward(result.model, trial.samples);
      epoch_loss += nn::trace_loss(trace, target);
      const auto grads = nn::backward(result.model, trace, target);
      adam_step(result.model, grads, state, config);
    }
    epoch_loss /= static_cast<double>(train_set.size());

    const double val_loss = val_set.empty()
                                ? mean_data_loss(result.model, train_set, head_kind)
                                : mean_data_loss(result.model, val_set, head_kind);
    result.history.epochs.push_back({epoch_loss, val_loss});
    if (val_loss < best_val) {
      best_val = val_loss;
      best_epoch = epoch;
      best_model = result.model;
    }
    if (config.early_stop && epoch - best_epoch >= config.early_stop_patience) break;
  }

  result.model = std::move(best_model);
  result.history.best_epoch = best_epoch;
  result.history.best_validation_loss = best_val;
  return result;
}

nn::ForwardTrace predict_trace(const nn::FcnModel& model, const kin::StandardizationStats& stats,
                               const kin::Matrix& samples) {
  return nn::forward(model, kin::apply_standardization(samples, stats));
}

// ---------------------------------------------------------------------------
// Model file I/O

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kOrderComment =
    "layer1 entries ordered by group (ML,MR,SL,SR) then sub-cluster (1..5); kernel arrays are "
    "row-major [out_channel][in_channel][tap]; biases are [out_channel]; head_w is row-major "
    "[output][filter]; standardization arrays are indexed by input channel";

nlohmann::ordered_json conv_to_json(const nn::ConvParams& conv) {
  return {{"w", conv.w}, {"b", conv.b}};
}

void conv_from_json(const nlohmann::json& j, nn::ConvParams& conv, const std::string& name) {
  if (!j.is_object() || !j.contains("w") || !j.contains("b")) {
    fail(ErrorCode::CorruptModel, name + " must carry 'w' and 'b'");
  }
  kin::reject_unknown_fields(j, {"w", "b"}, name, ErrorCode::CorruptModel);
  const auto w = j["w"].get<std::vector<double>>();
  const auto b = j["b"].get<std::vector<double>>();
  if (w.size() != conv.w.size() || b.size() != conv.b.size()) {
    fail(ErrorCode::CorruptModel, name + " has the wrong parameter arity");
  }
  conv.w = w;
  conv.b = b;
}

}  // namespace

void save_model(const nn::FcnModel& model, const kin::StandardizationStats& stats,
                const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["format_version"] = kFormatVersion;
  j["comment"] = kOrderComment;
  j["head"] = model.head_kind == nn::HeadKind::Classification ? "classification" : "regression";
  j["layout"] = kin::layout_to_json(model.layout);

  nlohmann::ordered_json params;
  nlohmann::ordered_json layer1 = nlohmann::ordered_json::array();
  for (int g = 0; g < kin::kNumGroups; ++g) {
    for (int s = 0; s < kin::kNumSubclusters; ++s) {
      layer1.push_back(conv_to_json(model.params.layer1[g][s]));
    }
  }
  params["layer1"] = std::move(layer1);
  nlohmann::ordered_json layer2 = nlohmann::ordered_json::array();
  for (int g = 0; g < kin::kNumGroups; ++g) layer2.push_back(conv_to_json(model.params.layer2[g]));
  params["layer2"] = std::move(layer2);
  params["layer3"] = conv_to_json(model.params.layer3);
  params["head_w"] = model.params.head.w;
  params["head_b"] = model.params.head.b;
  j["params"] = std::move(params);

  j["standardization"] = {{"mean", stats.mean}, {"std", stats.stddev}};

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(1) << "\n";
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

std::pair<nn::FcnModel, kin::StandardizationStats> load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open model " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptModel, path.string() + ": " + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::CorruptModel, path.string() + ": not a JSON object");
  if (!j.contains("format_version") || !j["format_version"].is_number_integer() ||
      j["format_version"].get<int>() != kFormatVersion) {
    fail(ErrorCode::VersionMismatch, path.string() + ": expected format_version 1");
  }
  kin::reject_unknown_fields(
      j, {"format_version", "comment", "head", "layout", "params", "standardization"},
      "model file", ErrorCode::CorruptModel);
  if (!j.contains("head") || !j["head"].is_string() || !j.contains("layout") ||
      !j.contains("params") || !j.contains("standardization")) {
    fail(ErrorCode::CorruptModel, path.string() + ": missing required fields");
  }

  const std::string head = j["head"].get<std::string>();
  nn::HeadKind kind;
  if (head == "classification") {
    kind = nn::HeadKind::Classification;
  } else if (head == "regression") {
    kind = nn::HeadKind::Regression;
  } else {
    fail(ErrorCode::CorruptModel, path.string() + ": unknown head '" + head + "'");
  }

  kin::ChannelLayout layout;
  try {
    layout = kin::layout_from_json(j["layout"], "model file");
  } catch (const Error& e) {
    fail(ErrorCode::CorruptModel, e.what());
  }

  // Start from a zero model of the right architecture, then fill arrays in.
  nn::FcnModel model = nn::init_model(kind, layout, 0);
  for (auto& ref : nn::tensors(model.params)) {
    std::fill(ref.values->begin(), ref.values->end(), 0.0);
  }

  const auto& params = j["params"];
  kin::reject_unknown_fields(params, {"layer1", "layer2", "layer3", "head_w", "head_b"},
                             "model params", ErrorCode::CorruptModel);
  if (!params.contains("layer1") || !params["layer1"].is_array() || params["layer1"].size() != 20 ||
      !params.contains("layer2") || !params["layer2"].is_array() || params["layer2"].size() != 4 ||
      !params.contains("layer3") || !params.contains("head_w") || !params.contains("head_b")) {
    fail(ErrorCode::CorruptModel, path.string() + ": params block malformed");
  }
  try {
    int entry = 0;
    for (int g = 0; g < kin::kNumGroups; ++g) {
      for (int s = 0; s < kin::kNumSubclusters; ++s, ++entry) {
        conv_from_json(params["layer1"][entry], model.params.layer1[g][s],
                       "layer1[" + std::to_string(entry) + "]");
      }
    }
    for (int g = 0; g < kin::kNumGroups; ++g) {
      conv_from_json(params["layer2"][g], model.params.layer2[g],
                     "layer2[" + std::to_string(g) + "]");
    }
    conv_from_json(params["layer3"], model.params.layer3, "layer3");
    const auto head_w = params["head_w"].get<std::vector<double>>();
    const auto head_b = params["head_b"].get<std::vector<double>>();
    if (head_w.size() != model.params.head.w.size() || head_b.size() != model.params.head.b.size()) {
      fail(ErrorCode::CorruptModel, "head parameter arity mismatch");
    }
    model.params.head.w = head_w;
    model.params.head.b = head_b;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptModel, path.string() + ": " + e.what());
  }

  kin::StandardizationStats stats;
  const auto& js = j["standardization"];
  kin::reject_unknown_fields(js, {"mean", "std"}, "standardization", ErrorCode::CorruptModel);
  if (!js.contains("mean") || !js.contains("std")) {
    fail(ErrorCode::CorruptModel, path.string() + ": standardization block malformed");
  }
  try {
    const auto mean = js["mean"].get<std::vector<double>>();
    const auto stddev = js["std"].get<std::vector<double>>();
    if (mean.size() != kin::kNumChannels || stddev.size() != kin::kNumChannels) {
      fail(ErrorCode::CorruptModel, "standardization arrays must have 76 entries");
    }
    std::copy(mean.begin(), mean.end(), stats.mean.begin());
    std::copy(stddev.begin(), stddev.end(), stats.stddev.begin());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptModel, path.string() + ": " + e.what());
  }
  return {std::move(model), stats};
}

}  // namespace skilleval::train
