#include "skilleval/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <thread>

#include "skilleval/json_io.hpp"

namespace skilleval::eval {

std::vector<FoldSpec> loso_folds(const std::vector<kin::KinematicTrial>& dataset) {
  std::map<int, std::vector<std::string>> by_super;
  for (const auto& trial : dataset) by_super[trial.super_trial_index].push_back(trial.trial_id);
  if (by_super.size() < 2) {
    fail(ErrorCode::SingleSuperTrial, "LOSO needs at least 2 distinct super-trial indices");
  }
  std::vector<FoldSpec> folds;
  for (const auto& [super, test_ids] : by_super) {
    FoldSpec fold;
    fold.held_out_super_trial = super;
    fold.test_ids = test_ids;
    for (const auto& trial : dataset) {
      if (trial.super_trial_index != super) fold.train_ids.push_back(trial.trial_id);
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

double micro_accuracy(const std::vector<kin::SkillLevel>& predictions,
                      const std::vector<kin::SkillLevel>& truths) {
  if (predictions.size() != truths.size()) {
    fail(ErrorCode::LengthMismatch, "prediction/truth counts differ");
  }
  if (predictions.empty()) fail(ErrorCode::EmptyInput, "no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == truths[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double macro_precision(const std::vector<kin::SkillLevel>& predictions,
                       const std::vector<kin::SkillLevel>& truths) {
  if (predictions.size() != truths.size()) {
    fail(ErrorCode::LengthMismatch, "prediction/truth counts differ");
  }
  if (predictions.empty()) fail(ErrorCode::EmptyInput, "no predictions");

  std::array<std::size_t, 3> tp{}, fp{}, truth_count{}, pred_count{};
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto p = static_cast<std::size_t>(predictions[i]);
    const auto t = static_cast<std::size_t>(truths[i]);
    ++pred_count[p];
    ++truth_count[t];
    if (p == t) {
      ++tp[p];
    } else {
      ++fp[p];
    }
  }
  double total = 0.0;
  int included = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    if (truth_count[c] == 0 && pred_count[c] == 0) continue;  // class absent entirely
    ++included;
    const std::size_t denom = tp[c] + fp[c];
    total += denom == 0 ? 0.0 : static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return total / static_cast<double>(included);
}

namespace {

/// 1-based ranks; ties receive the mean of their rank range.
std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) fail(ErrorCode::LengthMismatch, "vector lengths differ");
  if (x.size() < 2) fail(ErrorCode::TooShort, "need at least 2 observations");

  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);

  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;  // both rank vectors share this mean
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;  // a constant input has no ranking
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

RegressionRho regression_rho(const std::vector<kin::OsatsScores>& predictions,
                             const std::vector<kin::OsatsScores>& truths) {
  if (predictions.size() != truths.size()) {
    fail(ErrorCode::LengthMismatch, "prediction/truth counts differ");
  }
  if (predictions.empty()) fail(ErrorCode::EmptyInput, "no predictions");
  RegressionRho out;
  double total = 0.0;
  for (int c = 0; c < 6; ++c) {
    std::vector<double> p(predictions.size()), t(truths.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      p[i] = predictions[i].values[c];
      t[i] = truths[i].values[c];
    }
    out.per_component[c] = spearman_rho(p, t);
    total += out.per_component[c];
  }
  out.mean = total / 6.0;
  return out;
}

namespace {

struct RunOutcome {
  std::vector<kin::SkillLevel> class_preds;
  std::vector<kin::OsatsScores> reg_preds;
  std::vector<kin::SkillLevel> class_truths;
  std::vector<kin::OsatsScores> reg_truths;
  nn::FcnModel model;
  kin::StandardizationStats stats;
};

std::uint64_t run_seed(std::uint64_t master, int repeat, int fold) {
  return mix_seed(master, (static_cast<std::uint64_t>(repeat) << 32) |
                              static_cast<std::uint64_t>(fold));
}

kin::OsatsScores scores_from_z(const std::vector<double>& z) {
  kin::OsatsScores s;
  std::copy(z.begin(), z.end(), s.values.begin());
  return s;
}

}  // namespace

ExperimentResult run_experiment(const std::vector<kin::KinematicTrial>& dataset,
                                nn::HeadKind head_kind, const train::TrainConfig& config,
                                int n_repeats, const ExperimentOptions& options,
                                const kin::ChannelLayout& layout) {
  config.validate();
  if (n_repeats < 1) fail(ErrorCode::InvalidConfig, "n_repeats must be >= 1");
  if (dataset.empty()) fail(ErrorCode::EmptyDataset, "dataset is empty");

  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!index_of.emplace(dataset[i].trial_id, i).second) {
      fail(ErrorCode::DuplicateTrial, "duplicate trial id " + dataset[i].trial_id);
    }
  }

  const auto folds = loso_folds(dataset);
  const std::size_t n_runs = static_cast<std::size_t>(n_repeats) * folds.size();

  struct RunError {
    bool failed = false;
    ErrorCode code = ErrorCode::IoError;
    std::string message;
  };
  std::vector<RunOutcome> outcomes(n_runs);
  std::vector<RunError> errors(n_runs);

  const int jobs = std::max(1, options.jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= n_runs) return;
      const int r = static_cast<int>(job / folds.size());
      const int f = static_cast<int>(job % folds.size());
      try {
        const auto& fold = folds[f];
        std::vector<kin::KinematicTrial> train_set;
        train_set.reserve(fold.train_ids.size());
        for (const auto& id : fold.train_ids) train_set.push_back(dataset[index_of.at(id)]);

        train::TrainConfig run_config = config;
        run_config.seed = run_seed(config.seed, r, f);
        auto trained = train::train(train_set, head_kind, run_config, layout);

        RunOutcome& out = outcomes[job];
        for (const auto& id : fold.test_ids) {
          const auto& trial = dataset[index_of.at(id)];
          const auto trace = train::predict_trace(trained.model, trained.stats, trial.samples);
          if (head_kind == nn::HeadKind::Classification) {
            const auto argmax =
                std::max_element(trace.p.begin(), trace.p.end()) - trace.p.begin();
            out.class_preds.push_back(static_cast<kin::SkillLevel>(argmax));
            out.class_truths.push_back(*trial.skill);
          } else {
            out.reg_preds.push_back(scores_from_z(trace.z));
            out.reg_truths.push_back(*trial.osats);
          }
        }
        if (options.keep_fold_outputs) {
          out.model = std::move(trained.model);
          out.stats = trained.stats;
        }
      } catch (const Error& e) {
        errors[job] = {true, e.code(),
                       "repeat " + std::to_string(r) + ", fold " + std::to_string(f) + ": " + e.what()};
      } catch (const std::exception& e) {
        errors[job] = {true, ErrorCode::IoError,
                       "repeat " + std::to_string(r) + ", fold " + std::to_string(f) + ": " + e.what()};
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& err : errors) {
    if (err.failed) throw Error(err.code, err.message);
  }

  ExperimentResult result;
  result.report.task = dataset.front().task;
  result.report.head = head_kind;
  result.report.config = config;
  result.report.n_repeats = n_repeats;
  result.report.folds = folds;

  ClassMetrics class_sum;
  RegressionRho reg_sum;
  for (int r = 0; r < n_repeats; ++r) {
    RepeatResult repeat;
    std::vector<kin::SkillLevel> pooled_preds, pooled_truths;
    std::vector<kin::OsatsScores> pooled_reg_preds, pooled_reg_truths;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const auto& out = outcomes[static_cast<std::size_t>(r) * folds.size() + f];
      repeat.derived_seeds.push_back(run_seed(config.seed, r, static_cast<int>(f)));
      FoldMetrics fm;
      if (head_kind == nn::HeadKind::Classification) {
        fm.classification = ClassMetrics{micro_accuracy(out.class_preds, out.class_truths),
                                         macro_precision(out.class_preds, out.class_truths)};
        pooled_preds.insert(pooled_preds.end(), out.class_preds.begin(), out.class_preds.end());
        pooled_truths.insert(pooled_truths.end(), out.class_truths.begin(), out.class_truths.end());
      } else {
        if (out.reg_preds.size() >= 2) {
          fm.regression = regression_rho(out.reg_preds, out.reg_truths);
        }
        pooled_reg_preds.insert(pooled_reg_preds.end(), out.reg_preds.begin(), out.reg_preds.end());
        pooled_reg_truths.insert(pooled_reg_truths.end(), out.reg_truths.begin(),
                                 out.reg_truths.end());
      }
      repeat.per_fold.push_back(std::move(fm));
    }
    if (head_kind == nn::HeadKind::Classification) {
      repeat.pooled_classification = ClassMetrics{micro_accuracy(pooled_preds, pooled_truths),
                                                  macro_precision(pooled_preds, pooled_truths)};
      class_sum.micro += repeat.pooled_classification->micro;
      class_sum.macro += repeat.pooled_classification->macro;
    } else {
      repeat.pooled_regression = regression_rho(pooled_reg_preds, pooled_reg_truths);
      for (int c = 0; c < 6; ++c) {
        reg_sum.per_component[c] += repeat.pooled_regression->per_component[c];
      }
      reg_sum.mean += repeat.pooled_regression->mean;
    }
    result.report.repeats.push_back(std::move(repeat));
  }

  if (head_kind == nn::HeadKind::Classification) {
    result.report.aggregate_classification =
        ClassMetrics{class_sum.micro / n_repeats, class_sum.macro / n_repeats};
  } else {
    RegressionRho agg;
    for (int c = 0; c < 6; ++c) agg.per_component[c] = reg_sum.per_component[c] / n_repeats;
    agg.mean = reg_sum.mean / n_repeats;
    result.report.aggregate_regression = agg;
  }

  if (options.keep_fold_outputs) {
    for (std::size_t job = 0; job < n_runs; ++job) {
      FoldOutput fo;
      fo.repeat = static_cast<int>(job / folds.size());
      fo.fold = static_cast<int>(job % folds.size());
      fo.model = std::move(outcomes[job].model);
      fo.stats = outcomes[job].stats;
      fo.test_ids = folds[fo.fold].test_ids;
      fo.class_predictions = std::move(outcomes[job].class_preds);
      fo.reg_predictions = std::move(outcomes[job].reg_preds);
      result.fold_outputs.push_back(std::move(fo));
    }
  }
  return result;
}

namespace {

nlohmann::ordered_json config_to_json(const train::TrainConfig& config) {
  return {{"learning_rate", config.learning_rate},
          {"beta1", config.beta1},
          {"beta2", config.beta2},
          {"epsilon_adam", config.epsilon_adam},
          {"l2_lambda", config.l2_lambda},
          {"max_epochs", config.max_epochs},
          {"validation_fraction", config.validation_fraction},
          {"seed", config.seed},
          {"standardize", config.standardize},
          {"early_stop", config.early_stop},
          {"early_stop_patience", config.early_stop_patience}};
}

nlohmann::ordered_json class_metrics_to_json(const ClassMetrics& m) {
  return {{"micro", m.micro}, {"macro", m.macro}};
}

nlohmann::ordered_json rho_to_json(const RegressionRho& r) {
  return {{"rho_components", r.per_component}, {"rho_mean", r.mean}};
}

}  // namespace

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["task"] = kin::to_string(report.task);
  j["head"] = report.head == nn::HeadKind::Classification ? "classification" : "regression";
  j["config_echo"] = config_to_json(report.config);
  j["n_repeats"] = report.n_repeats;

  nlohmann::ordered_json folds = nlohmann::ordered_json::array();
  for (const auto& fold : report.folds) {
    folds.push_back({{"held_out_super_trial", fold.held_out_super_trial},
                     {"train_ids", fold.train_ids},
                     {"test_ids", fold.test_ids}});
  }
  j["folds"] = std::move(folds);

  nlohmann::ordered_json repeats = nlohmann::ordered_json::array();
  for (const auto& rep : report.repeats) {
    nlohmann::ordered_json jr;
    jr["derived_seeds"] = rep.derived_seeds;
    nlohmann::ordered_json per_fold = nlohmann::ordered_json::array();
    for (const auto& fm : rep.per_fold) {
      if (fm.classification) {
        per_fold.push_back(class_metrics_to_json(*fm.classification));
      } else if (fm.regression) {
        per_fold.push_back(rho_to_json(*fm.regression));
      } else {
        per_fold.push_back(nullptr);
      }
    }
    jr["per_fold"] = std::move(per_fold);
    if (rep.pooled_classification) {
      jr["pooled"] = class_metrics_to_json(*rep.pooled_classification);
    } else if (rep.pooled_regression) {
      jr["pooled"] = rho_to_json(*rep.pooled_regression);
    }
    repeats.push_back(std::move(jr));
  }
  j["repeats"] = std::move(repeats);

  if (report.aggregate_classification) {
    j["aggregate"] = class_metrics_to_json(*report.aggregate_classification);
  } else if (report.aggregate_regression) {
    j["aggregate"] = rho_to_json(*report.aggregate_regression);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(1) << "\n";
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

}  // namespace skilleval::eval
