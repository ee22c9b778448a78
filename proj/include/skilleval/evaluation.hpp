#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "skilleval/training.hpp"

namespace skilleval::eval {

struct FoldSpec {
  int held_out_super_trial = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

/// One fold per distinct super-trial index, ascending; a fold's test set is
/// exactly the trials carrying that index.
std::vector<FoldSpec> loso_folds(const std::vector<kin::KinematicTrial>& dataset);

/// Fraction of exact matches.
double micro_accuracy(const std::vector<kin::SkillLevel>& predictions,
                      const std::vector<kin::SkillLevel>& truths);

/// Unweighted mean of per-class precision. Classes appearing in neither
/// predictions nor truths are excluded; a class present in truths but never
/// predicted contributes 0.
double macro_precision(const std::vector<kin::SkillLevel>& predictions,
                       const std::vector<kin::SkillLevel>& truths);

/// Rank correlation with average ranks on ties; 0 when either rank vector is
/// constant.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

struct RegressionRho {
  std::array<double, 6> per_component{};
  double mean = 0.0;
};

RegressionRho regression_rho(const std::vector<kin::OsatsScores>& predictions,
                             const std::vector<kin::OsatsScores>& truths);

struct ClassMetrics {
  double micro = 0.0;
  double macro = 0.0;
};

/// Per-fold metrics inside one repeat. Regression folds with fewer than 2
/// test trials carry no rho.
struct FoldMetrics {
  std::optional<ClassMetrics> classification;
  std::optional<RegressionRho> regression;
};

struct RepeatResult {
  std::vector<std::uint64_t> derived_seeds;  // training seed per fold
  std::vector<FoldMetrics> per_fold;
  // Pooled over all folds of this repeat.
  std::optional<ClassMetrics> pooled_classification;
  std::optional<RegressionRho> pooled_regression;
};

struct EvalReport {
  kin::Task task = kin::Task::Suturing;
  nn::HeadKind head = nn::HeadKind::Classification;
  train::TrainConfig config;
  int n_repeats = 0;
  std::vector<FoldSpec> folds;
  std::vector<RepeatResult> repeats;
  // Mean of the pooled per-repeat metrics.
  std::optional<ClassMetrics> aggregate_classification;
  std::optional<RegressionRho> aggregate_regression;
};

/// Per-(repeat, fold) artifacts retained when keep_fold_outputs is set; used
/// for explanation checks and for exporting fold models.
struct FoldOutput {
  int repeat = 0;
  int fold = 0;
  nn::FcnModel model;
  kin::StandardizationStats stats;
  std::vector<std::string> test_ids;
  std::vector<kin::SkillLevel> class_predictions;
  std::vector<kin::OsatsScores> reg_predictions;
};

struct ExperimentOptions {
  int jobs = 1;
  bool keep_fold_outputs = false;
};

struct ExperimentResult {
  EvalReport report;
  std::vector<FoldOutput> fold_outputs;  // empty unless requested
};

/// LOSO experiment: per (repeat, fold), train on the fold's train set with a
/// seed derived from (config.seed, repeat, fold), predict the held-out
/// super-trial, pool predictions across folds within the repeat, then average
/// metrics across repeats. (repeat, fold) runs may execute on `jobs` threads;
/// results reduce in key order, so the report is identical for any job count.
ExperimentResult run_experiment(const std::vector<kin::KinematicTrial>& dataset,
                                nn::HeadKind head_kind, const train::TrainConfig& config,
                                int n_repeats, const ExperimentOptions& options = {},
                                const kin::ChannelLayout& layout = kin::default_channel_layout());

void write_report(const EvalReport& report, const std::filesystem::path& path);

}  // namespace skilleval::eval
