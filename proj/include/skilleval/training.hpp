#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "skilleval/nn.hpp"

namespace skilleval::train {

struct TrainConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon_adam = 1e-8;
  double l2_lambda = 1e-5;
  int max_epochs = 1000;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  bool standardize = true;
  bool early_stop = false;
  int early_stop_patience = 100;

  void validate() const;  // throws InvalidConfig
};

struct AdamState {
  nn::ModelParams m;
  nn::ModelParams v;
  long t = 0;

  static AdamState zeros_like(const nn::ModelParams& params);
};

/// One Adam update over every parameter tensor. The L2 penalty enters as an
/// additive l2_lambda * theta gradient term; t is incremented before use.
void adam_step(nn::FcnModel& model, const nn::Gradients& grads, AdamState& state,
               const TrainConfig& config);

struct EpochRecord {
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based
  double best_validation_loss = 0.0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

/// Disjoint, exhaustive split with a validation size of max(1, round(f*n)),
/// stratified by skill label when every trial carries one (a class only
/// contributes when it has at least 2 members). Order within each part
/// follows the input order.
std::pair<std::vector<kin::KinematicTrial>, std::vector<kin::KinematicTrial>>
split_validation(const std::vector<kin::KinematicTrial>& trials, double fraction, Rng& rng);

struct TrainResult {
  nn::FcnModel model;
  TrainHistory history;
  kin::StandardizationStats stats;
};

/// Full training run: Glorot init, standardization fitted on the train split,
/// per-epoch shuffling, per-trial updates (batch size 1), and checkpointing on
/// the best validation loss. Reported losses are pure data losses (no L2
/// term). Pure function of (dataset, head_kind, config, layout).
TrainResult train(const std::vector<kin::KinematicTrial>& dataset, nn::HeadKind head_kind,
                  const TrainConfig& config,
                  const kin::ChannelLayout& layout = kin::default_channel_layout());

/// Standardize with the stored stats, then run the network.
nn::ForwardTrace predict_trace(const nn::FcnModel& model,
                               const kin::StandardizationStats& stats,
                               const kin::Matrix& samples);

void save_model(const nn::FcnModel& model, const kin::StandardizationStats& stats,
                const std::filesystem::path& path);

std::pair<nn::FcnModel, kin::StandardizationStats> load_model(const std::filesystem::path& path);

}  // namespace skilleval::train
