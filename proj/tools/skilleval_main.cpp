// Command-line front end: dataset synthesis, training, LOSO evaluation,
// activation-map export, and gradient checking. Every stochastic path is
// seeded, so a command line is a reproducible experiment description.

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "skilleval/cam.hpp"
#include "skilleval/evaluation.hpp"
#include "skilleval/json_io.hpp"
#include "skilleval/kinematics.hpp"
#include "skilleval/nn.hpp"
#include "skilleval/rng.hpp"
#include "skilleval/training.hpp"

namespace fs = std::filesystem;
using namespace skilleval;

namespace {

struct TrainFlags {
  double lr = 0.001;
  double l2 = 1e-5;
  int epochs = 1000;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  bool no_standardize = false;
  bool early_stop = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& flags) {
  cmd->add_option("--lr", flags.lr, "Learning rate")->capture_default_str();
  cmd->add_option("--l2", flags.l2, "L2 regularization strength")->capture_default_str();
  cmd->add_option("--epochs", flags.epochs, "Maximum training epochs")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seed", flags.seed, "Master RNG seed")->capture_default_str();
  cmd->add_option("--val-fraction", flags.val_fraction, "Validation split fraction")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 0.999));
  cmd->add_flag("--no-standardize", flags.no_standardize,
                "Skip per-channel z-standardization of the inputs");
  cmd->add_flag("--early-stop", flags.early_stop,
                "Stop after 100 epochs without validation improvement");
}

train::TrainConfig to_config(const TrainFlags& flags) {
  train::TrainConfig config;
  config.learning_rate = flags.lr;
  config.l2_lambda = flags.l2;
  config.max_epochs = flags.epochs;
  config.seed = flags.seed;
  config.validation_fraction = flags.val_fraction;
  config.standardize = !flags.no_standardize;
  config.early_stop = flags.early_stop;
  return config;
}

nn::HeadKind parse_head(const std::string& head) {
  if (head == "classification") return nn::HeadKind::Classification;
  if (head == "regression") return nn::HeadKind::Regression;
  fail(ErrorCode::InvalidConfig, "head must be 'classification' or 'regression'");
}

std::vector<kin::KinematicTrial> load_task_trials(const kin::DatasetManifest& manifest,
                                                  kin::Task task) {
  kin::DatasetManifest filtered = manifest;
  filtered.entries.clear();
  for (const auto& entry : manifest.entries) {
    if (entry.task == task) filtered.entries.push_back(entry);
  }
  if (filtered.entries.empty()) {
    fail(ErrorCode::EmptyDataset,
         std::string("manifest has no trials for task ") + kin::to_string(task));
  }
  return kin::load_dataset(filtered);
}

nlohmann::ordered_json config_echo(const train::TrainConfig& config) {
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

void write_history(const train::TrainHistory& history, const train::TrainConfig& config,
                   const fs::path& path) {
  nlohmann::ordered_json j;
  j["config"] = config_echo(config);
  j["best_epoch"] = history.best_epoch;
  j["best_validation_loss"] = history.best_validation_loss;
  j["train_ids"] = history.train_ids;
  j["val_ids"] = history.val_ids;
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const auto& e : history.epochs) {
    epochs.push_back({{"train_loss", e.train_loss}, {"validation_loss", e.validation_loss}});
  }
  j["epochs"] = std::move(epochs);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(1) << "\n";
}

int run_synth(const fs::path& out_dir, std::uint64_t seed, int per_class,
              const std::vector<std::string>& tasks, int length_min, int length_max,
              double amplitude) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + out_dir.string());

  nlohmann::ordered_json trials = nlohmann::ordered_json::array();
  nlohmann::ordered_json motifs = nlohmann::ordered_json::array();
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    const auto task = kin::task_from_string(tasks[ti]);
    if (!task) fail(ErrorCode::InvalidConfig, "unknown task '" + tasks[ti] + "'");
    kin::SynthConfig config;
    config.n_per_class = per_class;
    config.min_length = length_min;
    config.max_length = length_max;
    config.motif_amplitude = amplitude;
    config.task = *task;
    const auto dataset = kin::synth_dataset(mix_seed(seed, 100 + ti), config);

    for (const auto& trial : dataset.trials) {
      const std::string filename = trial.trial_id + ".txt";
      kin::write_kinematics(trial.samples, out_dir / filename);
      trials.push_back({{"task", kin::to_string(trial.task)},
                        {"subject_id", trial.subject_id},
                        {"super_trial_index", trial.super_trial_index},
                        {"kinematics_path", filename},
                        {"skill", kin::to_string(*trial.skill)},
                        {"osats", kin::osats_to_json(*trial.osats)}});
    }
    for (const auto& motif : dataset.motifs) {
      motifs.push_back({{"trial_id", motif.trial_id},
                        {"task", kin::to_string(*task)},
                        {"window_start", motif.window_start},
                        {"window_end", motif.window_end},
                        {"channels", motif.channels},
                        {"period", motif.period}});
    }
  }

  const fs::path manifest_path = out_dir / "manifest.json";
  {
    nlohmann::ordered_json manifest{{"trials", std::move(trials)}};
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write " + manifest_path.string());
    out << manifest.dump(1) << "\n";
  }
  {
    std::ofstream out(out_dir / "motifs.json", std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write motifs.json");
    out << nlohmann::ordered_json{{"motifs", std::move(motifs)}}.dump(1) << "\n";
  }
  std::printf("%s\n", manifest_path.string().c_str());
  return 0;
}

int run_train(const fs::path& manifest_path, const std::string& task_name,
              const std::string& head_name, const fs::path& out_path, fs::path history_path,
              const TrainFlags& flags) {
  const auto task = kin::task_from_string(task_name);
  if (!task) fail(ErrorCode::InvalidConfig, "unknown task '" + task_name + "'");
  const auto head = parse_head(head_name);
  const auto manifest = kin::parse_manifest(manifest_path);
  const auto trials = load_task_trials(manifest, *task);
  const auto layout = manifest.layout.value_or(kin::default_channel_layout());

  const auto config = to_config(flags);
  const auto result = train::train(trials, head, config, layout);
  train::save_model(result.model, result.stats, out_path);
  if (history_path.empty()) {
    history_path = out_path;
    history_path.replace_extension(".history.json");
  }
  write_history(result.history, config, history_path);
  std::printf("model %s\nhistory %s\nbest_epoch %d best_validation_loss %.6f\n",
              out_path.string().c_str(), history_path.string().c_str(),
              result.history.best_epoch, result.history.best_validation_loss);
  return 0;
}

int run_eval(const fs::path& manifest_path, const std::string& task_name,
             const std::string& head_name, int repeats, const fs::path& report_path, int jobs,
             const TrainFlags& flags) {
  const auto task = kin::task_from_string(task_name);
  if (!task) fail(ErrorCode::InvalidConfig, "unknown task '" + task_name + "'");
  const auto head = parse_head(head_name);
  const auto manifest = kin::parse_manifest(manifest_path);
  const auto trials = load_task_trials(manifest, *task);
  const auto layout = manifest.layout.value_or(kin::default_channel_layout());

  eval::ExperimentOptions options;
  options.jobs = jobs;
  const auto result =
      eval::run_experiment(trials, head, to_config(flags), repeats, options, layout);
  eval::write_report(result.report, report_path);
  if (result.report.aggregate_classification) {
    std::printf("micro %.3f macro %.3f\n", result.report.aggregate_classification->micro,
                result.report.aggregate_classification->macro);
  } else if (result.report.aggregate_regression) {
    std::printf("rho_mean %.3f\n", result.report.aggregate_regression->mean);
  }
  std::printf("report %s\n", report_path.string().c_str());
  return 0;
}

int run_cam(const fs::path& model_path, const fs::path& kin_path, const std::string& outputs,
            const std::string& format_name, const fs::path& out_path) {
  const auto [model, stats] = train::load_model(model_path);
  kin::KinematicTrial trial;
  trial.trial_id = kin_path.stem().string();
  trial.samples = kin::parse_kinematics(kin_path);

  std::vector<int> indices;
  if (outputs == "all") {
    for (int i = 0; i < model.n_out(); ++i) indices.push_back(i);
  } else {
    std::size_t pos = 0;
    while (pos < outputs.size()) {
      const std::size_t comma = outputs.find(',', pos);
      const std::string token = outputs.substr(pos, comma - pos);
      int value = 0;
      const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
      if (ec != std::errc{} || ptr != token.data() + token.size()) {
        fail(ErrorCode::InvalidConfig, "bad output index '" + token + "'");
      }
      indices.push_back(value);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (indices.empty()) fail(ErrorCode::InvalidConfig, "--outputs selected nothing");
  }

  const auto trace = train::predict_trace(model, stats, trial.samples);
  std::vector<cam::CamResult> results;
  for (int index : indices) results.push_back(cam::compute_cam(model, trace, index));

  const auto format = format_name == "json" ? cam::ExportFormat::Json : cam::ExportFormat::Csv;
  cam::export_cam(trial, model.layout, results, out_path, format);
  std::printf("%s\n", out_path.string().c_str());
  return 0;
}

int run_gradcheck(std::uint64_t seed, int length) {
  constexpr double kTolerance = 1e-4;
  constexpr double kStep = 1e-5;

  Rng rng(mix_seed(seed, 7));
  kin::Matrix samples(static_cast<std::size_t>(length), kin::kNumChannels);
  for (double& v : samples.data) v = rng.normal();

  std::vector<std::string> offenders;
  for (const auto head : {nn::HeadKind::Classification, nn::HeadKind::Regression}) {
    const bool classification = head == nn::HeadKind::Classification;
    const auto model = nn::init_model(head, kin::default_channel_layout(),
                                      mix_seed(seed, classification ? 11 : 13));
    nn::Target target;
    if (classification) {
      target = kin::SkillLevel::Intermediate;
    } else {
      kin::OsatsScores scores;
      for (double& v : scores.values) v = rng.uniform(1.0, 5.0);
      target = scores;
    }
    const auto result = nn::gradient_check(model, samples, target, kStep);
    const char* head_name = classification ? "classification" : "regression";
    for (const auto& entry : result.per_tensor) {
      std::printf("%s %s max_rel_err %.3e\n", head_name, entry.name.c_str(), entry.max_rel_error);
      if (!(entry.max_rel_error < kTolerance)) {
        offenders.push_back(std::string(head_name) + " " + entry.name);
      }
    }
  }
  if (offenders.empty()) {
    std::printf("gradcheck PASS (tolerance %.1e)\n", kTolerance);
    return 0;
  }
  std::printf("gradcheck FAIL (tolerance %.1e):", kTolerance);
  for (const auto& name : offenders) std::printf(" %s", name.c_str());
  std::printf("\n");
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surgical skill evaluation from kinematic time series: a grouped 1-D fully "
               "convolutional network with activation-map explanations"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic dataset");
  fs::path synth_out;
  std::uint64_t synth_seed = 0;
  int per_class = 10;
  std::vector<std::string> tasks{"Suturing"};
  int length_min = 60, length_max = 100;
  double amplitude = 3.0;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "RNG seed")->capture_default_str();
  synth->add_option("--per-class", per_class, "Trials per skill class")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  synth->add_option("--tasks", tasks, "Tasks to generate")->delimiter(',')->capture_default_str();
  synth->add_option("--length-min", length_min, "Shortest trial length")->capture_default_str();
  synth->add_option("--length-max", length_max, "Longest trial length")->capture_default_str();
  synth->add_option("--amplitude", amplitude, "Motif amplitude")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model on one task");
  fs::path train_manifest, train_out, train_history;
  std::string train_task, train_head;
  TrainFlags train_flags;
  train_cmd->add_option("--manifest", train_manifest, "Dataset manifest JSON")->required();
  train_cmd->add_option("--task", train_task, "Suturing|NeedlePassing|KnotTying")->required();
  train_cmd->add_option("--head", train_head, "classification|regression")
      ->required()
      ->check(CLI::IsMember({"classification", "regression"}));
  train_cmd->add_option("--out", train_out, "Model output path")->required();
  train_cmd->add_option("--history", train_history,
                        "History output path (default: <out>.history.json)");
  add_train_flags(train_cmd, train_flags);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Leave-one-super-trial-out evaluation");
  fs::path eval_manifest, eval_report;
  std::string eval_task, eval_head;
  int repeats = 1;
  int default_jobs = 1;
  if (const char* env = std::getenv("SKILLEVAL_JOBS")) default_jobs = std::atoi(env);
  int jobs = std::max(1, default_jobs);
  TrainFlags eval_flags;
  eval_cmd->add_option("--manifest", eval_manifest, "Dataset manifest JSON")->required();
  eval_cmd->add_option("--task", eval_task, "Suturing|NeedlePassing|KnotTying")->required();
  eval_cmd->add_option("--head", eval_head, "classification|regression")
      ->required()
      ->check(CLI::IsMember({"classification", "regression"}));
  eval_cmd->add_option("--repeats", repeats, "Independent repeats to average")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--report", eval_report, "Report output path")->required();
  eval_cmd->add_option("--jobs", jobs, "Parallel (repeat, fold) runs (default: $SKILLEVAL_JOBS)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  add_train_flags(eval_cmd, eval_flags);

  // cam
  auto* cam_cmd = app.add_subcommand("cam", "Export per-timestamp activation maps");
  fs::path cam_model, cam_kin, cam_out;
  std::string cam_outputs = "all";
  std::string cam_format = "csv";
  cam_cmd->add_option("--model", cam_model, "Trained model JSON")->required();
  cam_cmd->add_option("--kinematics", cam_kin, "Kinematics text file")->required();
  cam_cmd->add_option("--outputs", cam_outputs, "'all' or comma-separated output indices")
      ->capture_default_str();
  cam_cmd->add_option("--format", cam_format, "csv|json")
      ->capture_default_str()
      ->check(CLI::IsMember({"csv", "json"}));
  cam_cmd->add_option("--out", cam_out, "Export path")->required();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck",
                                      "Compare analytic gradients against finite differences");
  std::uint64_t grad_seed = 0;
  int grad_length = 40;
  grad_cmd->add_option("--seed", grad_seed, "RNG seed")->capture_default_str();
  grad_cmd->add_option("--length", grad_length, "Trial length")
      ->capture_default_str()
      ->check(CLI::Range(3, 100000));

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      return run_synth(synth_out, synth_seed, per_class, tasks, length_min, length_max, amplitude);
    }
    if (train_cmd->parsed()) {
      return run_train(train_manifest, train_task, train_head, train_out, train_history,
                       train_flags);
    }
    if (eval_cmd->parsed()) {
      return run_eval(eval_manifest, eval_task, eval_head, repeats, eval_report, jobs, eval_flags);
    }
    if (cam_cmd->parsed()) {
      return run_cam(cam_model, cam_kin, cam_outputs, cam_format, cam_out);
    }
    if (grad_cmd->parsed()) {
      return run_gradcheck(grad_seed, grad_length);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
