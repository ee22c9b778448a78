#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "skilleval/error.hpp"

namespace skilleval::kin {

inline constexpr int kNumChannels = 76;
inline constexpr int kChannelsPerGroup = 19;
inline constexpr int kNumGroups = 4;
inline constexpr int kNumSubclusters = 5;
inline constexpr std::array<int, kNumSubclusters> kSubclusterSizes{3, 3, 3, 9, 1};
inline constexpr std::array<const char*, kNumGroups> kGroupNames{"ML", "MR", "SL", "SR"};
inline constexpr double kStdFloor = 1e-8;

enum class SkillLevel { Novice, Intermediate, Expert };
enum class Task { Suturing, NeedlePassing, KnotTying };

const char* to_string(SkillLevel level);
const char* to_string(Task task);
std::optional<SkillLevel> skill_from_string(const std::string& name);
std::optional<Task> task_from_string(const std::string& name);

/// Six rating components in output-neuron order.
inline constexpr std::array<const char*, 6> kOsatsComponentNames{
    "respect_for_tissue",    "suture_needle_handling", "time_and_motion",
    "flow_of_operation",     "overall_performance",    "quality_of_final_product",
};

struct OsatsScores {
  std::array<double, 6> values{};
};

/// Dense row-major matrix; rows are timestamps, columns are channels.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct KinematicTrial {
  std::string trial_id;
  std::string subject_id;
  Task task = Task::Suturing;
  int super_trial_index = 1;
  Matrix samples;  // l x 76
  double sample_rate_hz = 30.0;
  std::optional<SkillLevel> skill;
  std::optional<OsatsScores> osats;
};

/// Throws InvalidTrial when a trial invariant is broken (length < 3, wrong
/// channel count, non-finite samples, or no label at all).
void validate_trial(const KinematicTrial& trial);

/// Maps the 76 input channels onto 4 manipulator groups of 5 sub-clusters
/// each (sizes 3/3/3/9/1). The 20 index lists must partition {0..75}.
struct ChannelLayout {
  struct Group {
    std::string name;
    std::array<std::vector<int>, kNumSubclusters> subclusters;
  };
  std::array<Group, kNumGroups> groups;

  void validate() const;  // throws InvalidConfig
};

/// ML/MR/SL/SR as consecutive 19-channel blocks, sub-clusters in the order
/// Cartesian(3), linear velocity(3), rotational velocity(3), rotation
/// matrix(9), gripper(1).
ChannelLayout default_channel_layout();

struct ManifestEntry {
  Task task = Task::Suturing;
  std::string subject_id;
  int super_trial_index = 1;
  std::string kinematics_path;
  std::optional<SkillLevel> skill;
  std::optional<OsatsScores> osats;
};

struct DatasetManifest {
  std::optional<ChannelLayout> layout;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // relative kinematics paths resolve against this
};

/// Plain-text kinematics: one timestamp per line, 76 whitespace-separated
/// decimals. Empty lines are skipped.
Matrix parse_kinematics(const std::filesystem::path& path);

/// Inverse of parse_kinematics; 17 significant digits so values round-trip
/// exactly.
void write_kinematics(const Matrix& samples, const std::filesystem::path& path);

/// Manifest JSON: {"layout": optional, "trials": [...]}; unknown fields are
/// rejected.
DatasetManifest parse_manifest(const std::filesystem::path& path);

std::vector<KinematicTrial> load_dataset(const DatasetManifest& manifest);

struct StandardizationStats {
  std::array<double, kNumChannels> mean{};
  std::array<double, kNumChannels> stddev{};

  static StandardizationStats identity();
};

/// Pooled per-channel mean and population std over every timestamp of every
/// trial; std clamped below by kStdFloor.
StandardizationStats fit_standardization(const std::vector<KinematicTrial>& trials);

Matrix apply_standardization(const Matrix& samples, const StandardizationStats& stats);
KinematicTrial apply_standardization(const KinematicTrial& trial,
                                     const StandardizationStats& stats);

struct SynthConfig {
  int n_per_class = 10;
  int min_length = 60;
  int max_length = 100;
  double motif_amplitude = 3.0;
  Task task = Task::Suturing;
};

/// Where (and what) the generator injected; kept for explanation-localization
/// checks against the class activation maps.
struct MotifInfo {
  std::string trial_id;
  int window_start = 0;  // inclusive
  int window_end = 0;    // exclusive
  std::vector<int> channels;
  double period = 0.0;
};

struct SynthDataset {
  std::vector<KinematicTrial> trials;
  std::vector<MotifInfo> motifs;
};

/// Gaussian-noise trials with a class-specific sinusoidal motif injected into
/// a random window on a fixed channel subset; rating targets follow
/// deterministically from class and amplitude. Pure function of (seed,
/// config).
SynthDataset synth_dataset(std::uint64_t seed, const SynthConfig& config);

}  // namespace skilleval::kin
