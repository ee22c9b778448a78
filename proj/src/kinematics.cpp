#include "skilleval/kinematics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <unordered_set>

#include "skilleval/json_io.hpp"
#include "skilleval/rng.hpp"

namespace skilleval::kin {

const char* to_string(SkillLevel level) {
  switch (level) {
    case SkillLevel::Novice: return "Novice";
    case SkillLevel::Intermediate: return "Intermediate";
    case SkillLevel::Expert: return "Expert";
  }
  return "?";
}

const char* to_string(Task task) {
  switch (task) {
    case Task::Suturing: return "Suturing";
    case Task::NeedlePassing: return "NeedlePassing";
    case Task::KnotTying: return "KnotTying";
  }
  return "?";
}

std::optional<SkillLevel> skill_from_string(const std::string& name) {
  if (name == "Novice") return SkillLevel::Novice;
  if (name == "Intermediate") return SkillLevel::Intermediate;
  if (name == "Expert") return SkillLevel::Expert;
  return std::nullopt;
}

std::optional<Task> task_from_string(const std::string& name) {
  if (name == "Suturing") return Task::Suturing;
  if (name == "NeedlePassing") return Task::NeedlePassing;
  if (name == "KnotTying") return Task::KnotTying;
  return std::nullopt;
}

void validate_trial(const KinematicTrial& trial) {
  if (trial.samples.cols != kNumChannels) {
    fail(ErrorCode::InvalidTrial,
         "trial '" + trial.trial_id + "' has " + std::to_string(trial.samples.cols) +
             " channels, expected 76");
  }
  if (trial.samples.rows < 3) {
    fail(ErrorCode::InvalidTrial,
         "trial '" + trial.trial_id + "' has fewer than 3 timestamps");
  }
  for (double v : trial.samples.data) {
    if (!std::isfinite(v)) {
      fail(ErrorCode::InvalidTrial, "trial '" + trial.trial_id + "' has non-finite samples");
    }
  }
  if (!trial.skill && !trial.osats) {
    fail(ErrorCode::InvalidTrial, "trial '" + trial.trial_id + "' carries no label");
  }
  if (trial.osats) {
    for (double v : trial.osats->values) {
      if (!std::isfinite(v)) {
        fail(ErrorCode::InvalidTrial, "trial '" + trial.trial_id + "' has non-finite scores");
      }
    }
  }
  if (trial.super_trial_index < 1) {
    fail(ErrorCode::InvalidTrial, "trial '" + trial.trial_id + "' has super_trial_index < 1");
  }
}

void ChannelLayout::validate() const {
  std::set<int> seen;
  int total = 0;
  for (int g = 0; g < kNumGroups; ++g) {
    if (groups[g].name != kGroupNames[g]) {
      fail(ErrorCode::InvalidConfig,
           "layout group " + std::to_string(g) + " must be named " + kGroupNames[g]);
    }
    for (int s = 0; s < kNumSubclusters; ++s) {
      const auto& idx = groups[g].subclusters[s];
      if (static_cast<int>(idx.size()) != kSubclusterSizes[s]) {
        fail(ErrorCode::InvalidConfig,
             "layout " + groups[g].name + " sub-cluster " + std::to_string(s + 1) +
                 " must have " + std::to_string(kSubclusterSizes[s]) + " channels");
      }
      for (int ch : idx) {
        if (ch < 0 || ch >= kNumChannels) {
          fail(ErrorCode::InvalidConfig, "layout channel index out of range: " + std::to_string(ch));
        }
        if (!seen.insert(ch).second) {
          fail(ErrorCode::InvalidConfig, "layout channel listed twice: " + std::to_string(ch));
        }
        ++total;
      }
    }
  }
  if (total != kNumChannels) {
    fail(ErrorCode::InvalidConfig, "layout covers " + std::to_string(total) + " channels, expected 76");
  }
}

ChannelLayout default_channel_layout() {
  ChannelLayout layout;
  for (int g = 0; g < kNumGroups; ++g) {
    layout.groups[g].name = kGroupNames[g];
    int ch = g * kChannelsPerGroup;
    for (int s = 0; s < kNumSubclusters; ++s) {
      auto& idx = layout.groups[g].subclusters[s];
      idx.resize(kSubclusterSizes[s]);
      for (int& c : idx) c = ch++;
    }
  }
  return layout;
}

Matrix parse_kinematics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());

  Matrix out;
  out.cols = kNumChannels;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> row;
  row.reserve(kNumChannels);
  while (std::getline(in, line)) {
    ++line_no;
    const char* ptr = line.data();
    const char* end = ptr + line.size();
    row.clear();
    while (ptr < end) {
      while (ptr < end && (*ptr == ' ' || *ptr == '\t' || *ptr == '\r')) ++ptr;
      if (ptr >= end) break;
      double value = 0.0;
      auto [next, ec] = std::from_chars(ptr, end, value);
      if (ec != std::errc{} || !std::isfinite(value)) {
        fail(ErrorCode::MalformedRow,
             "line " + std::to_string(line_no) + " of " + path.filename().string() +
                 ": unparsable value");
      }
      row.push_back(value);
      ptr = next;
    }
    if (row.empty()) continue;  // blank line
    if (row.size() != kNumChannels) {
      fail(ErrorCode::MalformedRow,
           "line " + std::to_string(line_no) + " of " + path.filename().string() + ": expected 76 columns, got " +
               std::to_string(row.size()));
    }
    out.data.insert(out.data.end(), row.begin(), row.end());
    ++out.rows;
  }
  if (out.rows == 0) fail(ErrorCode::EmptyFile, path.string() + " contains no samples");
  return out;
}

namespace {

void append_double(std::string& buf, double value) {
  char tmp[64];
  auto [ptr, ec] = std::to_chars(tmp, tmp + sizeof(tmp), value,
                                 std::chars_format::general, 17);
  (void)ec;
  buf.append(tmp, ptr);
}

}  // namespace

void write_kinematics(const Matrix& samples, const std::filesystem::path& path) {
  std::string buf;
  buf.reserve(samples.data.size() * 12);
  for (std::size_t r = 0; r < samples.rows; ++r) {
    for (std::size_t c = 0; c < samples.cols; ++c) {
      if (c) buf.push_back(' ');
      append_double(buf, samples.at(r, c));
    }
    buf.push_back('\n');
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

// ---------------------------------------------------------------------------
// JSON helpers shared with the model/report writers

void reject_unknown_fields(const nlohmann::json& j, const std::vector<std::string>& allowed,
                           const std::string& context, ErrorCode code) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      fail(code, context + ": unknown field '" + it.key() + "'");
    }
  }
}

nlohmann::ordered_json layout_to_json(const ChannelLayout& layout) {
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (const auto& group : layout.groups) {
    nlohmann::ordered_json subs = nlohmann::ordered_json::array();
    for (const auto& sub : group.subclusters) subs.push_back(sub);
    groups.push_back({{"name", group.name}, {"subclusters", subs}});
  }
  return nlohmann::ordered_json{{"groups", groups}};
}

ChannelLayout layout_from_json(const nlohmann::json& j, const std::string& context) {
  if (!j.is_object() || !j.contains("groups") || !j["groups"].is_array() ||
      j["groups"].size() != kNumGroups) {
    fail(ErrorCode::InvalidConfig, context + ": layout must have exactly 4 groups");
  }
  reject_unknown_fields(j, {"groups"}, context + " layout", ErrorCode::InvalidConfig);
  ChannelLayout layout;
  for (int g = 0; g < kNumGroups; ++g) {
    const auto& jg = j["groups"][g];
    if (!jg.is_object() || !jg.contains("name") || !jg.contains("subclusters")) {
      fail(ErrorCode::InvalidConfig, context + ": layout group needs name and subclusters");
    }
    reject_unknown_fields(jg, {"name", "subclusters"}, context + " layout group",
                          ErrorCode::InvalidConfig);
    layout.groups[g].name = jg["name"].get<std::string>();
    const auto& subs = jg["subclusters"];
    if (!subs.is_array() || subs.size() != kNumSubclusters) {
      fail(ErrorCode::InvalidConfig, context + ": each group needs 5 sub-clusters");
    }
    for (int s = 0; s < kNumSubclusters; ++s) {
      if (!subs[s].is_array()) {
        fail(ErrorCode::InvalidConfig, context + ": sub-cluster must be an index array");
      }
      for (const auto& v : subs[s]) {
        if (!v.is_number_integer()) {
          fail(ErrorCode::InvalidConfig, context + ": sub-cluster indices must be integers");
        }
        layout.groups[g].subclusters[s].push_back(v.get<int>());
      }
    }
  }
  layout.validate();
  return layout;
}

nlohmann::ordered_json osats_to_json(const OsatsScores& scores) {
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < scores.values.size(); ++i) {
    j[kOsatsComponentNames[i]] = scores.values[i];
  }
  return j;
}

OsatsScores osats_from_json(const nlohmann::json& j, const std::string& context) {
  if (!j.is_object()) fail(ErrorCode::InvalidConfig, context + ": osats must be an object");
  std::vector<std::string> allowed(kOsatsComponentNames.begin(), kOsatsComponentNames.end());
  reject_unknown_fields(j, allowed, context + " osats", ErrorCode::InvalidConfig);
  OsatsScores scores;
  for (std::size_t i = 0; i < scores.values.size(); ++i) {
    const char* name = kOsatsComponentNames[i];
    if (!j.contains(name) || !j[name].is_number()) {
      fail(ErrorCode::InvalidConfig, context + ": osats missing component '" + name + "'");
    }
    scores.values[i] = j[name].get<double>();
  }
  return scores;
}

DatasetManifest parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, "manifest " + path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("trials") || !j["trials"].is_array()) {
    fail(ErrorCode::InvalidConfig, "manifest " + path.string() + ": needs a 'trials' array");
  }
  reject_unknown_fields(j, {"layout", "trials"}, "manifest", ErrorCode::InvalidConfig);

  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();
  if (j.contains("layout") && !j["layout"].is_null()) {
    manifest.layout = layout_from_json(j["layout"], "manifest");
  }

  std::set<std::tuple<std::string, int, int>> keys;
  for (const auto& je : j["trials"]) {
    if (!je.is_object()) fail(ErrorCode::InvalidConfig, "manifest: trial entries must be objects");
    reject_unknown_fields(
        je, {"task", "subject_id", "super_trial_index", "kinematics_path", "skill", "osats"},
        "manifest trial", ErrorCode::InvalidConfig);
    ManifestEntry entry;
    if (!je.contains("task") || !je["task"].is_string()) {
      fail(ErrorCode::InvalidConfig, "manifest trial: missing 'task'");
    }
    auto task = task_from_string(je["task"].get<std::string>());
    if (!task) {
      fail(ErrorCode::InvalidConfig,
           "manifest trial: unknown task '" + je["task"].get<std::string>() + "'");
    }
    entry.task = *task;
    if (!je.contains("subject_id") || !je["subject_id"].is_string()) {
      fail(ErrorCode::InvalidConfig, "manifest trial: missing 'subject_id'");
    }
    entry.subject_id = je["subject_id"].get<std::string>();
    if (!je.contains("super_trial_index") || !je["super_trial_index"].is_number_integer()) {
      fail(ErrorCode::InvalidConfig, "manifest trial: missing integer 'super_trial_index'");
    }
    entry.super_trial_index = je["super_trial_index"].get<int>();
    if (entry.super_trial_index < 1) {
      fail(ErrorCode::InvalidConfig, "manifest trial: super_trial_index must be >= 1");
    }
    if (!je.contains("kinematics_path") || !je["kinematics_path"].is_string()) {
      fail(ErrorCode::InvalidConfig, "manifest trial: missing 'kinematics_path'");
    }
    entry.kinematics_path = je["kinematics_path"].get<std::string>();
    if (je.contains("skill") && !je["skill"].is_null()) {
      if (!je["skill"].is_string()) fail(ErrorCode::InvalidConfig, "manifest trial: 'skill' must be a string");
      auto skill = skill_from_string(je["skill"].get<std::string>());
      if (!skill) {
        fail(ErrorCode::InvalidConfig,
             "manifest trial: unknown skill '" + je["skill"].get<std::string>() + "'");
      }
      entry.skill = *skill;
    }
    if (je.contains("osats") && !je["osats"].is_null()) {
      entry.osats = osats_from_json(je["osats"], "manifest trial");
    }
    auto key = std::make_tuple(entry.subject_id, static_cast<int>(entry.task),
                               entry.super_trial_index);
    if (!keys.insert(key).second) {
      fail(ErrorCode::DuplicateTrial,
           "manifest: duplicate (subject, task, super_trial) = (" + entry.subject_id + ", " +
               to_string(entry.task) + ", " + std::to_string(entry.super_trial_index) + ")");
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

std::vector<KinematicTrial> load_dataset(const DatasetManifest& manifest) {
  if (manifest.layout) manifest.layout->validate();
  std::vector<KinematicTrial> trials;
  trials.reserve(manifest.entries.size());
  std::unordered_set<std::string> ids;
  for (const auto& entry : manifest.entries) {
    KinematicTrial trial;
    trial.subject_id = entry.subject_id;
    trial.task = entry.task;
    trial.super_trial_index = entry.super_trial_index;
    trial.trial_id = entry.subject_id + "_" + to_string(entry.task) + "_T" +
                     std::to_string(entry.super_trial_index);
    trial.skill = entry.skill;
    trial.osats = entry.osats;

    std::filesystem::path p(entry.kinematics_path);
    if (p.is_relative()) p = manifest.base_dir / p;
    try {
      trial.samples = parse_kinematics(p);
    } catch (const Error& e) {
      throw Error(e.code(), std::string("trial '") + trial.trial_id + "': " + e.what());
    }
    validate_trial(trial);
    if (!ids.insert(trial.trial_id).second) {
      fail(ErrorCode::DuplicateTrial, "duplicate trial id " + trial.trial_id);
    }
    trials.push_back(std::move(trial));
  }
  return trials;
}

StandardizationStats StandardizationStats::identity() {
  StandardizationStats stats;
  stats.mean.fill(0.0);
  stats.stddev.fill(1.0);
  return stats;
}

StandardizationStats fit_standardization(const std::vector<KinematicTrial>& trials) {
  if (trials.empty()) fail(ErrorCode::EmptyInput, "no trials to fit standardization on");
  std::array<double, kNumChannels> sum{};
  std::size_t count = 0;
  for (const auto& trial : trials) {
    const Matrix& m = trial.samples;
    for (std::size_t r = 0; r < m.rows; ++r) {
      const double* row = m.data.data() + r * m.cols;
      for (int c = 0; c < kNumChannels; ++c) sum[c] += row[c];
    }
    count += m.rows;
  }
  StandardizationStats stats;
  for (int c = 0; c < kNumChannels; ++c) stats.mean[c] = sum[c] / static_cast<double>(count);

  std::array<double, kNumChannels> sq{};
  for (const auto& trial : trials) {
    const Matrix& m = trial.samples;
    for (std::size_t r = 0; r < m.rows; ++r) {
      const double* row = m.data.data() + r * m.cols;
      for (int c = 0; c < kNumChannels; ++c) {
        const double d = row[c] - stats.mean[c];
        sq[c] += d * d;
      }
    }
  }
  for (int c = 0; c < kNumChannels; ++c) {
    stats.stddev[c] = std::max(std::sqrt(sq[c] / static_cast<double>(count)), kStdFloor);
  }
  return stats;
}

Matrix apply_standardization(const Matrix& samples, const StandardizationStats& stats) {
  Matrix out(samples.rows, samples.cols);
  for (std::size_t r = 0; r < samples.rows; ++r) {
    const double* src = samples.data.data() + r * samples.cols;
    double* dst = out.data.data() + r * out.cols;
    for (int c = 0; c < kNumChannels; ++c) dst[c] = (src[c] - stats.mean[c]) / stats.stddev[c];
  }
  return out;
}

KinematicTrial apply_standardization(const KinematicTrial& trial,
                                     const StandardizationStats& stats) {
  KinematicTrial out = trial;
  out.samples = apply_standardization(trial.samples, stats);
  return out;
}

SynthDataset synth_dataset(std::uint64_t seed, const SynthConfig& config) {
  if (config.n_per_class < 1) fail(ErrorCode::InvalidConfig, "n_per_class must be >= 1");
  if (config.min_length < 30 || config.max_length > 2000 ||
      config.min_length > config.max_length) {
    fail(ErrorCode::InvalidConfig, "length range must lie within [30, 2000]");
  }
  if (!std::isfinite(config.motif_amplitude)) {
    fail(ErrorCode::InvalidConfig, "motif amplitude must be finite");
  }

  // One sinusoidal period per class, separated relative to the network's
  // 7-sample receptive field, and one designated manipulator per class: the
  // motif lands on that group's Cartesian sub-cluster. Class identity is
  // carried by where the oscillation appears and how fast it is.
  constexpr std::array<double, 3> kClassPeriods{24.0, 12.0, 6.0};

  SynthDataset out;
  Rng rng(seed);
  for (int cls = 0; cls < 3; ++cls) {
    const auto level = static_cast<SkillLevel>(cls);
    const std::vector<int> motif_channels{cls * kChannelsPerGroup,
                                          cls * kChannelsPerGroup + 1,
                                          cls * kChannelsPerGroup + 2};
    for (int rep = 1; rep <= config.n_per_class; ++rep) {
      KinematicTrial trial;
      trial.task = config.task;
      trial.subject_id = std::string(1, to_string(level)[0]) +
                         (rep < 10 ? "0" : "") + std::to_string(rep);
      trial.super_trial_index = rep;
      trial.trial_id = trial.subject_id + "_" + to_string(config.task) + "_T" +
                       std::to_string(rep);
      trial.skill = level;
      OsatsScores scores;
      for (int i = 0; i < 6; ++i) {
        scores.values[i] = (cls + 1) * (1.0 + 0.1 * i) * (config.motif_amplitude / 3.0);
      }
      trial.osats = scores;

      const int len = rng.uniform_int(config.min_length, config.max_length);
      trial.samples = Matrix(static_cast<std::size_t>(len), kNumChannels);
      for (double& v : trial.samples.data) v = rng.normal();

      const int window = std::max(16, len / 4);
      const int start = rng.uniform_int(0, len - window);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double period = kClassPeriods[cls];
      for (int t = start; t < start + window; ++t) {
        for (std::size_t j = 0; j < motif_channels.size(); ++j) {
          const double channel_phase = phase + 2.0 * std::numbers::pi * static_cast<double>(j) / 3.0;
          trial.samples.at(t, motif_channels[j]) +=
              config.motif_amplitude *
              std::sin(2.0 * std::numbers::pi * (t - start) / period + channel_phase);
        }
      }

      out.motifs.push_back({trial.trial_id, start, start + window, motif_channels, period});
      out.trials.push_back(std::move(trial));
    }
  }
  return out;
}

}  // namespace skilleval::kin
