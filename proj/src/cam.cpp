#include "skilleval/cam.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "skilleval/json_io.hpp"

namespace skilleval::cam {

namespace {

std::string output_label(const nn::FcnModel& model, int index) {
  if (model.head_kind == nn::HeadKind::Classification) {
    return kin::to_string(static_cast<kin::SkillLevel>(index));
  }
  return kin::kOsatsComponentNames[index];
}

void append_double(std::string& buf, double value) {
  char tmp[64];
  auto [ptr, ec] = std::to_chars(tmp, tmp + sizeof(tmp), value,
                                 std::chars_format::general, 17);
  (void)ec;
  buf.append(tmp, ptr);
}

}  // namespace

std::vector<double> minmax_normalize(const std::vector<double>& values) {
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<double> out(values.size(), 0.0);
  if (hi > lo) {
    const double scale = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - lo) * scale;
  }
  return out;
}

CamResult compute_cam(const nn::FcnModel& model, const nn::ForwardTrace& trace,
                      int output_index) {
  if (output_index < 0 || output_index >= model.n_out()) {
    fail(ErrorCode::IndexOutOfRange,
         "output index " + std::to_string(output_index) + " outside [0, " +
             std::to_string(model.n_out()) + ")");
  }
  if (trace.final_maps.channels != nn::kLayer3Filters ||
      static_cast<int>(trace.z.size()) != model.n_out()) {
    fail(ErrorCode::TraceMismatch, "trace does not belong to this model");
  }

  const int len = trace.len();
  CamResult result;
  result.output_index = output_index;
  result.label = output_label(model, output_index);
  result.values.assign(len, 0.0);
  const double* wc =
      model.params.head.w.data() + static_cast<std::size_t>(output_index) * nn::kLayer3Filters;
  for (int k = 0; k < nn::kLayer3Filters; ++k) {
    const double weight = wc[k];
    const double* row = trace.final_maps.row(k);
    for (int t = 0; t < len; ++t) result.values[t] += weight * row[t];
  }

  double sum = 0.0;
  for (double v : result.values) sum += v;
  result.z_check = sum / static_cast<double>(len) + model.params.head.b[output_index];
  result.normalized = minmax_normalize(result.values);
  return result;
}

void export_cam(const kin::KinematicTrial& trial, const kin::ChannelLayout& layout,
                const std::vector<CamResult>& results, const std::filesystem::path& path,
                ExportFormat format) {
  const std::size_t len = trial.samples.rows;
  for (const auto& r : results) {
    if (r.values.size() != len || r.normalized.size() != len) {
      fail(ErrorCode::LengthMismatch,
           "map for output " + std::to_string(r.output_index) + " does not match trial length");
    }
  }

  // Cartesian channels: sub-cluster 1 of each group, axis order x,y,z.
  struct Axis {
    std::string name;
    int channel;
  };
  std::vector<Axis> axes;
  constexpr const char* kAxisNames[3] = {"x", "y", "z"};
  for (const auto& group : layout.groups) {
    const auto& cart = group.subclusters[0];
    for (std::size_t i = 0; i < cart.size(); ++i) {
      axes.push_back({group.name + "_" + kAxisNames[i], cart[i]});
    }
  }

  if (format == ExportFormat::Csv) {
    std::string buf;
    buf += "timestamp_index,time_seconds";
    for (const auto& r : results) {
      buf += ",cam_raw_" + r.label + ",cam_norm_" + r.label;
    }
    for (const auto& a : axes) buf += "," + a.name;
    buf += "\n";
    for (std::size_t t = 0; t < len; ++t) {
      buf += std::to_string(t);
      buf += ',';
      append_double(buf, static_cast<double>(t) / trial.sample_rate_hz);
      for (const auto& r : results) {
        buf += ',';
        append_double(buf, r.values[t]);
        buf += ',';
        append_double(buf, r.normalized[t]);
      }
      for (const auto& a : axes) {
        buf += ',';
        append_double(buf, trial.samples.at(t, a.channel));
      }
      buf += '\n';
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
    return;
  }

  nlohmann::ordered_json j;
  j["trial_id"] = trial.trial_id;
  j["sample_rate_hz"] = trial.sample_rate_hz;
  j["n_samples"] = len;
  nlohmann::ordered_json outputs = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    outputs.push_back({{"index", r.output_index},
                       {"label", r.label},
                       {"z_check", r.z_check},
                       {"raw", r.values},
                       {"normalized", r.normalized}});
  }
  j["outputs"] = std::move(outputs);
  nlohmann::ordered_json cartesian;
  for (const auto& a : axes) {
    std::vector<double> column(len);
    for (std::size_t t = 0; t < len; ++t) column[t] = trial.samples.at(t, a.channel);
    cartesian[a.name] = std::move(column);
  }
  j["cartesian"] = std::move(cartesian);

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(1) << "\n";
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

}  // namespace skilleval::cam
