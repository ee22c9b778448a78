#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "skilleval/nn.hpp"

namespace skilleval::cam {

/// Per-timestamp contribution of the final feature maps to one output neuron:
/// values[t] = sum_k head_w[c][k] * final_maps[k][t]. The head bias is not
/// part of the map; it only enters the z_check reconstruction.
struct CamResult {
  int output_index = 0;
  std::string label;               // class name or rating component name
  std::vector<double> values;      // length l
  std::vector<double> normalized;  // min-max scaled to [0,1]; all zeros when flat
  double z_check = 0.0;            // mean_t values[t] + head_b[c]; equals z[c]
};

CamResult compute_cam(const nn::FcnModel& model, const nn::ForwardTrace& trace,
                      int output_index);

/// Min-max scaling used for the normalized map; exposed for tests.
std::vector<double> minmax_normalize(const std::vector<double>& values);

enum class ExportFormat { Csv, Json };

/// Writes timestamp index, time in seconds, one raw and one normalized column
/// per map, plus the trial's Cartesian channels (sub-cluster 1 of every
/// group) so external tools can paint trajectories. CSV and JSON carry the
/// same content.
void export_cam(const kin::KinematicTrial& trial, const kin::ChannelLayout& layout,
                const std::vector<CamResult>& results, const std::filesystem::path& path,
                ExportFormat format);

}  // namespace skilleval::cam
