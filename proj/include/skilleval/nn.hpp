#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "skilleval/kinematics.hpp"
#include "skilleval/rng.hpp"

namespace skilleval::nn {

inline constexpr int kLayer1Filters = 8;
inline constexpr int kLayer2Filters = 16;
inline constexpr int kLayer3Filters = 32;
inline constexpr int kKernelLen = 3;

enum class HeadKind { Classification, Regression };

inline constexpr int head_outputs(HeadKind kind) {
  return kind == HeadKind::Classification ? 3 : 6;
}

/// Channel-major activation map: data[c * len + t].
struct FeatureMap {
  int channels = 0;
  int len = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c, int l) : channels(c), len(l), data(static_cast<std::size_t>(c) * l, 0.0) {}

  double* row(int c) { return data.data() + static_cast<std::size_t>(c) * len; }
  const double* row(int c) const { return data.data() + static_cast<std::size_t>(c) * len; }
  double& at(int c, int t) { return data[static_cast<std::size_t>(c) * len + t]; }
  double at(int c, int t) const { return data[static_cast<std::size_t>(c) * len + t]; }
};

/// Kernel-length-3 convolution parameters; w is [out_ch][in_ch][3] row-major.
struct ConvParams {
  int out_ch = 0;
  int in_ch = 0;
  std::vector<double> w;
  std::vector<double> b;

  ConvParams() = default;
  ConvParams(int out_channels, int in_channels)
      : out_ch(out_channels),
        in_ch(in_channels),
        w(static_cast<std::size_t>(out_channels) * in_channels * kKernelLen, 0.0),
        b(static_cast<std::size_t>(out_channels), 0.0) {}
};

struct HeadParams {
  int n_out = 0;
  std::vector<double> w;  // [n_out][32] row-major
  std::vector<double> b;

  HeadParams() = default;
  explicit HeadParams(int outputs)
      : n_out(outputs),
        w(static_cast<std::size_t>(outputs) * kLayer3Filters, 0.0),
        b(static_cast<std::size_t>(outputs), 0.0) {}
};

/// Named view of one flat parameter tensor; tensors() enumerates a model's
/// parameters in the fixed documented order (layer1 by group then sub-cluster,
/// layer2 by group, layer3, head), weights before biases.
struct TensorRef {
  std::string name;
  std::vector<double>* values;
};
struct ConstTensorRef {
  std::string name;
  const std::vector<double>* values;
};

struct ModelParams {
  std::array<std::array<ConvParams, kin::kNumSubclusters>, kin::kNumGroups> layer1;
  std::array<ConvParams, kin::kNumGroups> layer2;
  ConvParams layer3;
  HeadParams head;
};

std::vector<TensorRef> tensors(ModelParams& params);
std::vector<ConstTensorRef> tensors(const ModelParams& params);

/// Same tensor shapes as `params`, all zero.
ModelParams zeros_like(const ModelParams& params);

struct FcnModel {
  HeadKind head_kind = HeadKind::Classification;
  kin::ChannelLayout layout;
  ModelParams params;

  int n_out() const { return head_outputs(head_kind); }
};

using Gradients = ModelParams;

std::size_t parameter_count(const FcnModel& model);

/// Samples i.i.d. uniform on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
/// For convolutions the fan counts include the kernel-length factor.
std::vector<double> glorot_uniform(int fan_in, int fan_out, std::size_t count, Rng& rng);

/// Fresh model with uniformly initialized weights and zero biases. Layout is
/// validated.
FcnModel init_model(HeadKind kind, const kin::ChannelLayout& layout, std::uint64_t seed);

struct ForwardTrace {
  // Inputs to the 20 layer-1 convolutions, sliced per (group, sub-cluster).
  std::array<std::array<FeatureMap, kin::kNumSubclusters>, kin::kNumGroups> x_sub;
  std::array<FeatureMap, kin::kNumGroups> stage1;  // per group, 40 x l, post-ReLU
  FeatureMap stage2;                               // 64 x l, post-ReLU
  FeatureMap final_maps;                           // 32 x l, post-ReLU (feeds GAP and the CAM)
  std::vector<double> pooled;                      // 32
  std::vector<double> z;                           // n_out pre-activations
  std::vector<double> p;                           // classification probabilities, else empty

  int len() const { return final_maps.len; }
};

// Building-block ops; `forward` composes exactly these computations.
FeatureMap conv1d_forward(const FeatureMap& input, const ConvParams& params);
FeatureMap relu(const FeatureMap& input);
std::vector<double> gap(const FeatureMap& input);
std::vector<double> softmax(const std::vector<double>& z);

ForwardTrace forward(const FcnModel& model, const kin::Matrix& samples);

inline constexpr double kLogFloor = 1e-12;

double cross_entropy_loss(const std::vector<double>& p, kin::SkillLevel label);
double mse_loss(const std::vector<double>& y_hat, const std::vector<double>& y);

/// Training target: a skill class or the six rating components.
using Target = std::variant<kin::SkillLevel, kin::OsatsScores>;

double trace_loss(const ForwardTrace& trace, const Target& target);

/// Exact reverse-mode gradients of the per-trial loss for every parameter
/// tensor. The trace must come from forward() on the same model.
Gradients backward(const FcnModel& model, const ForwardTrace& trace, const Target& target);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};
struct GradCheckResult {
  std::vector<GradCheckEntry> per_tensor;
  double max_rel_error = 0.0;
};

/// Central finite differences over every parameter, compared against
/// backward(). The relative error is |a - n| / max(|a| + |n|, 1e-6).
GradCheckResult gradient_check(const FcnModel& model, const kin::Matrix& samples,
                               const Target& target, double step);

}  // namespace skilleval::nn
