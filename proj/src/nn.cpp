#include "skilleval/nn.hpp"

#include <algorithm>
#include <cmath>

#include "skilleval/kernels.hpp"

namespace skilleval::nn {

namespace {

int subcluster_in_channels(int s) { return kin::kSubclusterSizes[s]; }

}  // namespace

std::vector<TensorRef> tensors(ModelParams& params) {
  std::vector<TensorRef> out;
  for (int g = 0; g < kin::kNumGroups; ++g) {
    for (int s = 0; s < kin::kNumSubclusters; ++s) {
      const std::string base = std::string("layer1.") + kin::kGroupNames[g] + ".sub" +
                               std::to_string(s + 1);
      out.push_back({base + ".w", &params.layer1[g][s].w});
      out.push_back({base + ".b", &params.layer1[g][s].b});
    }
  }
  for (int g = 0; g < kin::kNumGroups; ++g) {
    const std::string base = std::string("layer2.") + kin::kGroupNames[g];
    out.push_back({base + ".w", &params.layer2[g].w});
    out.push_back({base + ".b", &params.layer2[g].b});
  }
  out.push_back({"layer3.w", &params.layer3.w});
  out.push_back({"layer3.b", &params.layer3.b});
  out.push_back({"head.w", &params.head.w});
  out.push_back({"head.b", &params.head.b});
  return out;
}

std::vector<ConstTensorRef> tensors(const ModelParams& params) {
  auto mutable_refs = tensors(const_cast<ModelParams&>(params));
  std::vector<ConstTensorRef> out;
  out.reserve(mutable_refs.size());
  for (auto& ref : mutable_refs) out.push_back({std::move(ref.name), ref.values});
  return out;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams out;
  for (int g = 0; g < kin::kNumGroups; ++g) {
    for (int s = 0; s < kin::kNumSubclusters; ++s) {
      out.layer1[g][s] = ConvParams(params.layer1[g][s].out_ch, params.layer1[g][s].in_ch);
    }
    out.layer2[g] = ConvParams(params.layer2[g].out_ch, params.layer2[g].in_ch);
  }
  out.layer3 = ConvParams(params.layer3.out_ch, params.layer3.in_ch);
  out.head = HeadParams(params.head.n_out);
  return out;
}

std::size_t parameter_count(const FcnModel& model) {
  std::size_t n = 0;
  for (const auto& ref : tensors(model.params)) n += ref.values->size();
  return n;
}

std::vector<double> glorot_uniform(int fan_in, int fan_out, std::size_t count, Rng& rng) {
  if (fan_in < 1 || fan_out < 1) fail(ErrorCode::InvalidConfig, "fan counts must be >= 1");
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> out(count);
  for (double& v : out) v = rng.uniform(-bound, bound);
  return out;
}

FcnModel init_model(HeadKind kind, const kin::ChannelLayout& layout, std::uint64_t seed) {
  layout.validate();
  FcnModel model;
  model.head_kind = kind;
  model.layout = layout;

  Rng rng(seed);
  for (int g = 0; g < kin::kNumGroups; ++g) {
    for (int s = 0; s < kin::kNumSubclusters; ++s) {
      const int in_ch = subcluster_in_channels(s);
      ConvParams conv(kLayer1Filters, in_ch);
      conv.w = glorot_uniform(in_ch * kKernelLen, kLayer1Filters * kKernelLen, conv.w.size(), rng);
      model.params.layer1[g][s] = std::move(conv);
    }
  }
  const int layer2_in = kin::kNumSubclusters * kLayer1Filters;  // 40
  for (int g = 0; g < kin::kNumGroups; ++g) {
    ConvParams conv(kLayer2Filters, layer2_in);
    conv.w = glorot_uniform(layer2_in * kKernelLen, kLayer2Filters * kKernelLen, conv.w.size(), rng);
    model.params.layer2[g] = std::move(conv);
  }
  const int layer3_in = kin::kNumGroups * kLayer2Filters;  // 64
  {
    ConvParams conv(kLayer3Filters, layer3_in);
    conv.w = glorot_uniform(layer3_in * kKernelLen, kLayer3Filters * kKernelLen, conv.w.size(), rng);
    model.params.layer3 = std::move(conv);
  }
  {
    HeadParams head(head_outputs(kind));
    head.w = glorot_uniform(kLayer3Filters, head.n_out, head.w.size(), rng);
    model.params.head = std::move(head);
  }
  return model;
}

FeatureMap conv1d_forward(const FeatureMap& input, const ConvParams& params) {
  if (input.channels != params.in_ch) {
    fail(ErrorCode::ChannelMismatch,
         "conv expects " + std::to_string(params.in_ch) + " channels, got " +
             std::to_string(input.channels));
  }
  FeatureMap out(params.out_ch, input.len);
  kernels::active_ops().conv1d_forward(input.data.data(), input.channels, input.len,
                                       params.w.data(), params.b.data(), params.out_ch,
                                       out.data.data());
  return out;
}

FeatureMap relu(const FeatureMap& input) {
  FeatureMap out(input.channels, input.len);
  kernels::active_ops().relu_forward(input.data.data(), out.data.data(), input.data.size());
  return out;
}

std::vector<double> gap(const FeatureMap& input) {
  std::vector<double> out(input.channels);
  for (int c = 0; c < input.channels; ++c) {
    const double* row = input.row(c);
    double sum = 0.0;
    for (int t = 0; t < input.len; ++t) sum += row[t];
    out[c] = sum / static_cast<double>(input.len);
  }
  return out;
}

std::vector<double> softmax(const std::vector<double>& z) {
  std::vector<double> p(z.size());
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

ForwardTrace forward(const FcnModel& model, const kin::Matrix& samples) {
  if (samples.cols != kin::kNumChannels) {
    fail(ErrorCode::ChannelMismatch,
         "input has " + std::to_string(samples.cols) + " channels, expected 76");
  }
  if (samples.rows < 3) {
    fail(ErrorCode::LengthTooShort, "input must have at least 3 timestamps");
  }
  const auto& ops = kernels::active_ops();
  const int len = static_cast<int>(samples.rows);

  ForwardTrace trace;
  for (int g = 0; g < kin::kNumGroups; ++g) {
    for (int s = 0; s < kin::kNumSubclusters; ++s) {
      const auto& channels = model.layout.groups[g].subclusters[s];
      FeatureMap slice(static_cast<int>(channels.size()), len);
      for (std::size_t c = 0; c < channels.size(); ++c) {
        double* row = slice.row(static_cast<int>(c));
        const int src = channels[c];
        for (int t = 0; t < len; ++t) row[t] = samples.at(t, src);
      }
      trace.x_sub[g][s] = std::move(slice);
    }
  }

  for (int g = 0; g < kin::kNumGroups; ++g) {
    FeatureMap cat(kin::kNumSubclusters * kLayer1Filters, len);
    for (int s = 0; s < kin::kNumSubclusters; ++s) {
      const auto& conv = model.params.layer1[g][s];
      ops.conv1d_forward(trace.x_sub[g][s].data.data(), conv.in_ch, len, conv.w.data(),
                         conv.b.data(), conv.out_ch, cat.row(s * kLayer1Filters));
    }
    ops.relu_forward(cat.data.data(), cat.data.data(), cat.data.size());
    trace.stage1[g] = std::move(cat);
  }

  FeatureMap cat2(kin::kNumGroups * kLayer2Filters, len);
  for (int g = 0; g < kin::kNumGroups; ++g) {
    const auto& conv = model.params.layer2[g];
    ops.conv1d_forward(trace.stage1[g].data.data(), conv.in_ch, len, conv.w.data(),
                       conv.b.data(), conv.out_ch, cat2.row(g * kLayer2Filters));
  }
  ops.relu_forward(cat2.data.data(), cat2.data.data(), cat2.data.size());
  trace.stage2 = std::move(cat2);

  FeatureMap maps(kLayer3Filters, len);
  {
    const auto& conv = model.params.layer3;
    ops.conv1d_forward(trace.stage2.data.data(), conv.in_ch, len, conv.w.data(), conv.b.data(),
                       conv.out_ch, maps.data.data());
  }
  ops.relu_forward(maps.data.data(), maps.data.data(), maps.data.size());
  trace.final_maps = std::move(maps);

  trace.pooled = gap(trace.final_maps);

  const auto& head = model.params.head;
  trace.z.assign(head.n_out, 0.0);
  for (int i = 0; i < head.n_out; ++i) {
    double acc = head.b[i];
    const double* wi = head.w.data() + static_cast<std::size_t>(i) * kLayer3Filters;
    for (int k = 0; k < kLayer3Filters; ++k) acc += wi[k] * trace.pooled[k];
    trace.z[i] = acc;
  }
  if (model.head_kind == HeadKind::Classification) trace.p = softmax(trace.z);
  return trace;
}

double cross_entropy_loss(const std::vector<double>& p, kin::SkillLevel label) {
  const auto idx = static_cast<std::size_t>(label);
  return -std::log(std::max(p[idx], kLogFloor));
}

double mse_loss(const std::vector<double>& y_hat, const std::vector<double>& y) {
  if (y_hat.size() != y.size()) fail(ErrorCode::LengthMismatch, "mse operand sizes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - y_hat[i];
    acc += d * d;
  }
  return acc / static_cast<double>(y.size());
}

double trace_loss(const ForwardTrace& trace, const Target& target) {
  if (const auto* label = std::get_if<kin::SkillLevel>(&target)) {
    return cross_entropy_loss(trace.p, *label);
  }
  const auto& scores = std::get<kin::OsatsScores>(target);
  return mse_loss(trace.z, std::vector<double>(scores.values.begin(), scores.values.end()));
}

Gradients backward(const FcnModel& model, const ForwardTrace& trace, const Target& target) {
  const bool classification = std::holds_alternative<kin::SkillLevel>(target);
  if (classification != (model.head_kind == HeadKind::Classification)) {
    fail(ErrorCode::HeadMismatch, "target kind does not match the model head");
  }
  if (trace.final_maps.channels != kLayer3Filters ||
      static_cast<int>(trace.z.size()) != model.n_out()) {
    fail(ErrorCode::TraceMismatch, "trace does not belong to this model");
  }
  const auto& ops = kernels::active_ops();
  const int len = trace.len();
  const int n_out = model.n_out();

  Gradients grads = zeros_like(model.params);

  // Head: dL/dz.
  std::vector<double> dz(n_out);
  if (classification) {
    const auto label = std::get<kin::SkillLevel>(target);
    for (int i = 0; i < n_out; ++i) {
      dz[i] = trace.p[i] - (i == static_cast<int>(label) ? 1.0 : 0.0);
    }
  } else {
    const auto& scores = std::get<kin::OsatsScores>(target);
    for (int i = 0; i < n_out; ++i) {
      dz[i] = (trace.z[i] - scores.values[i]) * (2.0 / static_cast<double>(n_out));
    }
  }

  std::vector<double> d_pooled(kLayer3Filters, 0.0);
  for (int i = 0; i < n_out; ++i) {
    const double* wi = model.params.head.w.data() + static_cast<std::size_t>(i) * kLayer3Filters;
    double* dwi = grads.head.w.data() + static_cast<std::size_t>(i) * kLayer3Filters;
    for (int k = 0; k < kLayer3Filters; ++k) {
      dwi[k] = dz[i] * trace.pooled[k];
      d_pooled[k] += wi[k] * dz[i];
    }
    grads.head.b[i] = dz[i];
  }

  // GAP spreads each pooled gradient evenly over time, then the final ReLU
  // gates it.
  FeatureMap d_final(kLayer3Filters, len);
  for (int k = 0; k < kLayer3Filters; ++k) {
    const double v = d_pooled[k] / static_cast<double>(len);
    double* row = d_final.row(k);
    for (int t = 0; t < len; ++t) row[t] = v;
  }
  ops.relu_backward(trace.final_maps.data.data(), d_final.data.data(), d_final.data.data(),
                    d_final.data.size());

  // Layer 3.
  FeatureMap d_stage2(trace.stage2.channels, len);
  {
    const auto& conv = model.params.layer3;
    ops.conv1d_backward_params(trace.stage2.data.data(), conv.in_ch, len, d_final.data.data(),
                               conv.out_ch, grads.layer3.w.data(), grads.layer3.b.data());
    ops.conv1d_backward_data(d_final.data.data(), conv.out_ch, len, conv.w.data(), conv.in_ch,
                             d_stage2.data.data());
  }
  ops.relu_backward(trace.stage2.data.data(), d_stage2.data.data(), d_stage2.data.data(),
                    d_stage2.data.size());

  // Layer 2, per group.
  for (int g = 0; g < kin::kNumGroups; ++g) {
    const auto& conv = model.params.layer2[g];
    const double* dy = d_stage2.row(g * kLayer2Filters);
    ops.conv1d_backward_params(trace.stage1[g].data.data(), conv.in_ch, len, dy, conv.out_ch,
                               grads.layer2[g].w.data(), grads.layer2[g].b.data());
    FeatureMap d_stage1(trace.stage1[g].channels, len);
    ops.conv1d_backward_data(dy, conv.out_ch, len, conv.w.data(), conv.in_ch,
                             d_stage1.data.data());
    ops.relu_backward(trace.stage1[g].data.data(), d_stage1.data.data(), d_stage1.data.data(),
                      d_stage1.data.size());

    // Layer 1, per sub-cluster; input gradients are not needed.
    for (int s = 0; s < kin::kNumSubclusters; ++s) {
      const auto& conv1 = model.params.layer1[g][s];
      ops.conv1d_backward_params(trace.x_sub[g][s].data.data(), conv1.in_ch, len,
                                 d_stage1.row(s * kLayer1Filters), conv1.out_ch,
                                 grads.layer1[g][s].w.data(), grads.layer1[g][s].b.data());
    }
  }
  return grads;
}

GradCheckResult gradient_check(const FcnModel& model, const kin::Matrix& samples,
                               const Target& target, double step) {
  const ForwardTrace trace = forward(model, samples);
  const Gradients analytic = backward(model, trace, target);

  FcnModel probe = model;
  auto probe_tensors = tensors(probe.params);
  auto analytic_tensors = tensors(analytic);

  GradCheckResult result;
  for (std::size_t ti = 0; ti < probe_tensors.size(); ++ti) {
    std::vector<double>& values = *probe_tensors[ti].values;
    const std::vector<double>& grad = *analytic_tensors[ti].values;
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double loss_plus = trace_loss(forward(probe, samples), target);
      values[i] = saved - step;
      const double loss_minus = trace_loss(forward(probe, samples), target);
      values[i] = saved;
      const double numeric = (loss_plus - loss_minus) / (2.0 * step);
      const double denom = std::max(std::abs(grad[i]) + std::abs(numeric), 1e-6);
      worst = std::max(worst, std::abs(grad[i] - numeric) / denom);
    }
    result.per_tensor.push_back({probe_tensors[ti].name, worst});
    result.max_rel_error = std::max(result.max_rel_error, worst);
  }
  return result;
}

}  // namespace skilleval::nn
