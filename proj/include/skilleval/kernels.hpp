#pragma once

#include <cstddef>

namespace skilleval::kernels {

// Numeric inner loops, provided as a scalar reference implementation plus an
// AVX2 variant selected at runtime. Feature maps are channel-major
// (x[c * len + t]); convolution weights are w[(o * in_ch + c) * 3 + d] with
// tap d in {0,1,2} reading input offsets {-1,0,+1}. All convolutions are
// stride 1, kernel length 3, SAME zero padding, so outputs keep the input
// time length.
struct KernelOps {
  const char* name;

  // y[o][t] = bias[o] + sum_c sum_d w[o][c][d] * x[c][t+d-1]
  void (*conv1d_forward)(const double* x, int in_ch, int len, const double* w,
                         const double* bias, int out_ch, double* y);

  // dx[c][t] = sum_o sum_d w[o][c][d] * dy[o][t+1-d]
  void (*conv1d_backward_data)(const double* dy, int out_ch, int len, const double* w,
                               int in_ch, double* dx);

  // dw[o][c][d] = sum_t dy[o][t] * x[c][t+d-1];  db[o] = sum_t dy[o][t]
  void (*conv1d_backward_params)(const double* x, int in_ch, int len, const double* dy,
                                 int out_ch, double* dw, double* db);

  void (*relu_forward)(const double* x, double* y, std::size_t n);

  // dx = dy where the forward output y was positive, 0 elsewhere (this also
  // assigns subgradient 0 at exactly 0).
  void (*relu_backward)(const double* y, const double* dy, double* dx, std::size_t n);

  // In-place Adam update of one flat parameter tensor. inv_bias1/2 are the
  // precomputed 1/(1-beta^t) corrections; l2 is added to the raw gradient as
  // l2 * theta before the moment updates.
  void (*adam_step)(double* theta, double* m, double* v, const double* g, std::size_t n,
                    double lr, double beta1, double beta2, double eps, double l2,
                    double inv_bias1, double inv_bias2);
};

const KernelOps& scalar_ops();

/// AVX2+FMA variant, or nullptr when the build or the CPU lacks it.
const KernelOps* avx2_ops();

/// Runtime-selected table. SKILLEVAL_KERNELS=scalar|avx2 overrides detection
/// (an unavailable choice falls back to scalar with a warning on stderr).
const KernelOps& active_ops();

}  // namespace skilleval::kernels
