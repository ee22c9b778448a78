#include "skilleval/kernels.hpp"

#include <cmath>

namespace skilleval::kernels {
namespace {

void conv1d_forward_scalar(const double* x, int in_ch, int len, const double* w,
                           const double* bias, int out_ch, double* y) {
  for (int o = 0; o < out_ch; ++o) {
    double* yo = y + static_cast<std::size_t>(o) * len;
    for (int t = 0; t < len; ++t) yo[t] = bias[o];
    const double* wo = w + static_cast<std::size_t>(o) * in_ch * 3;
    for (int c = 0; c < in_ch; ++c) {
      const double* xc = x + static_cast<std::size_t>(c) * len;
      const double k0 = wo[c * 3 + 0];
      const double k1 = wo[c * 3 + 1];
      const double k2 = wo[c * 3 + 2];
      yo[0] += k1 * xc[0];
      if (len > 1) yo[0] += k2 * xc[1];
      for (int t = 1; t + 1 < len; ++t) {
        yo[t] += k0 * xc[t - 1] + k1 * xc[t] + k2 * xc[t + 1];
      }
      if (len > 1) yo[len - 1] += k0 * xc[len - 2] + k1 * xc[len - 1];
    }
  }
}

void conv1d_backward_data_scalar(const double* dy, int out_ch, int len, const double* w,
                                 int in_ch, double* dx) {
  for (int c = 0; c < in_ch; ++c) {
    double* dxc = dx + static_cast<std::size_t>(c) * len;
    for (int t = 0; t < len; ++t) dxc[t] = 0.0;
    for (int o = 0; o < out_ch; ++o) {
      const double* dyo = dy + static_cast<std::size_t>(o) * len;
      const double* wo = w + (static_cast<std::size_t>(o) * in_ch + c) * 3;
      const double k0 = wo[0];
      const double k1 = wo[1];
      const double k2 = wo[2];
      // Tap d contributed x[t+d-1] on the forward pass, so position t here
      // collects dy[t+1-d].
      dxc[0] += k1 * dyo[0];
      if (len > 1) dxc[0] += k0 * dyo[1];
      for (int t = 1; t + 1 < len; ++t) {
        dxc[t] += k0 * dyo[t + 1] + k1 * dyo[t] + k2 * dyo[t - 1];
      }
      if (len > 1) dxc[len - 1] += k1 * dyo[len - 1] + k2 * dyo[len - 2];
    }
  }
}

void conv1d_backward_params_scalar(const double* x, int in_ch, int len, const double* dy,
                                   int out_ch, double* dw, double* db) {
  for (int o = 0; o < out_ch; ++o) {
    const double* dyo = dy + static_cast<std::size_t>(o) * len;
    double bias_sum = 0.0;
    for (int t = 0; t < len; ++t) bias_sum += dyo[t];
    db[o] = bias_sum;
    for (int c = 0; c < in_ch; ++c) {
      const double* xc = x + static_cast<std::size_t>(c) * len;
      double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0;
      for (int t = 1; t < len; ++t) acc0 += dyo[t] * xc[t - 1];
      for (int t = 0; t < len; ++t) acc1 += dyo[t] * xc[t];
      for (int t = 0; t + 1 < len; ++t) acc2 += dyo[t] * xc[t + 1];
      double* dwc = dw + (static_cast<std::size_t>(o) * in_ch + c) * 3;
      dwc[0] = acc0;
      dwc[1] = acc1;
      dwc[2] = acc2;
    }
  }
}

void relu_forward_scalar(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_scalar(const double* y, const double* dy, double* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
}

void adam_step_scalar(double* theta, double* m, double* v, const double* g, std::size_t n,
                      double lr, double beta1, double beta2, double eps, double l2,
                      double inv_bias1, double inv_bias2) {
  for (std::size_t i = 0; i < n; ++i) {
    const double grad = g[i] + l2 * theta[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad;
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad * grad;
    const double m_hat = m[i] * inv_bias1;
    const double v_hat = v[i] * inv_bias2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

}  // namespace

const KernelOps& scalar_ops() {
  static const KernelOps ops{
      "scalar",
      conv1d_forward_scalar,
      conv1d_backward_data_scalar,
      conv1d_backward_params_scalar,
      relu_forward_scalar,
      relu_backward_scalar,
      adam_step_scalar,
  };
  return ops;
}

}  // namespace skilleval::kernels
