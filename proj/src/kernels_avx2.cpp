// AVX2/FMA variants of the scalar reference kernels. Compiled only on x86_64
// (see src/CMakeLists.txt); selection happens at runtime in active_ops().

#include "skilleval/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace skilleval::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

void conv1d_forward_avx2(const double* x, int in_ch, int len, const double* w,
                         const double* bias, int out_ch, double* y) {
  for (int o = 0; o < out_ch; ++o) {
    double* yo = y + static_cast<std::size_t>(o) * len;
    const __m256d bias_vec = _mm256_set1_pd(bias[o]);
    int t = 0;
    for (; t + 4 <= len; t += 4) _mm256_storeu_pd(yo + t, bias_vec);
    for (; t < len; ++t) yo[t] = bias[o];

    const double* wo = w + static_cast<std::size_t>(o) * in_ch * 3;
    for (int c = 0; c < in_ch; ++c) {
      const double* xc = x + static_cast<std::size_t>(c) * len;
      const double k0 = wo[c * 3 + 0];
      const double k1 = wo[c * 3 + 1];
      const double k2 = wo[c * 3 + 2];
      const __m256d k0v = _mm256_set1_pd(k0);
      const __m256d k1v = _mm256_set1_pd(k1);
      const __m256d k2v = _mm256_set1_pd(k2);

      yo[0] += k1 * xc[0];
      if (len > 1) yo[0] += k2 * xc[1];
      int i = 1;
      for (; i + 4 <= len - 1; i += 4) {
        __m256d acc = _mm256_loadu_pd(yo + i);
        acc = _mm256_fmadd_pd(k0v, _mm256_loadu_pd(xc + i - 1), acc);
        acc = _mm256_fmadd_pd(k1v, _mm256_loadu_pd(xc + i), acc);
        acc = _mm256_fmadd_pd(k2v, _mm256_loadu_pd(xc + i + 1), acc);
        _mm256_storeu_pd(yo + i, acc);
      }
      for (; i + 1 < len; ++i) {
        yo[i] += k0 * xc[i - 1] + k1 * xc[i] + k2 * xc[i + 1];
      }
      if (len > 1) yo[len - 1] += k0 * xc[len - 2] + k1 * xc[len - 1];
    }
  }
}

void conv1d_backward_data_avx2(const double* dy, int out_ch, int len, const double* w,
                               int in_ch, double* dx) {
  for (int c = 0; c < in_ch; ++c) {
    double* dxc = dx + static_cast<std::size_t>(c) * len;
    const __m256d zero = _mm256_setzero_pd();
    int t = 0;
    for (; t + 4 <= len; t += 4) _mm256_storeu_pd(dxc + t, zero);
    for (; t < len; ++t) dxc[t] = 0.0;

    for (int o = 0; o < out_ch; ++o) {
      const double* dyo = dy + static_cast<std::size_t>(o) * len;
      const double* wo = w + (static_cast<std::size_t>(o) * in_ch + c) * 3;
      const double k0 = wo[0];
      const double k1 = wo[1];
      const double k2 = wo[2];
      const __m256d k0v = _mm256_set1_pd(k0);
      const __m256d k1v = _mm256_set1_pd(k1);
      const __m256d k2v = _mm256_set1_pd(k2);

      dxc[0] += k1 * dyo[0];
      if (len > 1) dxc[0] += k0 * dyo[1];
      int i = 1;
      for (; i + 4 <= len - 1; i += 4) {
        __m256d acc = _mm256_loadu_pd(dxc + i);
        acc = _mm256_fmadd_pd(k0v, _mm256_loadu_pd(dyo + i + 1), acc);
        acc = _mm256_fmadd_pd(k1v, _mm256_loadu_pd(dyo + i), acc);
        acc = _mm256_fmadd_pd(k2v, _mm256_loadu_pd(dyo + i - 1), acc);
        _mm256_storeu_pd(dxc + i, acc);
      }
      for (; i + 1 < len; ++i) {
        dxc[i] += k0 * dyo[i + 1] + k1 * dyo[i] + k2 * dyo[i - 1];
      }
      if (len > 1) dxc[len - 1] += k1 * dyo[len - 1] + k2 * dyo[len - 2];
    }
  }
}

void conv1d_backward_params_avx2(const double* x, int in_ch, int len, const double* dy,
                                 int out_ch, double* dw, double* db) {
  for (int o = 0; o < out_ch; ++o) {
    const double* dyo = dy + static_cast<std::size_t>(o) * len;
    __m256d bias_acc = _mm256_setzero_pd();
    int t = 0;
    for (; t + 4 <= len; t += 4) bias_acc = _mm256_add_pd(bias_acc, _mm256_loadu_pd(dyo + t));
    double bias_sum = hsum(bias_acc);
    for (; t < len; ++t) bias_sum += dyo[t];
    db[o] = bias_sum;

    for (int c = 0; c < in_ch; ++c) {
      const double* xc = x + static_cast<std::size_t>(c) * len;
      // Shared interior t in [1, len-1); the per-tap edge terms are added
      // separately below.
      __m256d a0 = _mm256_setzero_pd();
      __m256d a1 = _mm256_setzero_pd();
      __m256d a2 = _mm256_setzero_pd();
      int i = 1;
      for (; i + 4 <= len - 1; i += 4) {
        const __m256d dyv = _mm256_loadu_pd(dyo + i);
        a0 = _mm256_fmadd_pd(dyv, _mm256_loadu_pd(xc + i - 1), a0);
        a1 = _mm256_fmadd_pd(dyv, _mm256_loadu_pd(xc + i), a1);
        a2 = _mm256_fmadd_pd(dyv, _mm256_loadu_pd(xc + i + 1), a2);
      }
      double acc0 = hsum(a0);
      double acc1 = hsum(a1);
      double acc2 = hsum(a2);
      for (; i + 1 < len; ++i) {
        acc0 += dyo[i] * xc[i - 1];
        acc1 += dyo[i] * xc[i];
        acc2 += dyo[i] * xc[i + 1];
      }
      acc1 += dyo[0] * xc[0];
      if (len > 1) {
        acc0 += dyo[len - 1] * xc[len - 2];
        acc1 += dyo[len - 1] * xc[len - 1];
        acc2 += dyo[0] * xc[1];
      }
      double* dwc = dw + (static_cast<std::size_t>(o) * in_ch + c) * 3;
      dwc[0] = acc0;
      dwc[1] = acc1;
      dwc[2] = acc2;
    }
  }
}

void relu_forward_avx2(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_avx2(const double* y, const double* dy, double* dx, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(y + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(dx + i, _mm256_and_pd(mask, _mm256_loadu_pd(dy + i)));
  }
  for (; i < n; ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
}

void adam_step_avx2(double* theta, double* m, double* v, const double* g, std::size_t n,
                    double lr, double beta1, double beta2, double eps, double l2,
                    double inv_bias1, double inv_bias2) {
  const __m256d l2v = _mm256_set1_pd(l2);
  const __m256d b1v = _mm256_set1_pd(beta1);
  const __m256d b2v = _mm256_set1_pd(beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d lrv = _mm256_set1_pd(lr);
  const __m256d epsv = _mm256_set1_pd(eps);
  const __m256d inv1 = _mm256_set1_pd(inv_bias1);
  const __m256d inv2 = _mm256_set1_pd(inv_bias2);

  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d th = _mm256_loadu_pd(theta + i);
    const __m256d grad = _mm256_fmadd_pd(l2v, th, _mm256_loadu_pd(g + i));
    const __m256d mi = _mm256_fmadd_pd(b1v, _mm256_loadu_pd(m + i), _mm256_mul_pd(omb1, grad));
    const __m256d vi = _mm256_fmadd_pd(
        b2v, _mm256_loadu_pd(v + i), _mm256_mul_pd(omb2, _mm256_mul_pd(grad, grad)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d num = _mm256_mul_pd(lrv, _mm256_mul_pd(mi, inv1));
    const __m256d den = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vi, inv2)), epsv);
    _mm256_storeu_pd(theta + i, _mm256_sub_pd(th, _mm256_div_pd(num, den)));
  }
  for (; i < n; ++i) {
    const double grad = g[i] + l2 * theta[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad;
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad * grad;
    theta[i] -= lr * (m[i] * inv_bias1) / (std::sqrt(v[i] * inv_bias2) + eps);
  }
}

}  // namespace

const KernelOps* avx2_ops_impl() {
  if (!__builtin_cpu_supports("avx2") || !__builtin_cpu_supports("fma")) return nullptr;
  static const KernelOps ops{
      "avx2",
      conv1d_forward_avx2,
      conv1d_backward_data_avx2,
      conv1d_backward_params_avx2,
      relu_forward_avx2,
      relu_backward_avx2,
      adam_step_avx2,
  };
  return &ops;
}

}  // namespace skilleval::kernels
