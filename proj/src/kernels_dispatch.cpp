#include "skilleval/kernels.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace skilleval::kernels {

#if defined(SKILLEVAL_HAVE_AVX2)
const KernelOps* avx2_ops_impl();  // kernels_avx2.cpp
#endif

const KernelOps* avx2_ops() {
#if defined(SKILLEVAL_HAVE_AVX2)
  return avx2_ops_impl();
#else
  return nullptr;
#endif
}

const KernelOps& active_ops() {
  static const KernelOps& selected = []() -> const KernelOps& {
    if (const char* env = std::getenv("SKILLEVAL_KERNELS")) {
      if (std::strcmp(env, "scalar") == 0) return scalar_ops();
      if (std::strcmp(env, "avx2") == 0) {
        if (const KernelOps* ops = avx2_ops()) return *ops;
        std::fprintf(stderr, "skilleval: SKILLEVAL_KERNELS=avx2 requested but unavailable, using scalar\n");
        return scalar_ops();
      }
      std::fprintf(stderr, "skilleval: unknown SKILLEVAL_KERNELS value '%s', using autodetection\n", env);
    }
    if (const KernelOps* ops = avx2_ops()) return *ops;
    return scalar_ops();
  }();
  return selected;
}

}  // namespace skilleval::kernels
