#pragma once

#include "brwlab/simd.hpp"

namespace brwlab::simd::detail {

extern const Kernels scalar_kernels;
#ifdef BRWLAB_HAVE_AVX2
extern const Kernels avx2_kernels;
#endif

}  // namespace brwlab::simd::detail
