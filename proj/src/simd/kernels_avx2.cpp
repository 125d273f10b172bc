// Compiled with -mavx2 -mfma; only reached through the runtime dispatcher.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "brwlab/stats.hpp"
#include "kernels_internal.hpp"

namespace brwlab::simd::detail {
namespace {

// exp(x) for four doubles: Cody–Waite reduction by ln 2, degree-13 Taylor
// polynomial on |r| <= ln2/2, and a two-factor 2^n scale so n = 1024 stays
// finite. Inputs below -708.39 flush to 0.
inline __m256d exp_pd(__m256d x) {
  const __m256d hi = _mm256_set1_pd(709.782712893384);
  const __m256d lo = _mm256_set1_pd(-708.3964185322641);
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634);
  const __m256d ln2hi = _mm256_set1_pd(0.693145751953125);
  const __m256d ln2lo = _mm256_set1_pd(1.42860682030941723212e-6);

  const __m256d xc = _mm256_min_pd(_mm256_max_pd(x, lo), hi);
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(xc, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, ln2hi, xc);
  r = _mm256_fnmadd_pd(n, ln2lo, r);

  __m256d p = _mm256_set1_pd(1.0 / 6227020800.0);
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 479001600.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 39916800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 3628800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 362880.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 40320.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 5040.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 720.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 120.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 24.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 6.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(0.5));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));

  const __m128i ni = _mm256_cvtpd_epi32(n);
  const __m128i n1 = _mm_srai_epi32(ni, 1);
  const __m128i n2 = _mm_sub_epi32(ni, n1);
  const __m256i bias = _mm256_set1_epi64x(1023);
  const __m256d s1 = _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(_mm256_cvtepi32_epi64(n1), bias), 52));
  const __m256d s2 = _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(_mm256_cvtepi32_epi64(n2), bias), 52));
  __m256d res = _mm256_mul_pd(_mm256_mul_pd(p, s1), s2);

  const __m256d under = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
  const __m256d over = _mm256_cmp_pd(x, hi, _CMP_GT_OQ);
  const __m256d nan = _mm256_cmp_pd(x, x, _CMP_UNORD_Q);
  res = _mm256_andnot_pd(under, res);
  res = _mm256_blendv_pd(res, _mm256_set1_pd(HUGE_VAL), over);
  res = _mm256_blendv_pd(res, x, nan);
  return res;
}

double sum_exp_affine(const double* v, std::size_t n, double a, double b) {
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vb = _mm256_set1_pd(b);
  __m256d sum = _mm256_setzero_pd();
  __m256d comp = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d e = exp_pd(_mm256_fmadd_pd(va, _mm256_loadu_pd(v + i), vb));
    const __m256d y = _mm256_sub_pd(e, comp);
    const __m256d t = _mm256_add_pd(sum, y);
    comp = _mm256_sub_pd(_mm256_sub_pd(t, sum), y);
    sum = t;
  }
  alignas(32) double s[4], c[4];
  _mm256_store_pd(s, sum);
  _mm256_store_pd(c, comp);
  stats::CompensatedSum total;
  for (int k = 0; k < 4; ++k) {
    total.add(s[k]);
    total.add(-c[k]);
  }
  for (; i < n; ++i) total.add(std::exp(a * v[i] + b));
  return total.value();
}

void hermite_eval(const HermiteView& h, const double* q, double* out, std::size_t n) {
  const __m256d x0 = _mm256_set1_pd(h.x0);
  const __m256d inv_dx = _mm256_set1_pd(h.inv_dx);
  const __m256d zero = _mm256_setzero_pd();
  const __m256d last = _mm256_set1_pd(static_cast<double>(h.knots - 1));
  const __m128i imax = _mm_set1_epi32(static_cast<int>(h.knots - 2));
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d three = _mm256_set1_pd(3.0);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    __m256d t = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(q + k), x0), inv_dx);
    t = _mm256_min_pd(_mm256_max_pd(t, zero), last);
    const __m128i i = _mm_min_epi32(_mm256_cvttpd_epi32(t), imax);
    const __m256d u = _mm256_sub_pd(t, _mm256_cvtepi32_pd(i));
    const __m256d omu = _mm256_sub_pd(one, u);
    const __m256d omu2 = _mm256_mul_pd(omu, omu);
    const __m256d u2 = _mm256_mul_pd(u, u);
    const __m256d h00 = _mm256_mul_pd(_mm256_fmadd_pd(two, u, one), omu2);
    const __m256d h10 = _mm256_mul_pd(u, omu2);
    const __m256d h01 = _mm256_mul_pd(u2, _mm256_fnmadd_pd(two, u, three));
    const __m256d h11 = _mm256_mul_pd(_mm256_sub_pd(zero, u2), omu);
    const __m256d y0 = _mm256_i32gather_pd(h.y, i, 8);
    const __m256d y1 = _mm256_i32gather_pd(h.y + 1, i, 8);
    const __m256d m0 = _mm256_i32gather_pd(h.dslope, i, 8);
    const __m256d m1 = _mm256_i32gather_pd(h.dslope + 1, i, 8);
    __m256d r = _mm256_mul_pd(h00, y0);
    r = _mm256_fmadd_pd(h10, m0, r);
    r = _mm256_fmadd_pd(h01, y1, r);
    r = _mm256_fmadd_pd(h11, m1, r);
    _mm256_storeu_pd(out + k, r);
  }
  if (k < n) scalar_kernels.hermite_eval(h, q + k, out + k, n - k);
}

void exp_array(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, exp_pd(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = std::exp(x[i]);
}

}  // namespace

const Kernels avx2_kernels{Variant::avx2, &sum_exp_affine, &hermite_eval, &exp_array};

}  // namespace brwlab::simd::detail
