#include <algorithm>
#include <cmath>

#include "brwlab/stats.hpp"
#include "kernels_internal.hpp"

namespace brwlab::simd::detail {
namespace {

double sum_exp_affine(const double* v, std::size_t n, double a, double b) {
  stats::CompensatedSum s;
  for (std::size_t i = 0; i < n; ++i) s.add(std::exp(a * v[i] + b));
  return s.value();
}

void hermite_eval(const HermiteView& h, const double* q, double* out, std::size_t n) {
  const double last = static_cast<double>(h.knots - 1);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = std::clamp((q[k] - h.x0) * h.inv_dx, 0.0, last);
    std::size_t i = static_cast<std::size_t>(t);
    if (i >= h.knots - 1) i = h.knots - 2;
    const double u = t - static_cast<double>(i);
    const double omu = 1.0 - u;
    const double h00 = (1.0 + 2.0 * u) * omu * omu;
    const double h10 = u * omu * omu;
    const double h01 = u * u * (3.0 - 2.0 * u);
    const double h11 = -u * u * omu;
    out[k] = h00 * h.y[i] + h10 * h.dslope[i] + h01 * h.y[i + 1] + h11 * h.dslope[i + 1];
  }
}

void exp_array(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

}  // namespace

const Kernels scalar_kernels{Variant::scalar, &sum_exp_affine, &hermite_eval, &exp_array};

}  // namespace brwlab::simd::detail
