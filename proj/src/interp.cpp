#include "brwlab/interp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace brwlab::interp {
namespace {

double edge_slope(double d0, double d1) {
  double m = (3.0 * d0 - d1) / 2.0;
  if (m * d0 <= 0.0) return 0.0;
  if (d0 * d1 < 0.0 && std::abs(m) > 3.0 * std::abs(d0)) m = 3.0 * d0;
  return m;
}

}  // namespace

std::vector<double> pchip_dslopes(std::span<const double> y) {
  const std::size_t n = y.size();
  if (n < 2) throw std::invalid_argument("pchip_dslopes: need at least two knots");
  std::vector<double> m(n, 0.0);
  if (n == 2) {
    m[0] = m[1] = y[1] - y[0];
    return m;
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double a = y[i] - y[i - 1], b = y[i + 1] - y[i];
    m[i] = a * b > 0.0 ? 2.0 * a * b / (a + b) : 0.0;
  }
  m[0] = edge_slope(y[1] - y[0], y[2] - y[1]);
  m[n - 1] = edge_slope(y[n - 1] - y[n - 2], y[n - 2] - y[n - 3]);
  return m;
}

double hermite_at(const simd::HermiteView& h, double q) {
  double t = (q - h.x0) * h.inv_dx;
  t = std::clamp(t, 0.0, static_cast<double>(h.knots - 1));
  std::size_t i = static_cast<std::size_t>(t);
  if (i > h.knots - 2) i = h.knots - 2;
  const double u = t - static_cast<double>(i);
  const double omu = 1.0 - u;
  return (1.0 + 2.0 * u) * omu * omu * h.y[i] + u * omu * omu * h.dslope[i] +
         u * u * (3.0 - 2.0 * u) * h.y[i + 1] - u * u * omu * h.dslope[i + 1];
}

double hermite_derivative_at(const simd::HermiteView& h, double q) {
  double t = (q - h.x0) * h.inv_dx;
  t = std::clamp(t, 0.0, static_cast<double>(h.knots - 1));
  std::size_t i = static_cast<std::size_t>(t);
  if (i > h.knots - 2) i = h.knots - 2;
  const double u = t - static_cast<double>(i);
  const double d00 = 6.0 * u * (u - 1.0);
  const double d10 = (1.0 - u) * (1.0 - 3.0 * u);
  const double d11 = u * (3.0 * u - 2.0);
  return (d00 * (h.y[i] - h.y[i + 1]) + d10 * h.dslope[i] + d11 * h.dslope[i + 1]) * h.inv_dx;
}

}  // namespace brwlab::interp
