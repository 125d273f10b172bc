#include "brwlab/quadrature.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/random/sobol.hpp>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace brwlab::quad {

Rule gauss_hermite(int n) {
  if (n < 1 || n > 200) throw std::invalid_argument("gauss_hermite: need 1 <= n <= 200");
  // Newton on the orthonormal Hermite recurrence (weight e^{-x^2}), then
  // rescale to the standard normal.
  std::vector<double> x(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
  const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0) z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
    else if (i == 1) z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    else if (i == 2) z = 1.86 * z - 0.86 * x[0];
    else if (i == 3) z = 1.91 * z - 0.91 * x[1];
    else z = 2.0 * z - x[static_cast<std::size_t>(i - 2)];
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    x[static_cast<std::size_t>(i)] = z;
    x[static_cast<std::size_t>(n - 1 - i)] = -z;
    w[static_cast<std::size_t>(i)] = 2.0 / (pp * pp);
    w[static_cast<std::size_t>(n - 1 - i)] = w[static_cast<std::size_t>(i)];
  }
  Rule r;
  r.nodes.resize(x.size());
  r.weights.resize(w.size());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(n - 1 - i);  // ascending nodes
    r.nodes[static_cast<std::size_t>(i)] = std::numbers::sqrt2 * x[k];
    r.weights[static_cast<std::size_t>(i)] = w[k] / std::sqrt(std::numbers::pi);
    total += r.weights[static_cast<std::size_t>(i)];
  }
  for (double& v : r.weights) v /= total;
  return r;
}

std::vector<double> sobol_normal(int dim, std::size_t n) {
  if (dim < 1) throw std::invalid_argument("sobol_normal: dim must be >= 1");
  if (n == 0 || (n & (n - 1)) != 0 || n > (std::size_t{1} << 30))
    throw std::invalid_argument("sobol_normal: n must be a power of two up to 2^30");
  boost::random::sobol_engine<std::uint32_t, 32, boost::random::default_sobol_table> gen(static_cast<std::size_t>(dim));
  const boost::math::normal_distribution<double> nd;
  std::vector<double> out(static_cast<std::size_t>(dim) * n);
  constexpr double scale = 1.0 / 4294967296.0;
  // The first n points put one value in each cell of width 1/n per
  // coordinate; shift them to the cell centres.
  const double half_cell = 0.5 * 4294967296.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = (static_cast<double>(gen()) + half_cell) * scale;
    out[i] = boost::math::quantile(nd, u);
  }
  return out;
}

std::vector<double> zero_sum_basis(int d) {
  if (d < 2) throw std::invalid_argument("zero_sum_basis: d must be >= 2");
  const auto D = static_cast<std::size_t>(d);
  std::vector<double> b(D * (D - 1), 0.0);
  for (std::size_t k = 1; k < D; ++k) {
    const double norm = std::sqrt(static_cast<double>(k * (k + 1)));
    for (std::size_t i = 0; i < k; ++i) b[i * (D - 1) + (k - 1)] = 1.0 / norm;
    b[k * (D - 1) + (k - 1)] = -static_cast<double>(k) / norm;
  }
  return b;
}

}  // namespace brwlab::quad
