#include "brwlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace brwlab::stats {

double MeanVar::std_error() const { return n > 0 ? std::sqrt(variance / static_cast<double>(n)) : 0.0; }

MeanVar mean_var(std::span<const double> xs) {
  MeanVar r;
  double m = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (double x : xs) {
    ++n;
    const double delta = x - m;
    m += delta / static_cast<double>(n);
    s2 += delta * (x - m);
  }
  r.n = n;
  r.mean = m;
  r.variance = n > 1 ? s2 / static_cast<double>(n - 1) : 0.0;
  return r;
}

Estimate jackknife_mean(std::span<const double> xs, std::size_t groups) {
  const std::size_t n = xs.size();
  if (n < 2) throw std::invalid_argument("jackknife_mean: need at least two samples");
  groups = std::clamp<std::size_t>(groups, 2, n);
  std::vector<double> gsum(groups, 0.0);
  std::vector<std::size_t> gcount(groups, 0);
  CompensatedSum total;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t g = i * groups / n;
    gsum[g] += xs[i];
    ++gcount[g];
    total.add(xs[i]);
  }
  const double full = total.value() / static_cast<double>(n);
  std::vector<double> loo(groups);
  for (std::size_t g = 0; g < groups; ++g)
    loo[g] = (total.value() - gsum[g]) / static_cast<double>(n - gcount[g]);
  const double loo_mean = std::accumulate(loo.begin(), loo.end(), 0.0) / static_cast<double>(groups);
  double ss = 0.0;
  for (double v : loo) ss += (v - loo_mean) * (v - loo_mean);
  const double g = static_cast<double>(groups);
  return {full, std::sqrt((g - 1.0) / g * ss)};
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double ks_critical(std::size_t n, std::size_t m, double alpha) {
  const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return c * std::sqrt((nn + mm) / (nn * mm));
}

Interval wilson_interval(std::size_t successes, std::size_t n, double z) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double centre = (p + z2 / (2 * nn)) / (1 + z2 / nn);
  const double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / (1 + z2 / nn);
  return {successes == 0 ? 0.0 : std::max(0.0, centre - half), successes == n ? 1.0 : std::min(1.0, centre + half)};
}

double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw std::invalid_argument("quantile: empty sample");
  q = std::clamp(q, 0.0, 1.0);
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(lo), xs.end());
  const double vlo = xs[lo];
  if (hi == lo) return vlo;
  const double vhi = *std::min_element(xs.begin() + static_cast<std::ptrdiff_t>(lo) + 1, xs.end());
  return vlo + (pos - static_cast<double>(lo)) * (vhi - vlo);
}

double ols_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("ols_slope: need >= 2 paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw std::invalid_argument("ols_slope: degenerate abscissae");
  return sxy / sxx;
}

double integrated_autocorr_time(std::span<const double> trace) {
  const std::size_t n = trace.size();
  if (n < 4) return 1.0;
  const double m = std::accumulate(trace.begin(), trace.end(), 0.0) / static_cast<double>(n);
  auto acov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (trace[i] - m) * (trace[i + lag] - m);
    return s / static_cast<double>(n);
  };
  const double c0 = acov(0);
  if (c0 <= 0.0) return 1.0;
  // Sum consecutive pairs while they stay positive.
  double tau = -1.0;
  for (std::size_t lag = 0; lag + 1 < n / 2; lag += 2) {
    const double pair = (acov(lag) + acov(lag + 1)) / c0;
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  return std::max(tau, 1.0);
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::span<const double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    if (h < 2) throw std::invalid_argument("split_rhat: chains too short");
    halves.emplace_back(c.data(), h);
    halves.emplace_back(c.data() + (c.size() - h), h);
  }
  const std::size_t m = halves.size();
  const std::size_t n = halves.front().size();
  std::vector<double> means(m), vars(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto mv = mean_var(halves[j]);
    means[j] = mv.mean;
    vars[j] = mv.variance;
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= static_cast<double>(n) / static_cast<double>(m - 1);
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / static_cast<double>(m);
  if (w <= 0.0) return 1.0;
  const double nn = static_cast<double>(n);
  const double var_plus = (nn - 1.0) / nn * w + b / nn;
  return std::sqrt(var_plus / w);
}

double batch_means_se(std::span<const double> trace, std::size_t batches) {
  const std::size_t n = trace.size();
  batches = std::min(batches, n);
  if (batches < 2) return 0.0;
  const std::size_t len = n / batches;
  std::vector<double> bm(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += trace[b * len + i];
    bm[b] = s / static_cast<double>(len);
  }
  return mean_var(bm).std_error();
}

}  // namespace brwlab::stats
