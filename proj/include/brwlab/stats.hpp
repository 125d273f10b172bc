#pragma once

// Small statistics toolbox shared by the samplers, the table diagnostics and
// the acceptance harness.

#include <cstddef>
#include <span>
#include <vector>

namespace brwlab::stats {

// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (abs_(sum_) >= abs_(x)) comp_ += (sum_ - t) + x;
    else comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  static double abs_(double x) { return x < 0 ? -x : x; }
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct MeanVar {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  std::size_t n = 0;
  double std_error() const;
};

MeanVar mean_var(std::span<const double> xs);

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

// Delete-one-group jackknife of the mean of f(x); `groups` contiguous blocks.
Estimate jackknife_mean(std::span<const double> xs, std::size_t groups = 100);

// Kolmogorov–Smirnov two-sample statistic sup |F_a - F_b|.
double ks_statistic(std::vector<double> a, std::vector<double> b);
// Asymptotic critical value of the two-sample KS statistic at significance `alpha`.
double ks_critical(std::size_t n, std::size_t m, double alpha);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};
Interval wilson_interval(std::size_t successes, std::size_t n, double z = 1.959963984540054);

double quantile(std::vector<double> xs, double q);

// Ordinary least-squares slope of y on x.
double ols_slope(std::span<const double> x, std::span<const double> y);

// Integrated autocorrelation time (Geyer initial positive sequence).
double integrated_autocorr_time(std::span<const double> trace);

// Split-R-hat over equal-length chains.
double split_rhat(const std::vector<std::vector<double>>& chains);

// Batch-means standard error of the mean of a single trace.
double batch_means_se(std::span<const double> trace, std::size_t batches = 20);

}  // namespace brwlab::stats
