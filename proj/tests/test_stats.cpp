#include "doctest.h"

#include <atomic>
#include <cmath>
#include <numeric>

#include "brwlab/hash.hpp"
#include "brwlab/parallel.hpp"
#include "brwlab/rng.hpp"
#include "brwlab/stats.hpp"

using namespace brwlab;

TEST_CASE("keyed streams are reproducible and distinct") {
  rng::Stream a(5, 1, 2), b(5, 1, 2), c(5, 2, 1);
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    CHECK(x == b());
    CHECK(x != c());
  }
  CHECK(rng::derive(1, 2, 3) != rng::derive(1, 3, 2));
}

TEST_CASE("stream marginals") {
  rng::Stream rs(99);
  std::vector<double> z(200000), u(200000);
  for (auto& x : z) x = rs.normal();
  for (auto& x : u) {
    x = rs.uniform();
    REQUIRE(x > 0.0);
    REQUIRE(x < 1.0);
  }
  const auto mz = stats::mean_var(z), mu = stats::mean_var(u);
  const double n = static_cast<double>(z.size());
  CHECK(std::abs(mz.mean) <= 4.0 / std::sqrt(n));
  CHECK(std::abs(mz.variance - 1.0) <= 4.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(mu.mean - 0.5) <= 4.0 * std::sqrt(1.0 / 12.0 / n));
  std::size_t hits = 0;
  for (int i = 0; i < 70000; ++i) hits += rs.below(7) == 3;
  CHECK(std::abs(static_cast<double>(hits) - 10000.0) <= 4.0 * std::sqrt(70000.0 * (1.0 / 7) * (6.0 / 7)));
}

TEST_CASE("compensated sum") {
  stats::CompensatedSum s;
  s.add(1.0);
  for (int i = 0; i < 1000; ++i) s.add(1e-16);
  s.add(-1.0);
  CHECK(s.value() == doctest::Approx(1e-13).epsilon(1e-9));
}

TEST_CASE("mean, variance and jackknife") {
  const std::vector<double> xs{1, 2, 3, 4, 5, 6, 7, 8};
  const auto mv = stats::mean_var(xs);
  CHECK(mv.mean == 4.5);
  CHECK(mv.variance == doctest::Approx(6.0));
  // With one sample per group the jackknife error equals the textbook s / sqrt(n).
  const auto jk = stats::jackknife_mean(xs, xs.size());
  CHECK(jk.value == 4.5);
  CHECK(jk.std_error == doctest::Approx(std::sqrt(6.0 / 8.0)));
}

TEST_CASE("quantiles, slopes and intervals") {
  std::vector<double> xs(101);
  std::iota(xs.begin(), xs.end(), 0.0);
  CHECK(stats::quantile(xs, 0.9) == doctest::Approx(90.0));
  CHECK(stats::quantile(xs, 0.25) == doctest::Approx(25.0));
  const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  CHECK(stats::ols_slope(x, y) == doctest::Approx(2.0));
  const auto ci = stats::wilson_interval(50, 100);
  CHECK(ci.lo < 0.5);
  CHECK(ci.hi > 0.5);
  CHECK(ci.hi - 0.5 == doctest::Approx(0.5 - ci.lo));
  CHECK(stats::wilson_interval(0, 100).lo == 0.0);
}

TEST_CASE("KS statistic and critical value") {
  CHECK(stats::ks_statistic({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(stats::ks_statistic({1, 2}, {3, 4}) == 1.0);
  CHECK(stats::ks_critical(1000, 1000, 0.01) == doctest::Approx(1.6276 * std::sqrt(2.0 / 1000)).epsilon(1e-3));
  rng::Stream rs(3);
  std::vector<double> a(20000), b(20000);
  for (auto& v : a) v = rs.normal();
  for (auto& v : b) v = rs.normal();
  CHECK(stats::ks_statistic(a, b) < stats::ks_critical(a.size(), b.size(), 0.01));
  for (auto& v : b) v += 0.1;
  CHECK(stats::ks_statistic(a, b) > stats::ks_critical(a.size(), b.size(), 0.01));
}

TEST_CASE("autocorrelation, batch means and split R-hat") {
  rng::Stream rs(8);
  const double phi = 0.9;
  std::vector<std::vector<double>> chains(4);
  for (auto& c : chains) {
    double x = 0.0;
    for (int i = 0; i < 20000; ++i) {
      x = phi * x + std::sqrt(1 - phi * phi) * rs.normal();
      c.push_back(x);
    }
  }
  // AR(1): tau = (1 + phi) / (1 - phi) = 19
  CHECK(stats::integrated_autocorr_time(chains[0]) == doctest::Approx(19.0).epsilon(0.25));
  CHECK(stats::split_rhat(chains) < 1.01);
  const double se = stats::batch_means_se(chains[0]);
  CHECK(se == doctest::Approx(std::sqrt(19.0 / 20000.0)).epsilon(0.4));
  chains[1] = std::vector<double>(chains[1].size(), 3.0);
  for (std::size_t i = 0; i < chains[1].size(); ++i) chains[1][i] += chains[2][i];
  CHECK(stats::split_rhat(chains) > 1.1);
}

TEST_CASE("parallel_for covers every index once and rethrows") {
  for (int t : {1, 3, 8}) {
    par::set_threads(t);
    std::vector<std::atomic<int>> hit(1000);
    par::parallel_for(hit.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) hit[i]++;
    });
    for (auto& h : hit) CHECK(h.load() == 1);
    CHECK_THROWS_AS(par::parallel_for(10, [](std::size_t, std::size_t) { throw std::runtime_error("x"); }),
                    std::runtime_error);
  }
  par::set_threads(1);
}

TEST_CASE("FNV-1a digest") {
  hash::Fnv1a h;
  h.text("a");
  CHECK(h.digest() == 0xaf63dc4c8601ec8cULL);
  CHECK(hash::to_hex(0xabcULL) == "0000000000000abc");
}
