#include "doctest.h"

#include <cmath>
#include <sstream>

#include "brwlab/chaos.hpp"
#include "brwlab/stats.hpp"

using namespace brwlab;
using chaos::ChaosParams;
using chaos::PoolKind;

TEST_CASE("chaos parameters") {
  const auto p = ChaosParams::make(2, 0.5);
  CHECK(p.kappa == doctest::Approx(2 * std::log(2.0) / 0.25));
  CHECK(p.alpha == doctest::Approx(0.8471).epsilon(1e-4));
  CHECK(std::pow(p.p, p.alpha) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(p.shift() == doctest::Approx(std::log(p.p) / 0.5));
  CHECK(ChaosParams::make(2, 1.0).alpha == doctest::Approx(0.5809).epsilon(1e-4));
  CHECK(ChaosParams::make(4, 1.0).alpha == doctest::Approx(0.7349).epsilon(1e-4));
  CHECK_THROWS(ChaosParams::make(2, 0.0));
  CHECK_THROWS(ChaosParams::make(2, std::sqrt(2 * std::log(2.0))));
  CHECK_THROWS(ChaosParams::make(1, 0.5));
}

TEST_CASE("partial mass") {
  const tree::TreeShape t(2, 8);
  const auto f0 = field::sample_balanced_field(t, 0, 1);
  CHECK(chaos::partial_mass(f0, 0.5) == 1.0);
  const auto f6 = field::sample_balanced_field(t, 6, 1);
  CHECK(chaos::partial_mass(f6, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> ms;
  for (std::uint64_t r = 0; r < 100000; ++r) ms.push_back(chaos::partial_mass(field::sample_balanced_field(t, 6, r), 0.5));
  const auto mv = stats::mean_var(ms);
  CHECK(std::abs(mv.mean - 1.0) <= 0.01);
  CHECK(std::abs(mv.mean - 1.0) <= 4.0 * mv.std_error());
}

TEST_CASE("gamma = 0 is a fixed point of the refresh") {
  ChaosParams p0;
  p0.d = 3;
  p0.gamma = 0.0;
  for (auto kind : {PoolKind::balanced, PoolKind::standard, PoolKind::joint}) {
    auto pool = chaos::initial_pool(kind, p0, 1000, 4);
    for (int r = 0; r < 3; ++r) pool = chaos::pool_refresh(pool, p0);
    for (double m : pool.samples) CHECK(m == doctest::Approx(1.0).epsilon(1e-15));
    for (double m : pool.minus) CHECK(m == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK_THROWS_AS(chaos::initial_pool(PoolKind::balanced, p0, 0, 1), ContractViolation);
}

TEST_CASE("pools: positivity, martingale mean, determinism, checkpoints") {
  const auto p = ChaosParams::make(2, 0.5);
  chaos::BuildReport rep;
  const auto pool = chaos::build_pool(PoolKind::balanced, p, 100000, 7, 50, 60, &rep);
  CHECK(rep.sweeps >= 51);
  CHECK(pool.refresh_count == rep.sweeps);
  CHECK(rep.ks_threshold == doctest::Approx(2.0 / std::sqrt(1e5)));
  for (double m : pool.samples) REQUIRE(m > 0.0);
  const auto mc = chaos::mean_check(pool);
  CHECK(mc.ok());
  CHECK(std::abs(mc.mean - 1.0) <= 0.005);

  const auto again = chaos::build_pool(PoolKind::balanced, p, 100000, 7, 50, 60);
  CHECK(again.samples == pool.samples);
  CHECK(again.fingerprint() == pool.fingerprint());

  std::stringstream ss;
  chaos::save_pool(pool, ss);
  const auto back = chaos::load_pool(ss);
  CHECK(back.samples == pool.samples);
  CHECK(back.refresh_count == pool.refresh_count);
  CHECK(back.fingerprint() == pool.fingerprint());

  // Every further sweep keeps the mean at 1 within Monte-Carlo error.
  auto cur = pool;
  for (int r = 0; r < 5; ++r) {
    cur = chaos::pool_refresh(cur, p);
    CHECK(chaos::mean_check(cur).ok());
  }
}

TEST_CASE("joint pool marginals coincide and average to one") {
  const auto p = ChaosParams::make(2, 0.5);
  const auto pool = chaos::build_pool(PoolKind::joint, p, 100000, 3);
  REQUIRE(pool.minus.size() == pool.samples.size());
  CHECK(stats::ks_statistic(pool.samples, pool.minus) < stats::ks_critical(pool.size(), pool.size(), 0.01));
  CHECK(chaos::mean_check(pool).ok());
  for (double m : pool.minus) REQUIRE(m > 0.0);
}

TEST_CASE("standard pool equals the balanced pool times an independent lognormal factor") {
  for (int d : {2, 3}) {
    const auto p = ChaosParams::make(d, 0.5);
    const auto bal = chaos::build_pool(PoolKind::balanced, p, 100000, 11);
    const auto std_pool = chaos::build_pool(PoolKind::standard, p, 100000, 12);
    const auto dec = chaos::decomposed_standard_sample(bal, p, 100000, 13);
    CHECK(stats::ks_statistic(dec, std_pool.samples) < stats::ks_critical(dec.size(), std_pool.size(), 0.01));
  }
}

TEST_CASE("pool law agrees with the finite-n chaos in two moments") {
  const auto p = ChaosParams::make(2, 0.5);
  const auto pool = chaos::build_pool(PoolKind::balanced, p, 100000, 21);
  const tree::TreeShape t(2, 10);
  std::vector<double> fin;
  for (std::uint64_t r = 0; r < 20000; ++r) fin.push_back(chaos::partial_mass(field::sample_balanced_field(t, 10, r), 0.5));
  const auto a = stats::mean_var(pool.samples), b = stats::mean_var(fin);
  CHECK(std::abs(a.mean - b.mean) <= 4.0 * std::hypot(a.std_error(), b.std_error()));
  // Var M_n = Var M (1 - (Var of the d^-n tail factor)); at n = 10 the gap is far below the error bar.
  std::vector<double> sq_a, sq_b;
  for (double x : pool.samples) sq_a.push_back((x - a.mean) * (x - a.mean));
  for (double x : fin) sq_b.push_back((x - b.mean) * (x - b.mean));
  const auto va = stats::mean_var(sq_a), vb = stats::mean_var(sq_b);
  CHECK(std::abs(va.mean - vb.mean) <= 4.0 * std::hypot(va.std_error(), vb.std_error()));
}

TEST_CASE("negative moments") {
  const auto p = ChaosParams::make(2, 0.5);
  const auto a = chaos::build_pool(PoolKind::balanced, p, 200000, 31);
  const auto b = chaos::build_pool(PoolKind::balanced, p, 200000, 32);
  const auto m1a = chaos::negative_moment(a, 1.0), m1b = chaos::negative_moment(b, 1.0);
  CHECK(std::isfinite(m1a.value));
  CHECK(std::abs(m1a.value / m1b.value - 1.0) <= 0.02);
  const auto m2 = chaos::negative_moment(a, 2.0);
  CHECK(m2.value >= m1a.value * m1a.value);
  CHECK(chaos::negative_moment(a, 1e-6).value == doctest::Approx(1.0).epsilon(1e-4));
  CHECK_THROWS_AS(chaos::negative_moment(a, 0.0), ContractViolation);
  CHECK_THROWS_AS(chaos::negative_moment(chaos::initial_pool(PoolKind::balanced, p, 10, 1), 1.0), ContractViolation);
}

TEST_CASE("small-ball probabilities") {
  const auto p = ChaosParams::make(2, 1.0);
  const auto pool = chaos::build_pool(PoolKind::balanced, p, 100000, 41);
  CHECK(chaos::small_ball_prob(pool, 1e300).prob == 1.0);
  double prev = 0.0;
  for (double s = 0.05; s <= 3.0; s *= 1.2) {
    const auto b = chaos::small_ball_prob(pool, s);
    CHECK(b.prob >= prev);
    CHECK(b.ci.lo <= b.prob);
    CHECK(b.ci.hi >= b.prob);
    prev = b.prob;
  }
  const std::vector<double> s{0.4, 0.3, 0.2};
  const auto fit = chaos::small_ball_fit(pool, s, 100);
  for (const auto& pt : fit.points) CHECK(pt.count >= 100);
  CHECK_THROWS_AS(chaos::small_ball_prob(pool, 0.0), ContractViolation);
}
