#include "doctest.h"

#include <cmath>
#include <sstream>

#include "brwlab/laplace.hpp"

using namespace brwlab;
using chaos::ChaosParams;
using chaos::PoolKind;
using laplace::LambdaTable;

namespace {

struct Levels {
  ChaosParams params;
  chaos::ChaosPool pool;
  laplace::GridSpec grid;
  LambdaTable base;
  laplace::SolveReport solve;
  laplace::LevelRun run;
};

const Levels& levels() {
  static const Levels L = [] {
    Levels l;
    l.params = ChaosParams::make(2, 0.5);
    l.pool = chaos::build_pool(PoolKind::balanced, l.params, 100000, 7);
    l.grid = laplace::GridSpec::make(l.params);
    const double adm = laplace::largest_admissible_x(l.pool, 1.0, l.grid);
    l.base = laplace::base_table(l.pool, l.params, 1.0, l.grid.truncated(adm));
    const laplace::BlockIntegrator integ(l.params);
    auto g0 = laplace::solve_self_consistent(l.base, l.grid, integ, 1e-11, 3000, &l.solve);
    l.run = laplace::run_levels(std::move(g0), integ, 40, 1e-4, 21);
    return l;
  }();
  return L;
}

}  // namespace

TEST_CASE("grid is aligned with the anchor step") {
  for (double g : {0.5, 1.0}) {
    const auto p = ChaosParams::make(2, g);
    const auto grid = laplace::GridSpec::make(p);
    CHECK(grid.steps * grid.dx == doctest::Approx(p.shift()).epsilon(1e-14));
    CHECK(grid.x_max() >= 12.0 / g);
    CHECK(grid.dx == doctest::Approx(0.02 / g).epsilon(0.05));
    const auto cut = grid.truncated(3.0);
    CHECK(cut.x_max() <= 3.0);
    CHECK(cut.x_max() > 3.0 - cut.dx);
  }
}

TEST_CASE("Monte-Carlo level 0") {
  const auto& L = levels();
  CHECK(laplace::pool_laplace(L.pool, 0.0).value == 0.0);
  const auto& b = L.base;
  for (long j = b.grid.j_min; j <= b.grid.j_max; ++j) {
    CHECK(b.at(j) <= b.t_at(b.grid.x(j)) * (1 + 1e-12));
    CHECK(b.at(j) > 0.0);
  }
  CHECK(laplace::check_table(b).ok());
  CHECK_THROWS_AS(laplace::base_table(L.pool, L.params, 1.0, L.grid), laplace::InadmissibleRange);
  try {
    laplace::base_table(L.pool, L.params, 1.0, L.grid);
  } catch (const laplace::InadmissibleRange& e) {
    CHECK(e.largest_admissible_x == doctest::Approx(b.grid.x_max()));
  }
}

TEST_CASE("two independent pools agree at x = 0") {
  const auto p = ChaosParams::make(2, 0.5);
  const auto a = chaos::build_pool(PoolKind::balanced, p, 100000, 101);
  const auto b = chaos::build_pool(PoolKind::balanced, p, 100000, 102);
  const auto ea = laplace::pool_laplace(a, 1.0), eb = laplace::pool_laplace(b, 1.0);
  CHECK(std::abs(ea.value - eb.value) <= 3.0 * std::hypot(ea.std_error, eb.std_error));
}

TEST_CASE("one recursion step against two-level Monte Carlo") {
  const auto& L = levels();
  const laplace::BlockIntegrator integ(L.params);
  const auto g1 = laplace::recursion_step(L.base, integ);
  CHECK(g1.level == 1);
  for (double lam : {1.0, 2.0}) {
    const auto mc = laplace::two_level_laplace(L.pool, L.params, lam * L.params.p, 200000, 5);
    CHECK(std::abs(g1(std::log(lam) / L.params.gamma) - mc.value) <= 3.0 * mc.std_error);
  }
}

TEST_CASE("vanishing increments multiply G by d") {
  // As gamma -> 0 the block offsets stop moving t, so G_1 -> d G_0.
  double prev = 1e9;
  for (double g : {0.08, 0.04, 0.02}) {
    const auto p = ChaosParams::make(2, g);
    const auto pool = chaos::build_pool(PoolKind::balanced, p, 20000, 3, 20, 10);
    const auto grid = laplace::GridSpec::make(p, 2.0);
    const auto base = laplace::base_table(pool, p, 1.0, grid);
    const auto g1 = laplace::recursion_step(base, laplace::BlockIntegrator(p));
    const double dev = std::abs(g1(0.0) / base(0.0) - 2.0);
    CHECK(dev < prev);
    prev = dev;
  }
  CHECK(prev < 0.01);
}

TEST_CASE("self-consistent level 0 and the level sequence") {
  const auto& L = levels();
  CHECK(L.solve.converged);
  CHECK(L.solve.residual <= 1e-11);
  const auto& t = L.run.tables;
  REQUIRE(t.size() >= 13);
  CHECK(L.run.converged);
  const auto lambdas = laplace::lambda_samples(t.front());
  REQUIRE(lambdas.size() == 64);
  CHECK(lambdas.front() == 1.0);
  CHECK(lambdas.back() == doctest::Approx(L.params.p));
  for (std::size_t k = 0; k < t.size(); ++k) {
    const auto c = laplace::check_table(t[k]);
    CHECK_MESSAGE(c.ok(), "level " << k);
    const auto sw = laplace::check_h_sandwich(t[k], lambdas);
    CHECK(sw.monotone);
    CHECK(sw.sandwich);
    if (k + 1 < t.size()) CHECK(laplace::anchor_identity_error(t[k], t[k + 1], lambdas) <= 1e-6);
  }
  for (std::size_t k = 6; k < L.run.cauchy.size(); ++k) CHECK(L.run.cauchy[k] <= L.run.cauchy[k - 1] * (1 + 1e-9));
  CHECK(std::abs(laplace::alpha_fit(t) - L.params.alpha) <= 0.05);
  CHECK(laplace::bound_ratio(t) < 10.0);
}

TEST_CASE("variational formula, convexity and lambda*") {
  const auto& L = levels();
  const auto& top = L.run.tables.back();
  const auto lambdas = laplace::lambda_samples(top, 16);
  for (double l : lambdas) {
    const auto v = laplace::variational_check(top, l);
    CHECK(v.residual >= -1e-12 * v.h);
    CHECK(std::abs(v.residual) <= 5e-3 * v.h);
    CHECK(laplace::min_second_difference(top, l) >= -1e-6);
  }
  const auto star = laplace::find_lambda_star(top);
  CHECK(star.lambda >= 1.0 - 1e-12);
  CHECK(star.lambda <= L.params.p * (1 + 1e-12));
  CHECK(star.curvature > 0.0);
  CHECK(star.certified == (star.curvature >= 10.0 * star.noise_floor));
  CHECK(star.table_fingerprint == top.fingerprint());
}

TEST_CASE("h_estimate refuses to extrapolate") {
  const auto& top = levels().run.tables.back();
  CHECK_THROWS_AS(laplace::h_estimate(top, 1e300), laplace::ExtrapolationRefused);
  CHECK_THROWS_AS(laplace::h_estimate(top, -1.0), laplace::ExtrapolationRefused);
  CHECK(laplace::h_estimate(top, 1.0) == doctest::Approx(top(0.0) / std::pow(2.0, top.level)));
}

TEST_CASE("re-anchoring shifts the table by whole knots") {
  const auto& L = levels();
  const auto& top = L.run.tables.back();
  const double y = 7 * top.grid.dx;
  const double lam = std::exp(L.params.gamma * y);
  const auto moved = laplace::reanchor(top, lam);
  for (double x = -3.0; x <= 3.0; x += 0.173) CHECK(moved(x) == doctest::Approx(top(x + y)).epsilon(1e-12));
  CHECK(laplace::h_estimate(moved, 1.7) == doctest::Approx(laplace::h_estimate(top, 1.7)).epsilon(1e-12));
  CHECK_THROWS_AS(laplace::reanchor(top, std::exp(L.params.gamma * 0.5 * top.grid.dx)), std::invalid_argument);
  // f_{p lambda} = d f_lambda in the limit
  const auto at_p = laplace::reanchor(top, L.params.p);
  CHECK(laplace::scaling_error(top, at_p) <= 1e-3);
}

TEST_CASE("table files round trip") {
  const auto& t = levels().run.tables[3];
  std::stringstream ss;
  laplace::save_table(t, ss);
  const auto back = laplace::load_table(ss);
  CHECK(back.values == t.values);
  CHECK(back.fingerprint() == t.fingerprint());
  CHECK(back(0.3) == t(0.3));
  std::stringstream junk("nope");
  CHECK_THROWS(laplace::load_table(junk));
}

TEST_CASE("d = 3 uses the tensor rule and still satisfies the anchor identity") {
  const auto p = ChaosParams::make(3, 0.8);
  const auto pool = chaos::build_pool(PoolKind::balanced, p, 50000, 9, 50, 20);
  const auto grid = laplace::GridSpec::make(p);
  const double adm = laplace::largest_admissible_x(pool, 1.0, grid);
  const auto base = laplace::base_table(pool, p, 1.0, grid.truncated(adm));
  const laplace::BlockIntegrator integ(p);
  CHECK(integ.rule() == laplace::BlockRule::tensor_gh);
  const auto g0 = laplace::solve_self_consistent(base, grid, integ);
  const auto run = laplace::run_levels(g0, integ, 8, 1e-4, 8);
  const auto lambdas = laplace::lambda_samples(g0);
  for (std::size_t k = 0; k + 1 < run.tables.size(); ++k) {
    CHECK(laplace::check_table(run.tables[k]).ok());
    CHECK(laplace::anchor_identity_error(run.tables[k], run.tables[k + 1], lambdas) <= 1e-6);
  }
  laplace::QuadratureOptions qmc;
  qmc.rule = laplace::BlockRule::qmc;
  const laplace::BlockIntegrator q(p, qmc);
  CHECK(q.rule() == laplace::BlockRule::qmc);
  laplace::BlockIntegrator::Scratch s1, s2;
  for (double x : {-2.0, 0.0, 2.0}) {
    const double a = integ(run.tables[2], x, s1).value, b = q(run.tables[2], x, s2).value;
    CHECK(std::abs(a - b) <= 1e-4 * a);
  }
}
