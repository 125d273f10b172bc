#include "doctest.h"

#include <cmath>
#include <numeric>
#include <sstream>

#include "brwlab/field.hpp"
#include "brwlab/stats.hpp"

using namespace brwlab;
using field::FieldKind;
using tree::TreeShape;

TEST_CASE("cov_oracle closed form") {
  CHECK(field::cov_oracle(FieldKind::standard, 5, 4) == 3.0);
  CHECK(field::cov_oracle(FieldKind::balanced, 5, 4) == 2.0);
  CHECK(field::cov_oracle(FieldKind::balanced, 5, 0) == 5.0);
  CHECK(field::cov_oracle(FieldKind::balanced, 8, 6) == 4.0);
  CHECK(field::cov_oracle(FieldKind::balanced, 5, 4, 3) == 2.5);
  CHECK(field::cov_oracle(FieldKind::balanced, 5, 0, 3) == 5.0);
  CHECK(field::cov_oracle(FieldKind::standard, 5, 4, 3) == 3.0);
  CHECK_THROWS_AS(field::cov_oracle(FieldKind::balanced, 5, 4, 1), std::out_of_range);
  CHECK_THROWS_AS(field::cov_oracle(FieldKind::balanced, 5, 3), ContractViolation);
  CHECK_THROWS_AS(field::cov_oracle(FieldKind::standard, 2, 6), std::out_of_range);
}

TEST_CASE("root and first generation") {
  const TreeShape t(2, 6);
  for (auto kind : {FieldKind::standard, FieldKind::balanced}) {
    const auto f = field::sample_field(kind, t, 0, 3);
    REQUIRE(f.values.size() == 1);
    CHECK(f.values[0] == 0.0);
  }
  const auto f1 = field::extend_field(field::root_field(t, FieldKind::balanced, 9));
  REQUIRE(f1.values.size() == 2);
  CHECK(f1.values[0] == -f1.values[1]);
  CHECK(f1.values[0] != 0.0);
  CHECK_THROWS_AS(field::sample_field(FieldKind::balanced, t, 7, 1), std::out_of_range);
}

TEST_CASE("balanced blocks sum to zero and centre each generation") {
  for (int d = 2; d <= 7; ++d) {
    const int n = d <= 3 ? 8 : 4;
    const TreeShape t(d, n);
    auto f = field::root_field(t, FieldKind::balanced, static_cast<std::uint64_t>(d));
    while (f.generation < n) {
      f = field::extend_field(f);
      CHECK(field::max_block_sum(f) <= 1e-12);
      const double total = std::accumulate(f.values.begin(), f.values.end(), 0.0);
      CHECK(std::abs(total) <= 1e-9 * static_cast<double>(f.values.size()));
    }
  }
}

TEST_CASE("restriction to parents reproduces the parent generation") {
  for (auto kind : {FieldKind::standard, FieldKind::balanced})
    for (int d : {2, 3, 4}) {
      const TreeShape t(d, 5);
      auto f = field::root_field(t, kind, 11);
      while (f.generation < 5) {
        const auto child = field::extend_field(f);
        const auto back = field::restrict_to_parents(child);
        REQUIRE(back.size() == f.values.size());
        for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == doctest::Approx(f.values[i]).epsilon(1e-13));
        f = child;
      }
    }
}

TEST_CASE("fields are reproducible from their seed") {
  const TreeShape t(3, 6);
  auto grown = field::root_field(t, FieldKind::balanced, 77);
  while (grown.generation < 6) grown = field::extend_field(grown);
  const auto direct = field::sample_balanced_field(t, 6, 77);
  CHECK(grown.values == direct.values);
  CHECK(grown.increments == direct.increments);
  CHECK(field::sample_balanced_field(t, 6, 78).values != direct.values);
}

TEST_CASE("field dump round trip") {
  const TreeShape t(2, 5);
  const auto f = field::sample_standard_field(t, 5, 5);
  std::stringstream ss;
  field::save_field(f, ss);
  const auto g = field::load_field(ss);
  CHECK(g.values == f.values);
  CHECK(g.generation == 5);
  CHECK(g.kind == FieldKind::standard);
  CHECK(g.seed == 5);
  CHECK(g.shape.d() == 2);
  std::stringstream junk("not a field");
  CHECK_THROWS(field::load_field(junk));
}

TEST_CASE("standard increments are i.i.d. standard normal") {
  const TreeShape t(2, 1);
  std::vector<double> a, b;
  for (std::uint64_t r = 0; r < 50000; ++r) {
    const auto f = field::sample_standard_field(t, 1, r);
    a.push_back(f.values[0]);
    b.push_back(f.values[1]);
  }
  std::vector<double> both(a);
  both.insert(both.end(), b.begin(), b.end());
  const auto mv = stats::mean_var(both);
  const double n = static_cast<double>(both.size());
  CHECK(std::abs(mv.mean) <= 4.0 / std::sqrt(n));
  CHECK(std::abs(mv.variance - 1.0) <= 4.0 * std::sqrt(2.0 / n));
  std::vector<double> prod(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) prod[i] = a[i] * b[i];
  const auto pc = stats::mean_var(prod);
  CHECK(std::abs(pc.mean) <= 4.0 * pc.std_error());
}

TEST_CASE("balanced block moments") {
  for (int d : {2, 3, 5}) {
    rng::Stream rs(static_cast<std::uint64_t>(d));
    std::vector<double> y(static_cast<std::size_t>(d));
    std::vector<double> v0, c01;
    for (int r = 0; r < 40000; ++r) {
      field::balanced_block(rs, y);
      v0.push_back(y[0] * y[0]);
      c01.push_back(y[0] * y[1]);
    }
    const auto mv = stats::mean_var(v0), mc = stats::mean_var(c01);
    CHECK(std::abs(mv.mean - 1.0) <= 4.0 * mv.std_error());
    CHECK(std::abs(mc.mean + 1.0 / (d - 1)) <= 4.0 * mc.std_error() + 1e-12);
  }
}

TEST_CASE("covariance sweep at n = 5 matches the closed form to 0.05") {
  for (auto kind : {FieldKind::standard, FieldKind::balanced}) {
    const auto cells = field::covariance_sweep(kind, 2, 5, 100000, 2024);
    for (const auto& c : cells) {
      CHECK(std::abs(c.z()) <= 4.0);
      if (c.n == 5 && (c.dist == 0 || c.dist == 4)) CHECK(std::abs(c.estimate - c.oracle) <= 0.05);
    }
  }
}

TEST_CASE("covariance sweep for d = 3") {
  for (auto kind : {FieldKind::standard, FieldKind::balanced}) {
    const auto cells = field::covariance_sweep(kind, 3, 4, 50000, 2025);
    for (const auto& c : cells) {
      INFO("n " << c.n << " dist " << c.dist << " estimate " << c.estimate << " oracle " << c.oracle);
      CHECK(c.oracle == field::cov_oracle(kind, c.n, c.dist, 3));
      CHECK(std::abs(c.z()) <= 4.0);
    }
  }
}

TEST_CASE("re-rooted subfields have the law of a fresh field") {
  const int d = 2, top = 2, n = 5;
  const TreeShape t(d, n);
  const std::uint64_t w = 1;  // vertex (2, 1)
  const int sub = n - top;
  const std::size_t width = tree::ipow(d, sub);
  std::vector<std::vector<double>> prods(static_cast<std::size_t>(sub + 1));
  for (std::uint64_t r = 0; r < 40000; ++r) {
    auto f = field::sample_balanced_field(t, top, r);
    const double aw = f.values[w];
    while (f.generation < n) f = field::extend_field(f);
    const double* leaf = f.values.data() + w * width;
    for (int lv = 0; lv <= sub; ++lv) {
      const std::size_t j = lv == 0 ? 0 : tree::partner_at_depth(TreeShape(d, sub), sub, lv);
      prods[static_cast<std::size_t>(lv)].push_back((leaf[0] - aw) * (leaf[j] - aw));
    }
  }
  for (int lv = 0; lv <= sub; ++lv) {
    const auto mv = stats::mean_var(prods[static_cast<std::size_t>(lv)]);
    const double oracle = field::cov_oracle(FieldKind::balanced, sub, 2 * lv);
    CHECK(std::abs(mv.mean - oracle) <= 4.0 * mv.std_error());
  }
}
