// Acceptance suite: one PASS/FAIL line per criterion, tolerances fixed below.
// Pools and level tables are cached under the output directory (first
// argument, default "acceptance_out"), so reruns skip the expensive builds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "brwlab/chaos.hpp"
#include "brwlab/config.hpp"
#include "brwlab/experiments.hpp"
#include "brwlab/field.hpp"
#include "brwlab/laplace.hpp"
#include "brwlab/rng.hpp"
#include "brwlab/sinh.hpp"
#include "brwlab/stats.hpp"
#include "brwlab/tilted.hpp"

using namespace brwlab;
namespace fs = std::filesystem;

namespace {

// --- tolerances ------------------------------------------------------------

constexpr double kCovarianceZ = 4.0;
constexpr std::size_t kCovarianceReplicas = 100000;
constexpr int kCovarianceMaxN = 6;
constexpr double kZeroSum = 1e-12;
constexpr std::size_t kPoolSize = 1000000;
constexpr double kRecursionZ = 3.0;
constexpr std::size_t kRecursionSamples = 1000000;
constexpr double kAnchor = 1e-6;
constexpr int kAnchorMaxLevel = 20;
constexpr int kAnchorLambdas = 64;
constexpr double kAlpha = 0.05;
constexpr double kConvexity = 1e-6;
constexpr double kVariational = 5e-3;
constexpr int kVariationalLambdas = 16;
constexpr double kCurvatureFactor = 10.0;
constexpr double kSinhSymmetry = 1e-9;
constexpr double kSinhPresymZ = 4.0;
constexpr double kSinhConvexity = 1e-9;
constexpr double kPriorZ = 4.0;
constexpr double kKsLevel = 0.01;
constexpr double kAudit = 1e-8;
constexpr double kCollapseRatio = 0.5;
constexpr double kEventProbability = 0.8;
constexpr double kSmallBallRelative = 0.25;
constexpr std::size_t kSmallBallMinCount = 100;

// --- reporting -------------------------------------------------------------

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  bool warn_only;
  std::function<Outcome()> check;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// --- shared inputs ---------------------------------------------------------

struct Inputs {
  fs::path out;
  std::ofstream log;

  config::ExperimentConfig cfg(int d, double gamma) const {
    config::ExperimentConfig c;
    c.d = d;
    c.gamma = gamma;
    c.pool_size = kPoolSize;
    c.output_dir = (out / ("d" + std::to_string(d) + "_g" + fmt(gamma))).string();
    c.source = "acceptance d=" + std::to_string(d) + " gamma=" + fmt(gamma);
    return c;
  }

  std::map<std::pair<int, double>, experiments::LevelArtifacts> levels_;
  const experiments::LevelArtifacts& levels(int d, double gamma) {
    const auto key = std::make_pair(d, gamma);
    auto it = levels_.find(key);
    if (it == levels_.end()) it = levels_.emplace(key, experiments::obtain_levels(cfg(d, gamma), log)).first;
    return it->second;
  }

  chaos::ChaosPool pool(int d, double gamma, chaos::PoolKind kind) {
    return experiments::obtain_pool(cfg(d, gamma), kind, log);
  }

  // lambda* on the top level of d = 2, gamma = 0.5, and the tables re-anchored there
  std::optional<laplace::LambdaStar> star_;
  const laplace::LambdaStar& star() {
    if (!star_) star_ = laplace::find_lambda_star(levels(2, 0.5).run.tables.back());
    return *star_;
  }
  laplace::LambdaTable at_star(int level) {
    return laplace::reanchor(levels(2, 0.5).run.tables.at(static_cast<std::size_t>(level)), star().lambda);
  }

  std::optional<std::vector<tilted::CollapseRow>> collapse_;
};

tilted::ChainBudget default_budget(std::uint64_t seed) {
  const config::ExperimentConfig c;
  tilted::ChainBudget b;
  b.chains = c.chains;
  b.pilot_sweeps = c.pilot_sweeps;
  b.burn_sweeps = c.burn_sweeps;
  b.sweeps = c.sweeps;
  b.target_acceptance = c.target_acceptance;
  b.seed = seed;
  return b;
}

// --- criteria --------------------------------------------------------------

Outcome covariance_oracles() {
  double worst = 0.0;
  std::size_t cells = 0;
  for (int d : {2, 3})
    for (auto kind : {field::FieldKind::standard, field::FieldKind::balanced})
      for (const auto& c : field::covariance_sweep(kind, d, kCovarianceMaxN, kCovarianceReplicas, 1000 + d)) {
        worst = std::max(worst, std::abs(c.z()));
        ++cells;
      }
  return {worst <= kCovarianceZ, fmt(cells, 6) + " cells, worst |z| = " + fmt(worst)};
}

Outcome zero_sum_and_means(Inputs& in) {
  double worst_sum = 0.0;
  for (int d = 2; d <= 7; ++d) {
    const int n = d == 2 ? 12 : 5;
    const tree::TreeShape shape(d, n);
    for (std::uint64_t s = 0; s < 20; ++s)
      worst_sum = std::max(worst_sum, field::max_block_sum(field::sample_balanced_field(shape, n, 500 + s)));
  }
  bool ok = worst_sum <= kZeroSum;
  std::string detail = "max |block sum| = " + fmt(worst_sum, 3);
  for (auto kind : {chaos::PoolKind::balanced, chaos::PoolKind::standard, chaos::PoolKind::joint}) {
    const auto mc = chaos::mean_check(in.pool(2, 0.5, kind));
    ok = ok && mc.ok();
    detail += "; " + std::string(chaos::to_string(kind)) + " mean-1 = " + fmt(mc.mean - 1.0, 3) + " (tol " +
              fmt(mc.tolerance, 3) + ")";
  }
  return {ok, detail};
}

Outcome recursion_vs_mc(Inputs& in) {
  bool ok = true;
  std::string detail;
  for (double gamma : {0.5, 1.0}) {
    const auto& art = in.levels(2, gamma);
    const auto pool = in.pool(2, gamma, chaos::PoolKind::balanced);
    const laplace::BlockIntegrator integ(art.params);
    const auto g1 = laplace::recursion_step(art.base, integ);
    for (double lam : {1.0, 2.0}) {
      const auto mc = laplace::two_level_laplace(pool, art.params, lam * art.params.p, kRecursionSamples,
                                                 rng::derive(77, static_cast<std::uint64_t>(gamma * 10), static_cast<std::uint64_t>(lam)));
      const double z = (g1(std::log(lam) / art.params.gamma) - mc.value) / mc.std_error;
      ok = ok && std::abs(z) <= kRecursionZ;
      detail += (detail.empty() ? "" : ", ") + std::string("z(") + fmt(gamma) + "," + fmt(lam) + ") = " + fmt(z, 3);
    }
  }
  return {ok, detail};
}

Outcome anchor_identity(Inputs& in) {
  bool ok = true;
  std::string detail;
  for (auto [d, gamma] : {std::pair{2, 0.5}, std::pair{2, 1.0}, std::pair{4, 1.0}}) {
    const auto& tables = in.levels(d, gamma).run.tables;
    const auto lambdas = laplace::lambda_samples(tables.front(), kAnchorLambdas);
    double worst = 0.0;
    const auto top = std::min<std::size_t>(kAnchorMaxLevel, tables.size() - 2);
    for (std::size_t k = 0; k <= top; ++k)
      worst = std::max(worst, laplace::anchor_identity_error(tables[k], tables[k + 1], lambdas));
    ok = ok && worst <= kAnchor && top == kAnchorMaxLevel;
    detail += (detail.empty() ? "" : ", ") + std::string("d=") + std::to_string(d) + " gamma=" + fmt(gamma) +
              ": " + fmt(worst, 3);
  }
  return {ok, detail};
}

Outcome exponent_alpha(Inputs& in) {
  bool ok = true;
  std::string detail;
  // targets quoted to four digits
  const std::map<std::pair<int, double>, double> targets = {{{2, 0.5}, 0.8471}, {{2, 1.0}, 0.5809}, {{4, 1.0}, 0.7348}};
  for (const auto& [key, target] : targets) {
    const auto& art = in.levels(key.first, key.second);
    const double fit = laplace::alpha_fit(art.run.tables, 4);
    ok = ok && std::abs(art.params.alpha - target) <= 5e-4 && std::abs(fit - target) <= kAlpha;
    detail += (detail.empty() ? "" : ", ") + std::string("d=") + std::to_string(key.first) + " gamma=" +
              fmt(key.second) + ": " + fmt(fit) + " vs " + fmt(target);
  }
  return {ok, detail};
}

Outcome structure_of_h(Inputs& in) {
  const auto& tables = in.levels(2, 0.5).run.tables;
  const auto lambdas = laplace::lambda_samples(tables.front(), kAnchorLambdas);
  bool sandwich = true;
  for (const auto& t : tables) {
    const auto s = laplace::check_h_sandwich(t, lambdas);
    sandwich = sandwich && s.monotone && s.sandwich;
  }
  const auto& top = tables.back();
  double conv = 0.0, var = 0.0;
  for (double l : laplace::lambda_samples(top, kVariationalLambdas)) {
    conv = std::min(conv, laplace::min_second_difference(top, l));
    const auto v = laplace::variational_check(top, l);
    var = std::max(var, std::abs(v.residual) / v.h);
  }
  const auto& star = in.star();
  const bool ok = sandwich && conv >= -kConvexity && var <= kVariational &&
                  star.curvature >= kCurvatureFactor * star.noise_floor;
  return {ok, std::string("monotone+sandwich ") + (sandwich ? "ok" : "violated") + ", min second difference " +
                  fmt(conv, 3) + ", variational " + fmt(var, 3) + ", lambda* = " + fmt(star.lambda) + " curvature " +
                  fmt(star.curvature, 3) + " vs floor " + fmt(star.noise_floor, 3) + (star.at_edge ? " (edge)" : "")};
}

Outcome sinh_suite(Inputs& in) {
  const auto art = experiments::obtain_sinh(in.cfg(2, 0.5), in.log);
  const auto& tables = art.run.tables;
  double sym = 0.0, conv = 0.0;
  bool min0 = true;
  for (const auto& t : tables) {
    const auto c = sinh::check_sinh(t);
    sym = std::max(sym, c.symmetry);
    conv = std::min(conv, c.convexity);
    min0 = min0 && c.min_at_zero;
  }
  const double presym = tables.front().presym_z;
  const double fit = sinh::sinh_alpha_fit(tables);
  const double balanced = laplace::alpha_fit(in.levels(2, 0.5).run.tables, 4);
  const bool ok = sym <= kSinhSymmetry && presym <= kSinhPresymZ && conv >= -kSinhConvexity && min0 &&
                  std::abs(fit - balanced) <= kAlpha;
  return {ok, "symmetry " + fmt(sym, 3) + ", pre-symmetrisation z " + fmt(presym, 3) + ", convexity " +
                  fmt(conv, 3) + ", F(x) >= F(0) " + (min0 ? "ok" : "violated") + ", alpha " + fmt(fit) +
                  " vs balanced " + fmt(balanced)};
}

Outcome sampler_correctness(Inputs& in) {
  // prior recovery at m = 6
  const int m = 6;
  std::vector<tilted::Probe> probes;
  for (int h = 0; h <= m; ++h) {
    const std::size_t w = h == 0 ? 0 : tree::partner_at_depth(tree::TreeShape(2, m), m, h);
    probes.push_back([w](const tilted::TiltedChain& c) { return c.leaves()[0] * c.leaves()[w]; });
  }
  tilted::ChainBudget pb;
  pb.chains = 8;
  pb.tune = false;
  pb.beta = std::vector<double>(m, 0.7);
  pb.burn_sweeps = 100;
  pb.sweeps = 20000;
  pb.seed = 801;
  const auto prior = tilted::run_ensemble(2, m, tilted::zero_cost(), pb, probes);
  double worst_z = 0.0;
  for (int h = 0; h <= m; ++h) {
    const auto e = prior.mean(h);
    worst_z = std::max(worst_z, std::abs(e.value - field::cov_oracle(field::FieldKind::balanced, m, 2 * h)) / e.std_error);
  }

  // tower property at k = 8: generation 6 from truncation 8 against truncation 6
  const int k = 8;
  double worst_audit = 0.0;
  auto draws = [&](int trunc, std::uint64_t seed) {
    auto b = default_budget(seed);
    b.sweeps = 6000;
    const auto res = tilted::run_ensemble(2, trunc, tilted::table_cost(in.at_star(k - trunc)), b,
                                          {[](const tilted::TiltedChain& c) { return c.values(6)[0]; }});
    worst_audit = std::max(worst_audit, res.worst_audit);
    std::vector<double> out;
    for (const auto& c : res.chains)
      for (std::size_t s = 0; s < c.probes[0].size(); s += 4) out.push_back(c.probes[0][s]);
    return out;
  };
  const auto a = draws(8, 802), b = draws(6, 803);
  const double ks = stats::ks_statistic(a, b);
  const double crit = stats::ks_critical(a.size(), b.size(), kKsLevel);
  const bool ok = worst_z <= kPriorZ && ks <= crit && worst_audit <= kAudit;
  return {ok, "prior covariances worst |z| " + fmt(worst_z, 3) + ", tower KS " + fmt(ks, 3) + " vs " + fmt(crit, 3) +
                  ", worst audit " + fmt(worst_audit, 3)};
}

Outcome l1_collapse(Inputs& in) {
  const int k = 12;
  std::map<int, laplace::LambdaTable> tables;
  for (int a : {2, 4, 6}) tables.emplace(a, in.at_star(a));
  in.collapse_ = tilted::l1_collapse_experiment(tables, in.star().lambda, k, {2, 4, 6}, default_budget(901));
  const auto& rows = *in.collapse_;
  bool decreasing = true;
  double rhat = 0.0;
  std::string detail = "lambda* = " + fmt(in.star().lambda);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0) decreasing = decreasing && rows[i].mean_l1 < rows[i - 1].mean_l1;
    rhat = std::max(rhat, rows[i].rhat);
    detail += ", a=" + std::to_string(rows[i].a) + ": " + fmt(rows[i].mean_l1) + " +- " + fmt(rows[i].std_error, 2) +
              " (untilted " + fmt(rows[i].untilted) + ")";
  }
  const double ratio = rows.back().mean_l1 / rows.back().untilted;
  detail += ", ratio at a=6 " + fmt(ratio, 3) + ", max R-hat " + fmt(rhat, 4);
  return {decreasing && ratio < kCollapseRatio, detail};
}

Outcome correlation_decay(Inputs& in) {
  const int k = 12;
  if (!in.collapse_) return {false, "needs the L1 collapse run"};
  std::map<int, double> eps;
  for (const auto& r : *in.collapse_) eps[r.a] = r.q90;
  const auto rows = tilted::correlation_decay_experiment(in.at_star(0), in.star().lambda, k, eps, default_budget(1001));
  bool decreasing = true, baseline = true;
  std::string detail;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0) decreasing = decreasing && std::abs(rows[i].restricted) < std::abs(rows[i - 1].restricted);
    baseline = baseline && rows[i].untilted_cov == static_cast<double>(k - (rows[i].a + 1) - 1);
    detail += (i ? ", " : "") + std::string("a=") + std::to_string(rows[i].a) + ": " + fmt(rows[i].restricted, 3) +
              " +- " + fmt(rows[i].std_error, 2) + " P(event) " + fmt(rows[i].p_event, 3);
  }
  baseline = baseline && field::cov_oracle(field::FieldKind::balanced, 8, 6) == 4.0;
  const bool ok = decreasing && baseline && rows.front().p_event >= kEventProbability;
  return {ok, detail + (baseline ? "" : ", untilted baseline mismatch")};
}

Outcome small_ball(Inputs& in) {
  const auto pool = in.pool(2, 1.0, chaos::PoolKind::balanced);
  const auto P = chaos::ChaosParams::make(2, 1.0);
  std::vector<double> s;
  for (int i = 0; i < 24; ++i) s.push_back(0.02 * std::pow(25.0, i / 23.0));
  const auto fit = chaos::small_ball_fit(pool, s, kSmallBallMinCount);
  const double rel = fit.slope / P.kappa - 1.0;
  return {fit.resolved && std::abs(rel) <= kSmallBallRelative,
          "slope " + fmt(fit.slope) + " vs kappa " + fmt(P.kappa) + " over " + std::to_string(fit.points.size()) +
              " resolved points (relative " + fmt(rel, 3) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  Inputs in;
  in.out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(in.out);
  in.log.open(in.out / "acceptance.log", std::ios::app);

  const std::vector<Criterion> criteria = {
      {1, "covariance oracles", false, [] { return covariance_oracles(); }},
      {2, "zero-sum and martingale means", false, [&] { return zero_sum_and_means(in); }},
      {3, "recursion vs two-level Monte Carlo", false, [&] { return recursion_vs_mc(in); }},
      {4, "anchor identity", false, [&] { return anchor_identity(in); }},
      {5, "exponent alpha", false, [&] { return exponent_alpha(in); }},
      {6, "structure of h and lambda*", false, [&] { return structure_of_h(in); }},
      {7, "sinh suite", false, [&] { return sinh_suite(in); }},
      {8, "tilted sampler correctness", false, [&] { return sampler_correctness(in); }},
      {9, "L1 collapse", false, [&] { return l1_collapse(in); }},
      {10, "restricted correlation decay", false, [&] { return correlation_decay(in); }},
      {11, "small-ball exponent", true, [&] { return small_ball(in); }},
  };

  int failed = 0, warned = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = o.passed ? "PASS" : (c.warn_only ? "WARN" : "FAIL");
    if (!o.passed) (c.warn_only ? warned : failed) += 1;
    std::cout << tag << "  " << std::setw(2) << c.id << "  " << c.name << ": " << o.detail << "  [" << fmt(secs, 3)
              << " s]" << std::endl;
  }
  std::cout << (failed ? "FAILED" : "PASSED") << ": " << criteria.size() - static_cast<std::size_t>(failed + warned)
            << " passed, " << failed << " failed, " << warned << " warned" << std::endl;
  return failed ? 1 : 0;
}
