#pragma once

// Chaos masses of the balanced and standard walks and population-dynamics
// pools approximating their limit laws.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "brwlab/field.hpp"
#include "brwlab/stats.hpp"

namespace brwlab::chaos {

struct ChaosParams {
  int d = 2;
  double gamma = 0.5;
  double kappa = 0.0;  // 2 ln d / gamma^2
  double alpha = 0.0;  // kappa / (kappa + 1)
  double p = 0.0;      // d e^{gamma^2/2}; p^alpha = d

  // Validates gamma in (0, sqrt(2 ln d)) and the identity p^alpha = d.
  static ChaosParams make(int d, double gamma);
  // ln p / gamma: one anchor step in x units.
  double shift() const;
};

enum class PoolKind { balanced, standard, joint };

std::string_view to_string(PoolKind k);
PoolKind parse_pool_kind(std::string_view s);

struct ChaosPool {
  PoolKind kind = PoolKind::balanced;
  int d = 2;
  double gamma = 0.5;
  std::uint64_t seed = 0;
  int refresh_count = 0;
  std::vector<double> samples;  // M (or M+ for the joint kind)
  std::vector<double> minus;    // M- for the joint kind, else empty

  std::size_t size() const { return samples.size(); }
  std::uint64_t fingerprint() const;
};

// d^{-n} sum_v exp(gamma value_v - gamma^2 n / 2).
double partial_mass(const field::GenerationField& f, double gamma);

ChaosPool initial_pool(PoolKind kind, const ChaosParams& params, std::size_t n, std::uint64_t seed);

// One sweep of the one-generation recursion with resampling. Sample j of sweep
// r draws from the stream keyed (seed, r, j).
ChaosPool pool_refresh(const ChaosPool& pool, const ChaosParams& params);

// Divides the samples (each coordinate for the joint kind) by their mean. The
// recursion leaves the overall scale neutral, so resampling lets the pool mean
// drift like a random walk; pinning it to 1 between sweeps removes that drift.
ChaosPool normalize_mean(ChaosPool pool);

struct BuildReport {
  int sweeps = 0;
  bool converged = false;
  double ks_last = 0.0;
  double ks_threshold = 0.0;
};

// Burn-in from the all-ones pool, then refresh until the KS distance between
// sweeps r and r+5 falls below 2/sqrt(N) (or max_extra more sweeps have run).
// Those sweeps are mean-normalised; the returned pool is one further plain
// sweep.
ChaosPool build_pool(PoolKind kind, const ChaosParams& params, std::size_t n, std::uint64_t seed,
                     int burn_in = 50, int max_extra = 60, BuildReport* report = nullptr);

struct MeanCheck {
  double mean = 0.0;
  double sd = 0.0;
  double tolerance = 0.0;  // 4 sd / sqrt(N)
  bool ok() const;
};

// Martingale-mean check of M (or (M+ + M-)/2 for the joint kind).
MeanCheck mean_check(const ChaosPool& pool);

// Mean of M^{-theta} with a jackknife error bar.
stats::Estimate negative_moment(const ChaosPool& pool, double theta, int min_refresh = 50);

struct SmallBall {
  double s = 0.0;
  std::size_t count = 0;
  double prob = 0.0;
  stats::Interval ci;
};

SmallBall small_ball_prob(const ChaosPool& pool, double s);

struct SmallBallFit {
  std::vector<SmallBall> points;  // only the resolved ones
  double slope = 0.0;             // of log(-log P) against log(1/s)
  bool resolved = false;          // at least two points with count >= min_count
};

SmallBallFit small_ball_fit(const ChaosPool& pool, std::span<const double> s_values,
                            std::size_t min_count = 100);

// Balanced samples multiplied by independent e^{gamma X - gamma^2/(2(d-1))},
// X ~ N(0, 1/(d-1)); compared against the standard pool.
std::vector<double> decomposed_standard_sample(const ChaosPool& balanced, const ChaosParams& params,
                                               std::size_t n, std::uint64_t seed);

void save_pool(const ChaosPool& pool, std::ostream& os);
ChaosPool load_pool(std::istream& is);

}  // namespace brwlab::chaos
