#pragma once

// Laplace exponent of the balanced chaos, G_k(x) = Lambda(lambda p^k e^{gamma x}),
// on a uniform x-grid, advanced one generation at a time by
//   G_{k+1}(x) = -log E_Y[ exp(-sum_i G_k(x + Y_i)) ]
// over one balanced increment block Y.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "brwlab/chaos.hpp"
#include "brwlab/simd.hpp"
#include "brwlab/stats.hpp"

namespace brwlab::laplace {

// A quadrature needed values beyond the trusted part of the grid and the two
// extrapolation bounds disagree.
class WidenGridError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// h_k requested outside the table's trusted range.
class ExtrapolationRefused : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Monte-Carlo table requested where the pool cannot resolve it.
class InadmissibleRange : public std::runtime_error {
 public:
  InadmissibleRange(const std::string& what, double largest) : std::runtime_error(what), largest_admissible_x(largest) {}
  double largest_admissible_x;
};

// Knots x_j = j * dx for j in [j_min, j_max]. dx is chosen so that one anchor
// step ln p / gamma is exactly `steps` knots.
struct GridSpec {
  double dx = 0.0;
  int steps = 0;
  long j_min = 0;
  long j_max = 0;

  static GridSpec make(const chaos::ChaosParams& params, double half_width = 12.0, double spacing = 0.02);
  double x(long j) const { return static_cast<double>(j) * dx; }
  double x_min() const { return x(j_min); }
  double x_max() const { return x(j_max); }
  std::size_t size() const { return static_cast<std::size_t>(j_max - j_min + 1); }
  // Same knots, cut at the last knot <= x_max.
  GridSpec truncated(double x_max) const;
};

struct LambdaTable {
  chaos::ChaosParams params;
  double lambda = 1.0;
  int level = 0;
  GridSpec grid;
  long j_lo = 0;               // first stored knot; knots below j_min form the left margin
  long j_trusted = 0;          // last trusted knot
  std::vector<double> values;  // knots j_lo .. grid.j_max
  std::vector<double> logs;    // log values; the interpolant is monotone cubic in log G
  std::vector<double> dslope;
  double left_t = 1.0;         // below x_lo, G = t (1 - left_r (t/left_t)^left_q)
  double left_r = 0.0;
  double left_q = 1.0;
  std::uint64_t pool_fingerprint = 0;

  double tail_slope() const { return params.alpha * params.gamma; }
  double x_lo() const { return grid.x(j_lo); }
  double trusted_x_max() const { return grid.x(j_trusted); }
  // t = lambda p^k e^{gamma x}
  double t_at(double x) const;
  double at(long j) const { return values[static_cast<std::size_t>(j - j_lo)]; }
  // Interpolated inside [x_lo, trusted_x_max]; t (1 - r (t/t0)^q) below
  // (Lambda(t) ~ t, correction matched in value at x_lo);
  // G(x_tr) e^{alpha gamma (x - x_tr)} above.
  double operator()(double x) const;
  void read(std::span<const double> xs, std::span<double> out) const;
  simd::HermiteView view() const;
  void refresh_slopes();
  std::uint64_t fingerprint() const;
};

// h_k(lambda) = G_k(log(lambda / lambda_anchor) / gamma) / d^k.
double h_estimate(const LambdaTable& tbl, double lambda);

// The same function seen from anchor `lambda`: G'(x) = G(x + log(lambda / lambda_0) / gamma).
// The shift must be a whole number of knots (to 1e-6 of a knot).
LambdaTable reanchor(const LambdaTable& tbl, double lambda);

// --- Monte-Carlo level 0 -------------------------------------------------

// A grid point is admissible when at least 10 pool samples have
// exp(-t M) >= 1e-12.
double largest_admissible_x(const chaos::ChaosPool& pool, double lambda, const GridSpec& grid);

// G_0 by direct averaging over the pool on [x_min, x_max]. Throws
// InadmissibleRange (carrying the largest admissible x) when the grid reaches
// too far right.
LambdaTable base_table(const chaos::ChaosPool& pool, const chaos::ChaosParams& params, double lambda,
                       const GridSpec& grid);

// Lambda(t) = -log mean exp(-t M) with a delta-method error bar.
stats::Estimate pool_laplace(const chaos::ChaosPool& pool, double t);

// Lambda(t) for M = (1/d) sum_i e^{gamma Y_i - gamma^2/2} M_i, M_i from the
// pool, by plain Monte Carlo over `samples` draws.
stats::Estimate two_level_laplace(const chaos::ChaosPool& pool, const chaos::ChaosParams& params, double t,
                                  std::size_t samples, std::uint64_t seed);

// --- recursion -----------------------------------------------------------

// automatic: tensor Gauss–Hermite for d <= 4, Sobol points above.
enum class BlockRule { automatic, tensor_gh, qmc };

struct QuadratureOptions {
  BlockRule rule = BlockRule::automatic;
  int gh_nodes = 64;      // d = 2
  int tensor_nodes = 24;  // per latent dimension for d >= 3
  int qmc_log2 = 14;
  double trust_tol = 0.01;
};

// Expectation over one balanced block Y = c H eta (H a zero-sum orthonormal
// basis, eta standard normal in d-1 dimensions) by a tensor Gauss–Hermite or
// Sobol rule in eta, rescaled around Y = 0 by the local curvature of G.
class BlockIntegrator {
 public:
  BlockIntegrator(const chaos::ChaosParams& params, const QuadratureOptions& opt = {});

  struct Result {
    double value = 0.0;
    bool trusted = true;
  };
  struct Scratch {
    std::vector<double> q, g, lo, hi, l, w;
  };

  // rho <= 0 picks the point scale from the local curvature of g at x.
  Result operator()(const LambdaTable& g, double x, Scratch& s, double rho = 0.0) const;
  double scale(const LambdaTable& g, double x) const;
  int d() const { return d_; }
  std::size_t points() const { return weights_.size(); }
  BlockRule rule() const { return rule_; }

 private:
  double reduce(std::span<const double> g_reads, double rho, Scratch& s, bool small) const;
  Result trapezoid(const LambdaTable& g, double x) const;

  int d_;
  double c2_;
  double trust_tol_;
  BlockRule rule_ = BlockRule::automatic;
  std::vector<double> unit_;     // points x d block offsets at rho = 1
  std::vector<double> logw_;     // log base weights
  std::vector<double> weights_;  // base weights
  std::vector<double> r2_;       // squared latent norm
};

LambdaTable recursion_step(const LambdaTable& tbl, const BlockIntegrator& integ);

struct SolveReport {
  int sweeps = 0;
  double residual = 0.0;
  bool converged = false;
};

// Level-0 table on the full grid that is a fixed point of one generation
// followed by one anchor shift: G(x) = R[G](x - ln p / gamma). Starts from the
// Monte-Carlo table (extended by its tail rule) and uses Anderson mixing on
// log G. Quadrature scales are frozen once the residual drops below 1e-4 (or
// after 100 sweeps).
LambdaTable solve_self_consistent(const LambdaTable& mc, const GridSpec& full, const BlockIntegrator& integ,
                                  double tol = 1e-11, int max_sweeps = 3000, SolveReport* report = nullptr);

struct LevelRun {
  std::vector<LambdaTable> tables;  // levels 0..K
  std::vector<double> cauchy;       // cauchy[k] = max_lambda |h_k - h_{k-1}| / h_k, cauchy[0] = NaN
  bool converged = false;
  bool trust_exhausted = false;     // stopped because the next level no longer covers [1, p]
  std::string stop_reason;
};

// 64 anchor values spread evenly over [1, p] (times lambda_anchor).
std::vector<double> lambda_samples(const LambdaTable& tbl, int count = 64);

// Steps until the Cauchy criterion holds (and at least min_level levels exist),
// max_level is reached, or the next level's trusted range stops covering
// [1, p] (that level is dropped; a wider grid is needed to go further).
LevelRun run_levels(LambdaTable level0, const BlockIntegrator& integ, int max_level = 40, double tol = 1e-4,
                    int min_level = 0);

// --- diagnostics ---------------------------------------------------------

// OLS slope of log G_k(0) against log(lambda p^k) over the last `count` tables.
double alpha_fit(std::span<const LambdaTable> tables, int count = 4);
// max / min of Lambda(t) / t^alpha over the same window.
double bound_ratio(std::span<const LambdaTable> tables, int count = 4);

struct TableChecks {
  bool nonnegative = true;
  bool monotone = true;
  bool below_t = true;      // Lambda(t) <= t
  bool concave_in_t = true;
  bool lipschitz = true;    // G(x) e^{-gamma dx} <= G(x + dx) <= G(x) e^{gamma dx}
  double worst_concavity = 0.0;  // largest violation, relative
  bool ok() const { return nonnegative && monotone && below_t && concave_in_t && lipschitz; }
};

TableChecks check_table(const LambdaTable& tbl);

struct SandwichCheck {
  bool monotone = true;   // h(l1) <= h(l2) for l1 <= l2
  bool sandwich = true;   // h(l2) <= (l2 / l1) h(l1)
  double worst = 0.0;     // largest relative violation of either
};

// Over consecutive pairs of the (increasing) sample lambdas.
SandwichCheck check_h_sandwich(const LambdaTable& tbl, std::span<const double> lambdas);

// Worst relative |h_k(p lambda) - d h_{k+1}(lambda)| over the sample lambdas.
double anchor_identity_error(const LambdaTable& k, const LambdaTable& k1, std::span<const double> lambdas);

struct VariationalResult {
  double h = 0.0;
  double residual = 0.0;  // h - min_y (f(y) + f(-y)) / 2
  double y_min = 0.0;
  bool inconclusive = false;
};

VariationalResult variational_check(const LambdaTable& tbl, double lambda);

// Smallest normalised second difference of f_lambda over [x_lo, trusted_x_max];
// positive means convex.
double min_second_difference(const LambdaTable& tbl, double lambda);

struct LambdaStar {
  double lambda = 0.0;
  double curvature = 0.0;
  double noise_floor = 0.0;
  bool certified = false;
  bool at_edge = false;
  std::uint64_t table_fingerprint = 0;
};

// Maximises the symmetric second difference of f_lambda at 0 over lambda in
// [1, p] (grid-aligned); certified when it beats 10x the table noise floor.
LambdaStar find_lambda_star(const LambdaTable& tbl, double iteration_tol = 1e-10);

// max over x of |f_{p lambda}(x) - d f_lambda(x)| / (d f_lambda(x)), comparing
// level-k tables built at anchors lambda and p lambda.
double scaling_error(const LambdaTable& at_lambda, const LambdaTable& at_p_lambda);

// --- files ---------------------------------------------------------------

void save_table(const LambdaTable& tbl, std::ostream& os);
LambdaTable load_table(std::istream& is);

}  // namespace brwlab::laplace
