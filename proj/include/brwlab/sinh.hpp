#pragma once

// Laplace functional of the pair (M+, M-) built from the same standard field
// with opposite signs:
//   F_k(x) = -log E exp(-(lambda/2) p^k (e^{gamma x} M+ + e^{-gamma x} M-)).
// Children are i.i.d., so one generation is a 1-D Gaussian integral for every d:
//   F_{k+1}(x) = -d log E_Z exp(-F_k(x + Z)).

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "brwlab/chaos.hpp"
#include "brwlab/laplace.hpp"
#include "brwlab/simd.hpp"

namespace brwlab::sinh {

// The same knots cut to |x| <= x_max.
laplace::GridSpec symmetric_truncated(const laplace::GridSpec& grid, double x_max);

struct SinhTable {
  chaos::ChaosParams params;
  double lambda = 1.0;
  int level = 0;
  laplace::GridSpec grid;      // symmetric, j_min = -j_max
  long j_trusted = 0;          // |j| <= j_trusted is trusted
  std::vector<double> values;  // knots j_min .. j_max
  std::vector<double> logs;
  std::vector<double> dslope;
  std::uint64_t pool_fingerprint = 0;
  // Base table only: largest |F(x) - F(-x)| before symmetrisation, in units of
  // its own standard error, and in absolute terms. Knots where either side has
  // fewer than 100 effective samples are left out.
  double presym_z = 0.0;
  double presym_abs = 0.0;

  double tail_slope() const { return params.alpha * params.gamma; }
  double trusted_x_max() const { return grid.x(j_trusted); }
  // lambda p^k
  double t_level() const;
  double at(long j) const { return values[static_cast<std::size_t>(j - grid.j_min)]; }
  // Interpolated (monotone cubic in log F) for |x| <= trusted_x_max;
  // F(x_tr) e^{alpha gamma (|x| - x_tr)} beyond.
  double operator()(double x) const;
  double derivative(double x) const;
  simd::HermiteView view() const;
  void refresh_slopes();
  std::uint64_t fingerprint() const;
};

// h~_k(lambda) = F_k(0) / d^k at the table's anchor.
double h_tilde(const SinhTable& tbl);

// Largest x such that at least 10 pool pairs have both exponents at +x and -x
// resolvable (exp(-E) >= 1e-12).
double largest_admissible_abs_x(const chaos::ChaosPool& joint, double lambda, const laplace::GridSpec& grid);

// F_0 by direct averaging over the joint pool, then symmetrised. Throws
// laplace::InadmissibleRange when the grid reaches too far.
SinhTable sinh_base_table(const chaos::ChaosPool& joint, const chaos::ChaosParams& params, double lambda,
                          const laplace::GridSpec& grid);

class SinhIntegrator {
 public:
  explicit SinhIntegrator(int gh_nodes = 64, double trust_tol = 0.01);

  struct Result {
    double value = 0.0;  // -log E_Z exp(-F(x + Z))
    bool trusted = true;
  };
  // Gauss–Hermite centred on the mode of -F(x + z) - z^2/2 and scaled by the
  // local curvature there.
  Result operator()(const SinhTable& f, double x) const;

 private:
  std::vector<double> nodes_;
  std::vector<double> logw_;
  double trust_tol_;
};

SinhTable sinh_recursion_step(const SinhTable& tbl, const SinhIntegrator& integ);

struct SinhChecks {
  double symmetry = 0.0;     // max |F(x) - F(-x)| / F(x) over trusted knots
  double convexity = 0.0;    // most negative second difference / max F (0 if convex)
  bool min_at_zero = true;   // F(x) >= F(0) on every trusted knot
  bool ok(double sym_tol = 1e-9, double conv_tol = 1e-9) const {
    return symmetry <= sym_tol && convexity >= -conv_tol && min_at_zero;
  }
};

SinhChecks check_sinh(const SinhTable& tbl);

struct SinhRun {
  std::vector<SinhTable> tables;
  std::vector<double> cauchy;  // |h~_k - h~_{k-1}| / h~_k, cauchy[0] = NaN
  bool converged = false;
};

SinhRun run_sinh_levels(SinhTable level0, const SinhIntegrator& integ, int max_level = 40, double tol = 1e-4,
                        int min_level = 0);

// OLS slope of log F_k(0) against log(lambda p^k) over the last `count` tables.
double sinh_alpha_fit(std::span<const SinhTable> tables, int count = 4);

void save_sinh_table(const SinhTable& tbl, std::ostream& os);
SinhTable load_sinh_table(std::istream& is);

}  // namespace brwlab::sinh
