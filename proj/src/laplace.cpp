#include "brwlab/laplace.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "brwlab/hash.hpp"
#include "brwlab/interp.hpp"
#include "brwlab/parallel.hpp"
#include "brwlab/quadrature.hpp"
#include "brwlab/rng.hpp"
#include "io_detail.hpp"

namespace brwlab::laplace {

namespace {

constexpr double kNegligible = 27.631021115928547;  // -ln 1e-12

double dpow(int d, int k) { return std::pow(static_cast<double>(d), k); }

// -log sum_n exp(l_n), stable.
double neg_log_sum_exp(std::span<double> l) {
  const double m = *std::max_element(l.begin(), l.end());
  if (!std::isfinite(m)) return std::numeric_limits<double>::infinity();
  for (double& v : l) v -= m;
  simd::kernels().exp_array(l.data(), l.data(), l.size());
  stats::CompensatedSum s;
  for (double v : l) s.add(v);
  return -(m + std::log(s.value()));
}

}  // namespace

// --- grid and table ------------------------------------------------------

GridSpec GridSpec::make(const chaos::ChaosParams& params, double half_width, double spacing) {
  if (!(half_width > 0.0 && spacing > 0.0)) throw std::invalid_argument("GridSpec: bad width or spacing");
  const double s = params.shift();
  GridSpec g;
  g.steps = std::max(1, static_cast<int>(std::lround(s / (spacing / params.gamma))));
  g.dx = s / g.steps;
  g.j_max = static_cast<long>(std::ceil(half_width / params.gamma / g.dx));
  g.j_min = -g.j_max;
  return g;
}

GridSpec GridSpec::truncated(double x_max) const {
  GridSpec g = *this;
  g.j_max = std::min(j_max, static_cast<long>(std::floor(x_max / dx + 1e-9)));
  if (g.j_max < j_min + 3) throw std::invalid_argument("GridSpec::truncated: fewer than four knots left");
  return g;
}

double LambdaTable::t_at(double x) const {
  return lambda * std::exp(level * std::log(params.p) + params.gamma * x);
}

double LambdaTable::operator()(double x) const {
  if (x < x_lo()) {
    const double t = t_at(x);
    return t * (1.0 - left_r * std::pow(t / left_t, left_q));
  }
  const double xt = trusted_x_max();
  if (x > xt) return at(j_trusted) * std::exp(tail_slope() * (x - xt));
  return std::exp(interp::hermite_at(view(), x));
}

void LambdaTable::read(std::span<const double> xs, std::span<double> out) const {
  const auto& k = simd::kernels();
  k.hermite_eval(view(), xs.data(), out.data(), xs.size());
  k.exp_array(out.data(), out.data(), out.size());
  const double lo = x_lo(), xt = trusted_x_max();
  const double gt = at(j_trusted), a = tail_slope();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] < lo) {
      const double t = t_at(xs[i]);
      out[i] = t * (1.0 - left_r * std::pow(t / left_t, left_q));
    } else if (xs[i] > xt) {
      out[i] = gt * std::exp(a * (xs[i] - xt));
    }
  }
}

simd::HermiteView LambdaTable::view() const {
  return {logs.data(), dslope.data(), logs.size(), x_lo(), 1.0 / grid.dx};
}

void LambdaTable::refresh_slopes() {
  logs.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) logs[i] = std::log(values[i]);
  dslope = interp::pchip_dslopes(logs);
  // below x_lo, G = t (1 - r (t/t0)^q) with the small-t correction order
  // q = min(kappa, 2) - 1 (tail index kappa of M), r from the shape of v/t
  // over the first anchor step so that the scale stays pinned by G ~ t
  left_t = t_at(x_lo());
  left_q = std::min(params.kappa, 2.0) - 1.0;
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(grid.steps), logs.size() - 1);
  const double e = std::exp(logs[w] - logs.front() - params.gamma * grid.dx * static_cast<double>(w));
  const double tau = std::exp(left_q * params.gamma * grid.dx * static_cast<double>(w));
  left_r = e < 1.0 ? (1.0 - e) / (tau - e) : 0.0;
}

std::uint64_t LambdaTable::fingerprint() const {
  hash::Fnv1a h;
  h.value(params.d);
  h.value(params.gamma);
  h.value(lambda);
  h.value(level);
  h.value(grid.dx);
  h.value(grid.j_min);
  h.value(grid.j_max);
  h.value(j_lo);
  h.value(j_trusted);
  h.value(pool_fingerprint);
  h.doubles(values);
  return h.digest();
}

double h_estimate(const LambdaTable& tbl, double lambda) {
  if (!(lambda > 0.0)) throw ExtrapolationRefused("h_estimate: lambda must be positive");
  const double x = std::log(lambda / tbl.lambda) / tbl.params.gamma;
  const double eps = 1e-9 * tbl.grid.dx;
  if (x < tbl.x_lo() - eps || x > tbl.trusted_x_max() + eps) {
    std::ostringstream os;
    os << "h_estimate: lambda=" << lambda << " maps to x=" << x << ", outside the trusted range ["
       << tbl.x_lo() << ", " << tbl.trusted_x_max() << "] of the level-" << tbl.level << " table";
    throw ExtrapolationRefused(os.str());
  }
  return tbl(std::clamp(x, tbl.x_lo(), tbl.trusted_x_max())) / dpow(tbl.params.d, tbl.level);
}

LambdaTable reanchor(const LambdaTable& tbl, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("reanchor: lambda must be positive");
  const double shift = std::log(lambda / tbl.lambda) / tbl.params.gamma / tbl.grid.dx;
  const long j = std::lround(shift);
  if (std::abs(shift - static_cast<double>(j)) > 1e-6)
    throw std::invalid_argument("reanchor: lambda is not grid-aligned with the table anchor");
  LambdaTable out = tbl;
  out.lambda = lambda;
  out.grid.j_min -= j;
  out.grid.j_max -= j;
  out.j_lo -= j;
  out.j_trusted -= j;
  out.refresh_slopes();
  return out;
}

// --- Monte-Carlo level 0 -------------------------------------------------

double largest_admissible_x(const chaos::ChaosPool& pool, double lambda, const GridSpec& grid) {
  if (pool.size() < 10) throw ContractViolation("largest_admissible_x: pool has fewer than 10 samples");
  std::vector<double> m = pool.samples;
  std::nth_element(m.begin(), m.begin() + 9, m.end());
  const double x = std::log(kNegligible / (lambda * m[9])) / pool.gamma;
  return grid.x(static_cast<long>(std::floor(x / grid.dx + 1e-9)));
}

stats::Estimate pool_laplace(const chaos::ChaosPool& pool, double t) {
  const auto& m = pool.samples;
  const double mmin = *std::min_element(m.begin(), m.end());
  const auto& k = simd::kernels();
  const double n = static_cast<double>(m.size());
  const double m1 = k.sum_exp_affine(m.data(), m.size(), -t, t * mmin) / n;
  const double m2 = k.sum_exp_affine(m.data(), m.size(), -2.0 * t, 2.0 * t * mmin) / n;
  const double value = t * mmin - std::log(m1);
  const double se = std::sqrt(std::max(0.0, m2 - m1 * m1) / (n - 1.0)) / m1;
  return {value, se};
}

LambdaTable base_table(const chaos::ChaosPool& pool, const chaos::ChaosParams& params, double lambda,
                       const GridSpec& grid) {
  if (pool.kind != chaos::PoolKind::balanced) throw ContractViolation("base_table: needs a balanced pool");
  if (pool.d != params.d || pool.gamma != params.gamma)
    throw ContractViolation("base_table: pool and parameters disagree");
  const double adm = largest_admissible_x(pool, lambda, grid);
  if (grid.x_max() > adm + 1e-9 * grid.dx) {
    std::ostringstream os;
    os << "base_table: x_max=" << grid.x_max() << " is not resolvable by a pool of " << pool.size()
       << " samples; largest admissible x_max is " << adm;
    throw InadmissibleRange(os.str(), adm);
  }
  LambdaTable tbl;
  tbl.params = params;
  tbl.lambda = lambda;
  tbl.level = 0;
  tbl.grid = grid;
  tbl.j_lo = grid.j_min;
  tbl.j_trusted = grid.j_max;
  tbl.pool_fingerprint = pool.fingerprint();
  tbl.values.resize(grid.size());
  par::parallel_for(grid.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      tbl.values[i] = pool_laplace(pool, tbl.t_at(grid.x(grid.j_min + static_cast<long>(i)))).value;
  });
  tbl.refresh_slopes();
  return tbl;
}

stats::Estimate two_level_laplace(const chaos::ChaosPool& pool, const chaos::ChaosParams& params, double t,
                                  std::size_t samples, std::uint64_t seed) {
  if (samples < 2) throw std::invalid_argument("two_level_laplace: need at least two samples");
  const int d = params.d;
  const double g = params.gamma;
  std::vector<double> v(samples);
  par::parallel_for(samples, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> y(static_cast<std::size_t>(d));
    for (std::size_t j = lo; j < hi; ++j) {
      rng::Stream rs(seed, 0x2c, j);
      if (pool.kind == chaos::PoolKind::standard) field::standard_block(rs, y);
      else field::balanced_block(rs, y);
      double m = 0.0;
      for (int i = 0; i < d; ++i) m += std::exp(g * y[static_cast<std::size_t>(i)] - g * g / 2.0) * pool.samples[rs.below(pool.size())];
      v[j] = t * m / d;
    }
  });
  const double vmin = *std::min_element(v.begin(), v.end());
  const auto& k = simd::kernels();
  const double n = static_cast<double>(samples);
  const double m1 = k.sum_exp_affine(v.data(), v.size(), -1.0, vmin) / n;
  const double m2 = k.sum_exp_affine(v.data(), v.size(), -2.0, 2.0 * vmin) / n;
  return {vmin - std::log(m1), std::sqrt(std::max(0.0, m2 - m1 * m1) / (n - 1.0)) / m1};
}

// --- block integrator ----------------------------------------------------

BlockIntegrator::BlockIntegrator(const chaos::ChaosParams& params, const QuadratureOptions& opt)
    : d_(params.d), c2_(static_cast<double>(params.d) / (params.d - 1)), trust_tol_(opt.trust_tol) {
  const auto D = static_cast<std::size_t>(d_);
  const std::size_t L = D - 1;
  const bool tensor = opt.rule == BlockRule::tensor_gh || (opt.rule == BlockRule::automatic && d_ <= 4);
  rule_ = tensor ? BlockRule::tensor_gh : BlockRule::qmc;
  // latent points eta in L dimensions with weights
  std::vector<double> eta;
  if (tensor) {
    const quad::Rule r = quad::gauss_hermite(d_ == 2 ? opt.gh_nodes : opt.tensor_nodes);
    const std::size_t K = r.nodes.size();
    std::size_t N = 1;
    for (std::size_t a = 0; a < L; ++a) N *= K;
    eta.resize(N * L);
    for (std::size_t n = 0; n < N; ++n) {
      std::size_t rem = n;
      double w = 1.0;
      for (std::size_t a = 0; a < L; ++a) {
        const std::size_t k = rem % K;
        rem /= K;
        eta[n * L + a] = r.nodes[k];
        w *= r.weights[k];
      }
      weights_.push_back(w);
    }
  } else {
    if (opt.qmc_log2 < 4 || opt.qmc_log2 > 24) throw std::invalid_argument("BlockIntegrator: qmc_log2 out of range");
    const std::size_t N = std::size_t{1} << opt.qmc_log2;
    eta = quad::sobol_normal(d_ - 1, N);
    weights_.assign(N, 1.0 / static_cast<double>(N));
  }
  const std::vector<double> basis = quad::zero_sum_basis(d_);
  const double c = std::sqrt(c2_);
  const std::size_t N = weights_.size();
  unit_.resize(N * D);
  for (std::size_t n = 0; n < N; ++n) {
    double r2 = 0.0;
    for (std::size_t a = 0; a < L; ++a) r2 += eta[n * L + a] * eta[n * L + a];
    for (std::size_t i = 0; i < D; ++i) {
      double y = 0.0;
      for (std::size_t a = 0; a < L; ++a) y += basis[i * L + a] * eta[n * L + a];
      unit_[n * D + i] = c * y;
    }
    r2_.push_back(r2);
  }
  for (double w : weights_) logw_.push_back(std::log(w));
}

double BlockIntegrator::reduce(std::span<const double> g_reads, double rho, Scratch& s, bool small) const {
  const std::size_t N = weights_.size();
  const auto D = static_cast<std::size_t>(d_);
  s.l.resize(N);
  s.w.resize(N);
  const double lr = (d_ - 1) * std::log(rho);
  const double a = (1.0 - rho * rho) / 2.0;
  for (std::size_t n = 0; n < N; ++n) s.w[n] = logw_[n] + lr + a * r2_[n];
  // Not self-normalised: the weights integrate to 1 exactly, but their sum over
  // the rule's points falls short once rho is small.
  if (small) {
    stats::CompensatedSum e;
    for (std::size_t n = 0; n < N; ++n) {
      double S = 0.0;
      for (std::size_t i = 0; i < D; ++i) S += g_reads[n * D + i];
      e.add(std::exp(s.w[n]) * std::expm1(-S));
    }
    return -std::log1p(e.value());
  }
  for (std::size_t n = 0; n < N; ++n) {
    double S = 0.0;
    for (std::size_t i = 0; i < D; ++i) S += g_reads[n * D + i];
    s.l[n] = s.w[n] - S;
  }
  return neg_log_sum_exp(s.l);
}

BlockIntegrator::Result BlockIntegrator::trapezoid(const LambdaTable& g, double x) const {
  // fallback for d = 2 when the integrand is not unimodal at Y = 0
  constexpr int K = 4001;
  constexpr double Z = 10.0;
  const double h = 2.0 * Z / (K - 1);
  std::vector<double> q(2 * K), r(2 * K), l(K);
  for (int i = 0; i < K; ++i) {
    const double z = -Z + h * i;
    q[2 * static_cast<std::size_t>(i)] = x + z;
    q[2 * static_cast<std::size_t>(i) + 1] = x - z;
  }
  g.read(q, r);
  for (int i = 0; i < K; ++i) {
    const double z = -Z + h * i;
    const double w = (i == 0 || i == K - 1) ? 0.5 : 1.0;
    l[static_cast<std::size_t>(i)] = std::log(w * h) - 0.5 * z * z - 0.5 * std::log(2.0 * M_PI) -
                                     r[2 * static_cast<std::size_t>(i)] - r[2 * static_cast<std::size_t>(i) + 1];
  }
  const double xt = g.trusted_x_max();
  const bool beyond = x + Z > xt;
  return {neg_log_sum_exp(l), !beyond};
}

double BlockIntegrator::scale(const LambdaTable& g, double x) const {
  const double dx = g.grid.dx;
  const double gpp = std::max(0.0, (g(x + dx) + g(x - dx) - 2.0 * g(x)) / (dx * dx));
  return 1.0 / std::sqrt(1.0 + c2_ * gpp);
}

BlockIntegrator::Result BlockIntegrator::operator()(const LambdaTable& g, double x, Scratch& s, double rho) const {
  const bool small = d_ * g(x) < 0.1;
  if (!(rho > 0.0)) rho = scale(g, x);
  const std::size_t M = unit_.size();
  s.q.resize(M);
  s.g.resize(M);
  for (std::size_t i = 0; i < M; ++i) s.q[i] = x + rho * unit_[i];
  g.read(s.q, s.g);

  if (d_ == 2) {
    // exponent along the 1-D line must not decrease away from the centre
    const std::size_t N = weights_.size();
    const std::size_t mid = N / 2;
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t n = mid; n < N; ++n) {
      const double z = rho * unit_[2 * n];
      const double phi = s.g[2 * n] + s.g[2 * n + 1] + 0.5 * z * z;
      if (phi < prev - 1e-9 * (1.0 + std::abs(prev))) return trapezoid(g, x);
      prev = phi;
    }
  }

  Result res{reduce(s.g, rho, s, small), true};

  const double xt = g.trusted_x_max();
  bool beyond = false;
  for (double q : s.q) beyond |= q > xt;
  if (beyond) {
    const double gt = g.at(g.j_trusted);
    s.lo = s.g;
    s.hi = s.g;
    for (std::size_t i = 0; i < M; ++i) {
      if (s.q[i] > xt) {
        s.lo[i] = gt;
        s.hi[i] = gt * std::exp(g.params.gamma * (s.q[i] - xt));
      }
    }
    const double v_lo = reduce(s.lo, rho, s, small);
    const double v_hi = reduce(s.hi, rho, s, small);
    res.trusted = std::expm1(v_hi - v_lo) <= trust_tol_;
  }
  return res;
}

// --- recursion -----------------------------------------------------------

LambdaTable recursion_step(const LambdaTable& tbl, const BlockIntegrator& integ) {
  if (integ.d() != tbl.params.d) throw ContractViolation("recursion_step: integrator built for another d");
  const GridSpec& g = tbl.grid;
  LambdaTable next = tbl;
  next.level = tbl.level + 1;
  next.j_lo = tbl.j_lo - g.steps;
  next.values.assign(static_cast<std::size_t>(g.j_max - next.j_lo + 1), 0.0);
  for (long j = next.j_lo; j < g.j_min; ++j)
    next.values[static_cast<std::size_t>(j - next.j_lo)] = tbl.at(j + g.steps);
  std::vector<char> trusted(g.size(), 1);
  par::parallel_for(g.size(), [&](std::size_t lo, std::size_t hi) {
    BlockIntegrator::Scratch s;
    for (std::size_t i = lo; i < hi; ++i) {
      const long j = g.j_min + static_cast<long>(i);
      const auto r = integ(tbl, g.x(j), s);
      next.values[static_cast<std::size_t>(j - next.j_lo)] = r.value;
      trusted[i] = r.trusted;
    }
  });
  next.j_trusted = g.j_min - 1;
  while (next.j_trusted < g.j_max && trusted[static_cast<std::size_t>(next.j_trusted + 1 - g.j_min)])
    ++next.j_trusted;
  next.refresh_slopes();
  return next;
}

namespace {

// Dense solve with partial pivoting; A is n x n row-major.
std::vector<double> solve_small(std::vector<double> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r * n + c]) > std::abs(A[p * n + c])) p = r;
    if (A[p * n + c] == 0.0) return std::vector<double>(n, 0.0);
    if (p != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(A[c * n + k], A[p * n + k]);
      std::swap(b[c], b[p]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r * n + c] / A[c * n + c];
      for (std::size_t k = c; k < n; ++k) A[r * n + k] -= f * A[c * n + k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= A[i * n + k] * x[k];
    x[i] = s / A[i * n + i];
  }
  return x;
}

}  // namespace

LambdaTable solve_self_consistent(const LambdaTable& mc, const GridSpec& full, const BlockIntegrator& integ,
                                  double tol, int max_sweeps, SolveReport* report) {
  if (mc.level != 0) throw ContractViolation("solve_self_consistent: needs a level-0 table");
  if (std::abs(mc.grid.dx - full.dx) > 1e-15 * full.dx || mc.grid.j_min != full.j_min)
    throw ContractViolation("solve_self_consistent: grids are not aligned");
  LambdaTable tbl = mc;
  tbl.grid = full;
  tbl.j_lo = full.j_min;
  tbl.j_trusted = full.j_max;
  tbl.values.resize(full.size());
  for (long j = full.j_min; j <= full.j_max; ++j) tbl.values[static_cast<std::size_t>(j - full.j_min)] = mc(full.x(j));

  const std::size_t n = full.size();
  const double s = full.dx * full.steps;
  std::vector<char> trusted(n, 1);
  // Point scales follow the table until the residual is small, then freeze so
  // the map is smooth in the table values for the final mixing.
  std::vector<double> rho(n, 0.0);
  bool frozen = false;
  auto apply = [&](const std::vector<double>& u) {
    for (std::size_t i = 0; i < n; ++i) tbl.values[i] = std::exp(u[i]);
    tbl.refresh_slopes();
    std::vector<double> out(n);
    par::parallel_for(n, [&](std::size_t lo, std::size_t hi) {
      BlockIntegrator::Scratch sc;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto r = integ(tbl, full.x(full.j_min + static_cast<long>(i)) - s, sc, rho[i]);
        out[i] = std::log(r.value);
        trusted[i] = r.trusted;
      }
    });
    return out;
  };

  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = std::log(tbl.values[i]);
  constexpr std::size_t depth = 6;
  std::vector<std::vector<double>> dU, dF;
  std::vector<double> u_prev, f_prev;
  SolveReport rep;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> g;
  for (rep.sweeps = 1; rep.sweeps <= max_sweeps; ++rep.sweeps) {
    g = apply(u);
    std::vector<double> f(n);
    double res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(g[i]))
        throw WidenGridError("solve_self_consistent: non-finite value at x=" + std::to_string(full.x(full.j_min + static_cast<long>(i))));
      f[i] = g[i] - u[i];
      res = std::max(res, std::abs(f[i]));
    }
    rep.residual = res;
    if (res < tol) {
      rep.converged = true;
      break;
    }
    if (!frozen && (res < 1e-4 || rep.sweeps >= 100)) {
      for (std::size_t i = 0; i < n; ++i) rho[i] = integ.scale(tbl, full.x(full.j_min + static_cast<long>(i)) - s);
      frozen = true;
      dU.clear();
      dF.clear();
      u_prev.clear();
      best = std::numeric_limits<double>::infinity();
      u = g;
      continue;
    }
    if (res > 10.0 * best) {
      dU.clear();
      dF.clear();
      u_prev.clear();
    }
    best = std::min(best, res);
    if (!u_prev.empty()) {
      std::vector<double> du(n), df(n);
      for (std::size_t i = 0; i < n; ++i) {
        du[i] = u[i] - u_prev[i];
        df[i] = f[i] - f_prev[i];
      }
      dU.push_back(std::move(du));
      dF.push_back(std::move(df));
      if (dU.size() > depth) {
        dU.erase(dU.begin());
        dF.erase(dF.begin());
      }
    }
    u_prev = u;
    f_prev = f;
    if (dF.empty()) {
      u = g;
      continue;
    }
    const std::size_t m = dF.size();
    std::vector<double> A(m * m), b(m);
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t c = 0; c < m; ++c)
        A[a * m + c] = std::inner_product(dF[a].begin(), dF[a].end(), dF[c].begin(), 0.0);
      b[a] = std::inner_product(dF[a].begin(), dF[a].end(), f.begin(), 0.0);
    }
    double tr = 0.0;
    for (std::size_t a = 0; a < m; ++a) tr += A[a * m + a];
    for (std::size_t a = 0; a < m; ++a) A[a * m + a] += 1e-12 * tr / m;
    const std::vector<double> theta = solve_small(A, b);
    for (std::size_t i = 0; i < n; ++i) {
      double corr = 0.0;
      for (std::size_t a = 0; a < m; ++a) corr += theta[a] * (dU[a][i] + dF[a][i]);
      u[i] = g[i] - corr;
    }
  }
  rep.sweeps = std::min(rep.sweeps, max_sweeps);
  for (std::size_t i = 0; i < n; ++i) tbl.values[i] = std::exp(g[i]);
  tbl.j_trusted = full.j_min - 1;
  while (tbl.j_trusted < full.j_max && trusted[static_cast<std::size_t>(tbl.j_trusted + 1 - full.j_min)])
    ++tbl.j_trusted;
  if (tbl.j_trusted < full.j_min) throw WidenGridError("solve_self_consistent: no trusted knots");
  tbl.refresh_slopes();
  if (report) *report = rep;
  return tbl;
}

std::vector<double> lambda_samples(const LambdaTable& tbl, int count) {
  std::vector<double> out;
  const double lp = std::log(tbl.params.p);
  for (int i = 0; i < count; ++i) out.push_back(tbl.lambda * std::exp(lp * i / (count - 1)));
  return out;
}

LevelRun run_levels(LambdaTable level0, const BlockIntegrator& integ, int max_level, double tol, int min_level) {
  LevelRun run;
  run.tables.push_back(std::move(level0));
  run.cauchy.push_back(std::numeric_limits<double>::quiet_NaN());
  const std::vector<double> lambdas = lambda_samples(run.tables.front());
  for (int k = 1; k <= max_level; ++k) {
    run.tables.push_back(recursion_step(run.tables.back(), integ));
    const LambdaTable& cur = run.tables.back();
    const LambdaTable& prev = run.tables[run.tables.size() - 2];
    double worst = 0.0;
    try {
      for (double l : lambdas) {
        const double hk = h_estimate(cur, l);
        worst = std::max(worst, std::abs(hk - h_estimate(prev, l)) / hk);
      }
    } catch (const ExtrapolationRefused& e) {
      run.tables.pop_back();
      run.trust_exhausted = true;
      run.stop_reason = std::string("trusted range no longer covers [1, p]: ") + e.what();
      break;
    }
    run.cauchy.push_back(worst);
    if (worst < tol && k >= min_level) {
      run.converged = true;
      break;
    }
  }
  return run;
}

// --- diagnostics ---------------------------------------------------------

double alpha_fit(std::span<const LambdaTable> tables, int count) {
  if (static_cast<int>(tables.size()) < count || count < 2) throw ContractViolation("alpha_fit: not enough levels");
  std::vector<double> x, y;
  for (std::size_t i = tables.size() - static_cast<std::size_t>(count); i < tables.size(); ++i) {
    x.push_back(std::log(tables[i].t_at(0.0)));
    y.push_back(std::log(tables[i](0.0)));
  }
  return stats::ols_slope(x, y);
}

double bound_ratio(std::span<const LambdaTable> tables, int count) {
  if (static_cast<int>(tables.size()) < count) throw ContractViolation("bound_ratio: not enough levels");
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t i = tables.size() - static_cast<std::size_t>(count); i < tables.size(); ++i) {
    const double r = tables[i](0.0) / std::pow(tables[i].t_at(0.0), tables[i].params.alpha);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  return hi / lo;
}

TableChecks check_table(const LambdaTable& tbl) {
  TableChecks c;
  const double gd = tbl.params.gamma * tbl.grid.dx;
  const double up = std::exp(gd), down = std::exp(-gd);
  const double eps = 1e-12;
  for (long j = tbl.j_lo; j <= tbl.j_trusted; ++j) {
    const double v = tbl.at(j), t = tbl.t_at(tbl.grid.x(j));
    c.nonnegative &= v >= 0.0;
    c.below_t &= v <= t * (1.0 + eps);
    if (j < tbl.j_trusted) {
      const double w = tbl.at(j + 1);
      c.monotone &= w >= v * (1.0 - eps);
      c.lipschitz &= w <= v * up * (1.0 + eps) && w >= v * down * (1.0 - eps);
    }
    if (j > tbl.j_lo && j < tbl.j_trusted) {
      const double t0 = tbl.t_at(tbl.grid.x(j - 1)), t2 = tbl.t_at(tbl.grid.x(j + 1));
      const double chord = tbl.at(j - 1) + (tbl.at(j + 1) - tbl.at(j - 1)) * (t - t0) / (t2 - t0);
      const double viol = (chord - v) / v;
      c.worst_concavity = std::max(c.worst_concavity, viol);
    }
  }
  c.concave_in_t = c.worst_concavity <= 1e-9;
  return c;
}

SandwichCheck check_h_sandwich(const LambdaTable& tbl, std::span<const double> lambdas) {
  SandwichCheck c;
  const double tol = 1e-12;
  for (std::size_t i = 1; i < lambdas.size(); ++i) {
    const double l1 = lambdas[i - 1], l2 = lambdas[i];
    if (!(l2 >= l1)) throw ContractViolation("check_h_sandwich: lambdas must increase");
    const double h1 = h_estimate(tbl, l1), h2 = h_estimate(tbl, l2);
    const double low = (h1 - h2) / h1, high = (h2 - l2 / l1 * h1) / h1;
    if (low > tol) c.monotone = false;
    if (high > tol) c.sandwich = false;
    c.worst = std::max({c.worst, low, high});
  }
  return c;
}

double anchor_identity_error(const LambdaTable& k, const LambdaTable& k1, std::span<const double> lambdas) {
  if (k1.level != k.level + 1) throw ContractViolation("anchor_identity_error: levels must be consecutive");
  double worst = 0.0;
  for (double l : lambdas) {
    const double a = h_estimate(k, k.params.p * l);
    const double b = k.params.d * h_estimate(k1, l);
    worst = std::max(worst, std::abs(a - b) / std::abs(b));
  }
  return worst;
}

VariationalResult variational_check(const LambdaTable& tbl, double lambda) {
  VariationalResult r;
  const double x0 = std::log(lambda / tbl.lambda) / tbl.params.gamma;
  const double norm = dpow(tbl.params.d, tbl.level);
  r.h = h_estimate(tbl, lambda);
  double best = r.h;
  long best_i = 0, last_i = 0;
  for (long i = 1;; ++i) {
    const double y = i * tbl.grid.dx;
    if (x0 + y > tbl.trusted_x_max() || x0 - y < tbl.x_lo()) break;
    last_i = i;
    const double avg = 0.5 * (tbl(x0 + y) + tbl(x0 - y)) / norm;
    if (avg < best) {
      best = avg;
      best_i = i;
    }
  }
  r.residual = r.h - best;
  r.y_min = best_i * tbl.grid.dx;
  r.inconclusive = best_i > 0 && best_i == last_i;
  return r;
}

double min_second_difference(const LambdaTable& tbl, double lambda) {
  const double x0 = std::log(lambda / tbl.lambda) / tbl.params.gamma;
  const double w = 4.0 * tbl.params.shift();
  const double dx = tbl.grid.dx;
  const double lo = std::max(x0 - w, tbl.x_lo() + dx), hi = std::min(x0 + w, tbl.trusted_x_max() - dx);
  double fmax = 0.0, worst = std::numeric_limits<double>::infinity();
  for (double x = lo; x <= hi; x += dx) {
    fmax = std::max(fmax, tbl(x + dx));
    worst = std::min(worst, tbl(x + dx) + tbl(x - dx) - 2.0 * tbl(x));
  }
  return worst / fmax;
}

LambdaStar find_lambda_star(const LambdaTable& tbl, double iteration_tol) {
  const long steps = tbl.grid.steps;
  const double dx = tbl.grid.dx;
  const double norm = dpow(tbl.params.d, tbl.level) * dx * dx;
  auto f = [&](double x) { return tbl(x); };
  const double x0 = std::log(1.0 / tbl.lambda) / tbl.params.gamma;  // lambda = 1
  LambdaStar best;
  double rough = 0.0, fmax = 0.0;
  long best_j = 0;
  for (long j = 0; j <= steps; ++j) {
    const double x = x0 + j * dx;
    const double c = (f(x + dx) + f(x - dx) - 2.0 * f(x)) / norm;
    const double d4 = f(x + 2 * dx) - 4 * f(x + dx) + 6 * f(x) - 4 * f(x - dx) + f(x - 2 * dx);
    rough = std::max(rough, std::abs(d4) / norm);
    fmax = std::max(fmax, f(x + 2 * dx));
    if (j == 0 || c > best.curvature) {
      best.curvature = c;
      best.lambda = tbl.lambda * std::exp(tbl.params.gamma * x);
      best_j = j;
    }
  }
  best.noise_floor = rough + 4.0 * (iteration_tol + 4.0 * std::numeric_limits<double>::epsilon()) * fmax / norm;
  best.certified = best.curvature >= 10.0 * best.noise_floor;
  best.at_edge = best_j == 0 || best_j == steps;
  best.table_fingerprint = tbl.fingerprint();
  return best;
}

double scaling_error(const LambdaTable& at_lambda, const LambdaTable& at_p_lambda) {
  if (at_lambda.level != at_p_lambda.level) throw ContractViolation("scaling_error: levels differ");
  const double s = at_lambda.params.shift();
  const int d = at_lambda.params.d;
  double worst = 0.0;
  for (double x = -s; x <= 2.0 * s; x += at_lambda.grid.dx) {
    const double a = at_p_lambda(x), b = d * at_lambda(x);
    worst = std::max(worst, std::abs(a - b) / b);
  }
  return worst;
}

// --- files ---------------------------------------------------------------

namespace {
constexpr char kTableMagic[8] = {'B', 'R', 'W', 'L', 'T', 'A', 'B', '1'};
}

void save_table(const LambdaTable& tbl, std::ostream& os) {
  os.write(kTableMagic, sizeof kTableMagic);
  io::put_i64(os, tbl.params.d);
  io::put_f64(os, tbl.params.gamma);
  io::put_f64(os, tbl.lambda);
  io::put_i64(os, tbl.level);
  io::put_f64(os, tbl.grid.dx);
  io::put_i64(os, tbl.grid.steps);
  io::put_i64(os, tbl.grid.j_min);
  io::put_i64(os, tbl.grid.j_max);
  io::put_i64(os, tbl.j_lo);
  io::put_i64(os, tbl.j_trusted);
  io::put_u64(os, tbl.pool_fingerprint);
  io::put_u64(os, tbl.values.size());
  io::put_f64_array(os, tbl.values);
  if (!os) throw std::runtime_error("save_table: write failed");
}

LambdaTable load_table(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kTableMagic, sizeof magic) != 0)
    throw std::runtime_error("load_table: not a table file");
  LambdaTable t;
  const auto d = static_cast<int>(io::get_i64(is));
  const double gamma = io::get_f64(is);
  t.params = chaos::ChaosParams::make(d, gamma);
  t.lambda = io::get_f64(is);
  t.level = static_cast<int>(io::get_i64(is));
  t.grid.dx = io::get_f64(is);
  t.grid.steps = static_cast<int>(io::get_i64(is));
  t.grid.j_min = io::get_i64(is);
  t.grid.j_max = io::get_i64(is);
  t.j_lo = io::get_i64(is);
  t.j_trusted = io::get_i64(is);
  t.pool_fingerprint = io::get_u64(is);
  const auto n = io::get_u64(is);
  if (n != static_cast<std::uint64_t>(t.grid.j_max - t.j_lo + 1)) throw std::runtime_error("load_table: size mismatch");
  t.values = io::get_f64_array(is, n);
  t.refresh_slopes();
  return t;
}

}  // namespace brwlab::laplace
