#include "brwlab/sinh.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "brwlab/hash.hpp"
#include "brwlab/interp.hpp"
#include "brwlab/parallel.hpp"
#include "brwlab/quadrature.hpp"
#include "brwlab/stats.hpp"
#include "brwlab/tree.hpp"
#include "io_detail.hpp"

namespace brwlab::sinh {

namespace {

constexpr double kNegligible = 27.631021115928547;  // -ln 1e-12
constexpr char kMagic[8] = {'B', 'R', 'W', 'S', 'N', 'H', '0', '1'};

double neg_log_sum_exp(std::span<double> l) {
  const double m = *std::max_element(l.begin(), l.end());
  if (!std::isfinite(m)) return std::numeric_limits<double>::infinity();
  for (double& v : l) v -= m;
  simd::kernels().exp_array(l.data(), l.data(), l.size());
  stats::CompensatedSum s;
  for (double v : l) s.add(v);
  return -(m + std::log(s.value()));
}

// Deviation tests only count knots where both averages have this many
// effective samples; beyond that the delta-method error bar is unreliable.
constexpr double kMinEss = 100.0;

struct PairMoments {
  double value = 0.0;       // -log mean exp(-E)
  double ess = 0.0;         // (sum w)^2 / sum w^2
  std::vector<double> rel;  // exp(-E_i) / mean
};

// Exponents E_i(x) = (lambda/2)(e^{gamma x} M+_i + e^{-gamma x} M-_i).
void exponents(const chaos::ChaosPool& pool, double lambda, double x, std::vector<double>& e) {
  const double a = 0.5 * lambda * std::exp(pool.gamma * x);
  const double b = 0.5 * lambda * std::exp(-pool.gamma * x);
  e.resize(pool.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = a * pool.samples[i] + b * pool.minus[i];
}

PairMoments laplace_of(const std::vector<double>& e) {
  const double emin = *std::min_element(e.begin(), e.end());
  PairMoments r;
  r.rel.resize(e.size());
  stats::CompensatedSum s, s2;
  for (std::size_t i = 0; i < e.size(); ++i) {
    r.rel[i] = std::exp(emin - e[i]);
    s.add(r.rel[i]);
    s2.add(r.rel[i] * r.rel[i]);
  }
  r.ess = s.value() * s.value() / s2.value();
  const double mean = s.value() / static_cast<double>(e.size());
  for (double& v : r.rel) v /= mean;
  r.value = emin - std::log(mean);
  return r;
}

}  // namespace

laplace::GridSpec symmetric_truncated(const laplace::GridSpec& grid, double x_max) {
  laplace::GridSpec g = grid;
  g.j_max = std::min(grid.j_max, static_cast<long>(std::floor(x_max / grid.dx + 1e-9)));
  g.j_min = -g.j_max;
  if (g.j_max < 2) throw std::invalid_argument("symmetric_truncated: fewer than five knots left");
  return g;
}

double SinhTable::t_level() const { return lambda * std::exp(level * std::log(params.p)); }

simd::HermiteView SinhTable::view() const {
  return {logs.data(), dslope.data(), logs.size(), grid.x_min(), 1.0 / grid.dx};
}

double SinhTable::operator()(double x) const {
  const double xt = trusted_x_max();
  const double ax = std::abs(x);
  if (ax > xt) return at(j_trusted) * std::exp(tail_slope() * (ax - xt));
  return std::exp(interp::hermite_at(view(), x));
}

double SinhTable::derivative(double x) const {
  const double xt = trusted_x_max();
  const double ax = std::abs(x);
  if (ax > xt) return std::copysign(tail_slope() * at(j_trusted) * std::exp(tail_slope() * (ax - xt)), x);
  const auto v = view();
  return std::exp(interp::hermite_at(v, x)) * interp::hermite_derivative_at(v, x);
}

void SinhTable::refresh_slopes() {
  logs.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) logs[i] = std::log(values[i]);
  dslope = interp::pchip_dslopes(logs);
}

std::uint64_t SinhTable::fingerprint() const {
  hash::Fnv1a h;
  h.text("sinh");
  h.value(params.d);
  h.value(params.gamma);
  h.value(lambda);
  h.value(level);
  h.value(grid.dx);
  h.value(grid.j_max);
  h.value(j_trusted);
  h.value(pool_fingerprint);
  h.doubles(values);
  return h.digest();
}

double h_tilde(const SinhTable& tbl) { return tbl.at(0) / std::exp(tbl.level * std::log(tbl.params.d)); }

double largest_admissible_abs_x(const chaos::ChaosPool& joint, double lambda, const laplace::GridSpec& grid) {
  if (joint.kind != chaos::PoolKind::joint) throw ContractViolation("sinh: needs a joint pool");
  if (joint.size() < 10) throw ContractViolation("sinh: pool has fewer than 10 samples");
  std::vector<double> e, f;
  auto resolvable = [&](long j) {
    exponents(joint, lambda, grid.x(j), e);
    exponents(joint, lambda, -grid.x(j), f);
    std::nth_element(e.begin(), e.begin() + 9, e.end());
    std::nth_element(f.begin(), f.begin() + 9, f.end());
    return e[9] <= kNegligible && f[9] <= kNegligible;
  };
  if (!resolvable(0)) return -1.0;
  long lo = 0, hi = grid.j_max;
  if (resolvable(hi)) return grid.x(hi);
  // the tenth smallest exponent grows with |x|
  while (hi - lo > 1) {
    const long mid = (lo + hi) / 2;
    (resolvable(mid) ? lo : hi) = mid;
  }
  return grid.x(lo);
}

SinhTable sinh_base_table(const chaos::ChaosPool& joint, const chaos::ChaosParams& params, double lambda,
                          const laplace::GridSpec& grid) {
  if (joint.kind != chaos::PoolKind::joint) throw ContractViolation("sinh_base_table: needs a joint pool");
  if (joint.d != params.d || joint.gamma != params.gamma)
    throw ContractViolation("sinh_base_table: pool and parameters disagree");
  if (grid.j_min != -grid.j_max) throw ContractViolation("sinh_base_table: grid must be symmetric");
  const double adm = largest_admissible_abs_x(joint, lambda, grid);
  if (grid.x_max() > adm + 1e-9 * grid.dx) {
    std::ostringstream os;
    os << "sinh_base_table: |x| up to " << grid.x_max() << " is not resolvable by a pool of " << joint.size()
       << " pairs; largest admissible is " << adm;
    throw laplace::InadmissibleRange(os.str(), adm);
  }
  SinhTable tbl;
  tbl.params = params;
  tbl.lambda = lambda;
  tbl.grid = grid;
  tbl.j_trusted = grid.j_max;
  tbl.pool_fingerprint = joint.fingerprint();
  tbl.values.resize(grid.size());
  const auto half = static_cast<std::size_t>(grid.j_max) + 1;
  std::vector<double> zs(half, 0.0), devs(half, 0.0);
  par::parallel_for(half, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> e;
    for (std::size_t j = lo; j < hi; ++j) {
      const double x = grid.x(static_cast<long>(j));
      exponents(joint, lambda, x, e);
      const PairMoments plus = laplace_of(e);
      exponents(joint, lambda, -x, e);
      const PairMoments minus = laplace_of(e);
      // delta method for the paired difference of the two logs
      std::vector<double> diff(plus.rel.size());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = plus.rel[i] - minus.rel[i];
      const double se = stats::mean_var(diff).std_error();
      const double dev = plus.value - minus.value;
      if (std::min(plus.ess, minus.ess) >= kMinEss) {
        devs[j] = std::abs(dev);
        zs[j] = se > 0.0 ? std::abs(dev) / se : (dev == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
      }
      const double v = 0.5 * (plus.value + minus.value);
      tbl.values[static_cast<std::size_t>(grid.j_max) + j] = v;
      tbl.values[static_cast<std::size_t>(grid.j_max) - j] = v;
    }
  });
  tbl.presym_z = *std::max_element(zs.begin(), zs.end());
  tbl.presym_abs = *std::max_element(devs.begin(), devs.end());
  tbl.refresh_slopes();
  return tbl;
}

SinhIntegrator::SinhIntegrator(int gh_nodes, double trust_tol) : trust_tol_(trust_tol) {
  const quad::Rule r = quad::gauss_hermite(gh_nodes);
  nodes_ = r.nodes;
  logw_.reserve(r.weights.size());
  for (double w : r.weights) logw_.push_back(std::log(w));
}

SinhIntegrator::Result SinhIntegrator::operator()(const SinhTable& f, double x) const {
  // mode of -F(x + z) - z^2/2: root of z + F'(x + z), between -x and 0
  double lo = std::min(-x, 0.0), hi = std::max(-x, 0.0);
  if (hi > lo) {
    for (int it = 0; it < 80 && hi - lo > 1e-13 * (1.0 + std::abs(x)); ++it) {
      const double mid = 0.5 * (lo + hi);
      (mid + f.derivative(x + mid) > 0.0 ? hi : lo) = mid;
    }
  }
  const double z0 = 0.5 * (lo + hi);
  const double y0 = x + z0;
  const double h = f.grid.dx;
  const double fpp = std::max(0.0, (f(y0 + h) + f(y0 - h) - 2.0 * f(y0)) / (h * h));
  const double rho = 1.0 / std::sqrt(1.0 + fpp);
  const std::size_t n = nodes_.size();
  std::vector<double> q(n), base(n), l(n), reads(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = z0 + rho * nodes_[i];
    q[i] = x + z;
    base[i] = logw_[i] + std::log(rho) + 0.5 * nodes_[i] * nodes_[i] - 0.5 * z * z;
    reads[i] = f(q[i]);
  }
  // self-normalised: the rescaled rule integrates the Gaussian density itself
  l = base;
  const double norm = -neg_log_sum_exp(l);
  auto reduce = [&](const std::vector<double>& g) {
    for (std::size_t i = 0; i < n; ++i) l[i] = base[i] - g[i];
    return neg_log_sum_exp(l) + norm;
  };
  Result res{reduce(reads), true};
  const double xt = f.trusted_x_max();
  bool beyond = false;
  for (double v : q) beyond |= std::abs(v) > xt;
  if (beyond) {
    const double gt = f.at(f.j_trusted);
    std::vector<double> glo = reads, ghi = reads;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = std::abs(q[i]);
      if (a > xt) {
        glo[i] = gt;
        ghi[i] = gt * std::exp(f.params.gamma * (a - xt));
      }
    }
    res.trusted = std::expm1(reduce(ghi) - reduce(glo)) <= trust_tol_;
  }
  return res;
}

SinhTable sinh_recursion_step(const SinhTable& tbl, const SinhIntegrator& integ) {
  SinhTable next = tbl;
  next.level = tbl.level + 1;
  next.presym_z = 0.0;
  next.presym_abs = 0.0;
  const std::size_t n = tbl.grid.size();
  std::vector<char> trusted(n, 1);
  const double d = tbl.params.d;
  par::parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto r = integ(tbl, tbl.grid.x(tbl.grid.j_min + static_cast<long>(i)));
      next.values[i] = d * r.value;
      trusted[i] = r.trusted;
    }
  });
  long jt = 0;
  while (jt < tbl.j_trusted) {
    const long j = jt + 1;
    if (!trusted[static_cast<std::size_t>(j - tbl.grid.j_min)] || !trusted[static_cast<std::size_t>(-j - tbl.grid.j_min)])
      break;
    jt = j;
  }
  if (jt < 2) throw laplace::WidenGridError("sinh_recursion_step: trusted range collapsed at level " +
                                            std::to_string(next.level));
  next.j_trusted = jt;
  for (double v : next.values)
    if (!(v > 0.0) || !std::isfinite(v))
      throw laplace::WidenGridError("sinh_recursion_step: non-finite or non-positive value at level " +
                                    std::to_string(next.level));
  next.refresh_slopes();
  return next;
}

SinhChecks check_sinh(const SinhTable& tbl) {
  SinhChecks c;
  const long jt = tbl.j_trusted;
  const double f0 = tbl.at(0);
  double fmax = 0.0;
  for (long j = -jt; j <= jt; ++j) fmax = std::max(fmax, tbl.at(j));
  for (long j = 1; j <= jt; ++j) {
    const double a = tbl.at(j), b = tbl.at(-j);
    c.symmetry = std::max(c.symmetry, std::abs(a - b) / std::max(a, b));
    if (a < f0 || b < f0) c.min_at_zero = false;
  }
  for (long j = -jt + 1; j < jt; ++j) {
    const double sd = (tbl.at(j + 1) + tbl.at(j - 1) - 2.0 * tbl.at(j)) / fmax;
    c.convexity = std::min(c.convexity, sd);
  }
  return c;
}

SinhRun run_sinh_levels(SinhTable level0, const SinhIntegrator& integ, int max_level, double tol, int min_level) {
  SinhRun run;
  run.tables.push_back(std::move(level0));
  run.cauchy.push_back(std::numeric_limits<double>::quiet_NaN());
  while (static_cast<int>(run.tables.size()) <= max_level) {
    run.tables.push_back(sinh_recursion_step(run.tables.back(), integ));
    const double a = h_tilde(run.tables.back());
    const double b = h_tilde(run.tables[run.tables.size() - 2]);
    run.cauchy.push_back(std::abs(a - b) / a);
    const int k = static_cast<int>(run.tables.size()) - 1;
    if (k >= min_level && run.cauchy.back() < tol) {
      run.converged = true;
      break;
    }
  }
  return run;
}

double sinh_alpha_fit(std::span<const SinhTable> tables, int count) {
  if (count < 2 || tables.size() < static_cast<std::size_t>(count))
    throw ContractViolation("sinh_alpha_fit: not enough levels");
  std::vector<double> x, y;
  for (std::size_t i = tables.size() - static_cast<std::size_t>(count); i < tables.size(); ++i) {
    x.push_back(std::log(tables[i].t_level()));
    y.push_back(std::log(tables[i].at(0)));
  }
  return stats::ols_slope(x, y);
}

void save_sinh_table(const SinhTable& tbl, std::ostream& os) {
  os.write(kMagic, sizeof kMagic);
  io::put_i64(os, tbl.params.d);
  io::put_f64(os, tbl.params.gamma);
  io::put_f64(os, tbl.lambda);
  io::put_i64(os, tbl.level);
  io::put_f64(os, tbl.grid.dx);
  io::put_i64(os, tbl.grid.steps);
  io::put_i64(os, tbl.grid.j_max);
  io::put_i64(os, tbl.j_trusted);
  io::put_u64(os, tbl.pool_fingerprint);
  io::put_f64(os, tbl.presym_z);
  io::put_f64(os, tbl.presym_abs);
  io::put_u64(os, tbl.values.size());
  io::put_f64_array(os, tbl.values);
  if (!os) throw std::runtime_error("save_sinh_table: write failed");
}

SinhTable load_sinh_table(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("load_sinh_table: not a sinh table file");
  SinhTable t;
  const auto d = static_cast<int>(io::get_i64(is));
  const double gamma = io::get_f64(is);
  t.params = chaos::ChaosParams::make(d, gamma);
  t.lambda = io::get_f64(is);
  t.level = static_cast<int>(io::get_i64(is));
  t.grid.dx = io::get_f64(is);
  t.grid.steps = static_cast<int>(io::get_i64(is));
  t.grid.j_max = io::get_i64(is);
  t.grid.j_min = -t.grid.j_max;
  t.j_trusted = io::get_i64(is);
  t.pool_fingerprint = io::get_u64(is);
  t.presym_z = io::get_f64(is);
  t.presym_abs = io::get_f64(is);
  const auto n = io::get_u64(is);
  if (n != t.grid.size()) throw std::runtime_error("load_sinh_table: size mismatch");
  t.values = io::get_f64_array(is, n);
  t.refresh_slopes();
  return t;
}

}  // namespace brwlab::sinh
