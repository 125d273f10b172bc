#include "brwlab/chaos.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "brwlab/hash.hpp"
#include "brwlab/parallel.hpp"
#include "brwlab/rng.hpp"
#include "brwlab/simd.hpp"
#include "io_detail.hpp"

namespace brwlab::chaos {

ChaosParams ChaosParams::make(int d, double gamma) {
  if (d < 2) throw std::invalid_argument("ChaosParams: d must be >= 2");
  const double gc = std::sqrt(2.0 * std::log(static_cast<double>(d)));
  if (!(gamma > 0.0 && gamma < gc))
    throw std::invalid_argument("ChaosParams: gamma must lie in (0, " + std::to_string(gc) + ")");
  ChaosParams c;
  c.d = d;
  c.gamma = gamma;
  c.kappa = 2.0 * std::log(static_cast<double>(d)) / (gamma * gamma);
  c.alpha = c.kappa / (c.kappa + 1.0);
  c.p = d * std::exp(gamma * gamma / 2.0);
  if (std::abs(std::pow(c.p, c.alpha) - d) > 1e-12 * d)
    throw std::logic_error("ChaosParams: p^alpha != d");
  return c;
}

double ChaosParams::shift() const { return std::log(p) / gamma; }

std::string_view to_string(PoolKind k) {
  switch (k) {
    case PoolKind::balanced: return "balanced";
    case PoolKind::standard: return "standard";
    case PoolKind::joint: return "joint";
  }
  return "balanced";
}

PoolKind parse_pool_kind(std::string_view s) {
  if (s == "balanced") return PoolKind::balanced;
  if (s == "standard") return PoolKind::standard;
  if (s == "joint") return PoolKind::joint;
  throw std::invalid_argument("unknown pool kind '" + std::string(s) + "'");
}

std::uint64_t ChaosPool::fingerprint() const {
  hash::Fnv1a h;
  h.value(static_cast<int>(kind));
  h.value(d);
  h.value(gamma);
  h.value(seed);
  h.value(refresh_count);
  h.doubles(samples);
  h.doubles(minus);
  return h.digest();
}

double partial_mass(const field::GenerationField& f, double gamma) {
  const double n = f.generation;
  const double sum = simd::kernels().sum_exp_affine(f.values.data(), f.values.size(), gamma,
                                                    -gamma * gamma * n / 2.0);
  return sum / static_cast<double>(f.values.size());
}

ChaosPool initial_pool(PoolKind kind, const ChaosParams& params, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ContractViolation("initial_pool: empty pool");
  ChaosPool pool{kind, params.d, params.gamma, seed, 0, std::vector<double>(n, 1.0), {}};
  if (kind == PoolKind::joint) pool.minus.assign(n, 1.0);
  return pool;
}

namespace {

constexpr double kTiny = 1e-300;

// (1/d) sum_i e^{gamma y_i - gamma^2/2} m_i, falling back to log space when
// anything underflows.
double combine(const double* y, const double* m, int d, double gamma) {
  const double g2 = gamma * gamma / 2.0;
  double s = 0.0;
  bool tiny = false;
  for (int i = 0; i < d; ++i) {
    tiny |= m[i] < kTiny;
    s += std::exp(gamma * y[i] - g2) * m[i];
  }
  s /= d;
  if (!tiny && s >= kTiny) return s;
  double lmax = -std::numeric_limits<double>::infinity();
  double l[64];
  for (int i = 0; i < d; ++i) {
    l[i] = gamma * y[i] - g2 + std::log(std::max(m[i], std::numeric_limits<double>::denorm_min()));
    lmax = std::max(lmax, l[i]);
  }
  double acc = 0.0;
  for (int i = 0; i < d; ++i) acc += std::exp(l[i] - lmax);
  const double out = std::exp(lmax + std::log(acc / d));
  return std::max(out, std::numeric_limits<double>::denorm_min());
}

}  // namespace

ChaosPool pool_refresh(const ChaosPool& pool, const ChaosParams& params) {
  if (pool.samples.empty()) throw ContractViolation("pool_refresh: empty pool");
  if (params.d > 64) throw std::invalid_argument("pool_refresh: d > 64 unsupported");
  ChaosPool out = pool;
  out.refresh_count = pool.refresh_count + 1;
  const std::size_t n = pool.size();
  const int d = params.d;
  const auto sweep = static_cast<std::uint64_t>(out.refresh_count);
  par::parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    double y[64], mp[64], mm[64], ny[64];
    for (std::size_t j = lo; j < hi; ++j) {
      rng::Stream rs(pool.seed, sweep, j);
      std::span<double> block(y, static_cast<std::size_t>(d));
      if (pool.kind == PoolKind::balanced) field::balanced_block(rs, block);
      else field::standard_block(rs, block);
      for (int i = 0; i < d; ++i) {
        const std::size_t k = rs.below(n);
        mp[i] = pool.samples[k];
        if (pool.kind == PoolKind::joint) mm[i] = pool.minus[k];
      }
      out.samples[j] = combine(y, mp, d, params.gamma);
      if (pool.kind == PoolKind::joint) {
        for (int i = 0; i < d; ++i) ny[i] = -y[i];
        out.minus[j] = combine(ny, mm, d, params.gamma);
      }
    }
  });
  return out;
}

ChaosPool normalize_mean(ChaosPool pool) {
  auto rescale = [](std::vector<double>& xs) {
    stats::CompensatedSum s;
    for (double x : xs) s.add(x);
    const double m = s.value() / static_cast<double>(xs.size());
    for (double& x : xs) x /= m;
  };
  rescale(pool.samples);
  if (pool.kind == PoolKind::joint) rescale(pool.minus);
  return pool;
}

ChaosPool build_pool(PoolKind kind, const ChaosParams& params, std::size_t n, std::uint64_t seed,
                     int burn_in, int max_extra, BuildReport* report) {
  ChaosPool pool = initial_pool(kind, params, n, seed);
  for (int r = 0; r < burn_in; ++r) pool = normalize_mean(pool_refresh(pool, params));
  BuildReport rep;
  rep.ks_threshold = 2.0 / std::sqrt(static_cast<double>(n));
  for (int extra = 0; extra <= max_extra; extra += 5) {
    std::vector<double> before = pool.samples;
    ChaosPool next = pool;
    for (int r = 0; r < 5; ++r) next = normalize_mean(pool_refresh(next, params));
    rep.ks_last = stats::ks_statistic(std::move(before), next.samples);
    pool = std::move(next);
    if (rep.ks_last < rep.ks_threshold) {
      rep.converged = true;
      break;
    }
  }
  // publish one unnormalised sweep: its samples are conditionally i.i.d. given
  // a mean-one predecessor
  pool = pool_refresh(pool, params);
  rep.sweeps = pool.refresh_count;
  if (report) *report = rep;
  return pool;
}

bool MeanCheck::ok() const { return std::abs(mean - 1.0) <= tolerance; }

MeanCheck mean_check(const ChaosPool& pool) {
  std::vector<double> xs = pool.samples;
  if (pool.kind == PoolKind::joint)
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = 0.5 * (xs[i] + pool.minus[i]);
  const auto mv = stats::mean_var(xs);
  MeanCheck c;
  c.mean = mv.mean;
  c.sd = std::sqrt(mv.variance);
  c.tolerance = 4.0 * c.sd / std::sqrt(static_cast<double>(xs.size()));
  return c;
}

stats::Estimate negative_moment(const ChaosPool& pool, double theta, int min_refresh) {
  if (!(theta > 0.0)) throw ContractViolation("negative_moment: theta must be positive");
  if (pool.refresh_count < min_refresh) throw ContractViolation("negative_moment: pool has not been burned in");
  std::vector<double> xs(pool.size());
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = std::pow(pool.samples[i], -theta);
  return stats::jackknife_mean(xs);
}

SmallBall small_ball_prob(const ChaosPool& pool, double s) {
  if (!(s > 0.0)) throw ContractViolation("small_ball_prob: s must be positive");
  SmallBall b;
  b.s = s;
  b.count = static_cast<std::size_t>(
      std::count_if(pool.samples.begin(), pool.samples.end(), [s](double m) { return m <= s; }));
  b.prob = static_cast<double>(b.count) / static_cast<double>(pool.size());
  b.ci = stats::wilson_interval(b.count, pool.size());
  return b;
}

SmallBallFit small_ball_fit(const ChaosPool& pool, std::span<const double> s_values, std::size_t min_count) {
  SmallBallFit fit;
  std::vector<double> x, y;
  for (double s : s_values) {
    const SmallBall b = small_ball_prob(pool, s);
    if (b.count < min_count || b.prob >= 1.0) continue;
    fit.points.push_back(b);
    x.push_back(std::log(1.0 / s));
    y.push_back(std::log(-std::log(b.prob)));
  }
  fit.resolved = x.size() >= 2;
  if (fit.resolved) fit.slope = stats::ols_slope(x, y);
  return fit;
}

std::vector<double> decomposed_standard_sample(const ChaosPool& balanced, const ChaosParams& params,
                                               std::size_t n, std::uint64_t seed) {
  if (balanced.kind != PoolKind::balanced) throw ContractViolation("decomposition needs a balanced pool");
  const double var = 1.0 / (params.d - 1);
  const double g = params.gamma;
  rng::Stream rs(seed, 0xdec0);
  std::vector<double> out(n);
  for (auto& v : out) {
    const double x = std::sqrt(var) * rs.normal();
    v = std::exp(g * x - g * g * var / 2.0) * balanced.samples[rs.below(balanced.size())];
  }
  return out;
}

namespace {
constexpr char kPoolMagic[8] = {'B', 'R', 'W', 'P', 'O', 'O', 'L', '1'};
}

void save_pool(const ChaosPool& pool, std::ostream& os) {
  os.write(kPoolMagic, sizeof kPoolMagic);
  io::put_i64(os, static_cast<int>(pool.kind));
  io::put_i64(os, pool.d);
  io::put_f64(os, pool.gamma);
  io::put_u64(os, pool.size());
  io::put_i64(os, pool.refresh_count);
  io::put_u64(os, pool.seed);
  io::put_f64_array(os, pool.samples);
  if (pool.kind == PoolKind::joint) io::put_f64_array(os, pool.minus);
  if (!os) throw std::runtime_error("save_pool: write failed");
}

ChaosPool load_pool(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kPoolMagic, sizeof magic) != 0)
    throw std::runtime_error("load_pool: not a pool checkpoint");
  ChaosPool pool;
  const auto kind = io::get_i64(is);
  if (kind < 0 || kind > 2) throw std::runtime_error("load_pool: bad kind");
  pool.kind = static_cast<PoolKind>(kind);
  pool.d = static_cast<int>(io::get_i64(is));
  pool.gamma = io::get_f64(is);
  const auto n = io::get_u64(is);
  pool.refresh_count = static_cast<int>(io::get_i64(is));
  pool.seed = io::get_u64(is);
  pool.samples = io::get_f64_array(is, n);
  if (pool.kind == PoolKind::joint) pool.minus = io::get_f64_array(is, n);
  return pool;
}

}  // namespace brwlab::chaos
