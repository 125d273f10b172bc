#include "brwlab/field.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "brwlab/stats.hpp"
#include "io_detail.hpp"

namespace brwlab::field {

std::string_view to_string(FieldKind k) { return k == FieldKind::standard ? "standard" : "balanced"; }

FieldKind parse_kind(std::string_view s) {
  if (s == "standard") return FieldKind::standard;
  if (s == "balanced") return FieldKind::balanced;
  throw std::invalid_argument("unknown field kind '" + std::string(s) + "'");
}

void standard_block(rng::Stream& rs, std::span<double> out) {
  for (double& x : out) x = rs.normal();
}

void balanced_block_from(std::span<const double> xi, std::span<double> out) {
  const std::size_t d = out.size();
  const double c = std::sqrt(static_cast<double>(d) / static_cast<double>(d - 1));
  double mean = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = c * xi[j];
    mean += out[j];
  }
  mean /= static_cast<double>(d);
  double drift = 0.0;
  for (double& y : out) {
    y -= mean;
    drift += y;
  }
  // second pass removes the rounding left by the first
  drift /= static_cast<double>(d);
  for (double& y : out) y -= drift;
}

void balanced_block(rng::Stream& rs, std::span<double> out) {
  double xi[64];
  std::vector<double> big;
  double* z = xi;
  if (out.size() > 64) {
    big.resize(out.size());
    z = big.data();
  }
  for (std::size_t j = 0; j < out.size(); ++j) z[j] = rs.normal();
  balanced_block_from({z, out.size()}, out);
}

GenerationField root_field(const tree::TreeShape& shape, FieldKind kind, std::uint64_t seed) {
  return GenerationField{shape, 0, kind, seed, {0.0}, {}};
}

GenerationField extend_field(const GenerationField& f) {
  if (f.generation >= f.shape.depth()) throw std::out_of_range("extend_field: field is at maximum depth");
  const auto d = static_cast<std::size_t>(f.shape.d());
  const int g = f.generation + 1;
  GenerationField out{f.shape, g, f.kind, f.seed, {}, {}};
  out.values.resize(f.values.size() * d);
  out.increments.resize(out.values.size());
  for (std::size_t p = 0; p < f.values.size(); ++p) {
    rng::Stream rs(f.seed, static_cast<std::uint64_t>(g), p);
    std::span<double> block(out.increments.data() + p * d, d);
    if (f.kind == FieldKind::balanced) balanced_block(rs, block);
    else standard_block(rs, block);
    for (std::size_t j = 0; j < d; ++j) out.values[p * d + j] = f.values[p] + block[j];
  }
  return out;
}

GenerationField sample_field(FieldKind kind, const tree::TreeShape& shape, int n, std::uint64_t seed) {
  if (n < 0 || n > shape.depth()) throw std::out_of_range("sample_field: generation outside the tree");
  GenerationField f = root_field(shape, kind, seed);
  while (f.generation < n) f = extend_field(f);
  return f;
}

GenerationField sample_standard_field(const tree::TreeShape& shape, int n, std::uint64_t seed) {
  return sample_field(FieldKind::standard, shape, n, seed);
}

GenerationField sample_balanced_field(const tree::TreeShape& shape, int n, std::uint64_t seed) {
  return sample_field(FieldKind::balanced, shape, n, seed);
}

std::vector<double> restrict_to_parents(const GenerationField& f) {
  if (f.generation == 0) throw std::out_of_range("restrict_to_parents: root has no parent generation");
  const auto d = static_cast<std::size_t>(f.shape.d());
  std::vector<double> up(f.values.size() / d);
  for (std::size_t p = 0; p < up.size(); ++p) {
    if (f.kind == FieldKind::balanced) {
      stats::CompensatedSum s;
      for (std::size_t j = 0; j < d; ++j) s.add(f.values[p * d + j]);
      up[p] = s.value() / static_cast<double>(d);
    } else {
      up[p] = f.values[p * d] - f.increments[p * d];
    }
  }
  return up;
}

double max_block_sum(const GenerationField& f) {
  const auto d = static_cast<std::size_t>(f.shape.d());
  double worst = 0.0;
  for (std::size_t p = 0; p * d < f.increments.size(); ++p) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += f.increments[p * d + j];
    worst = std::max(worst, std::abs(s));
  }
  return worst;
}

double cov_oracle(FieldKind kind, int n, int dist, int d) {
  if (n < 0 || dist < 0 || dist > 2 * n) throw std::out_of_range("cov_oracle: need 0 <= dist <= 2n");
  if (d < 2) throw std::out_of_range("cov_oracle: need d >= 2");
  if (dist % 2 != 0) throw ContractViolation("cov_oracle: same-generation vertices are at even distance");
  const double base = static_cast<double>(n) - dist / 2;
  return kind == FieldKind::balanced && dist > 0 ? base - 1.0 / (d - 1) : base;
}

namespace {
constexpr char kFieldMagic[8] = {'B', 'R', 'W', 'F', 'L', 'D', '0', '1'};
}

void save_field(const GenerationField& f, std::ostream& os) {
  os.write(kFieldMagic, sizeof kFieldMagic);
  io::put_i64(os, f.shape.d());
  io::put_i64(os, f.generation);
  io::put_i64(os, f.kind == FieldKind::balanced ? 1 : 0);
  io::put_u64(os, f.seed);
  io::put_f64_array(os, f.values);
  if (!os) throw std::runtime_error("save_field: write failed");
}

GenerationField load_field(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kFieldMagic, sizeof magic) != 0)
    throw std::runtime_error("load_field: not a field dump");
  const auto d = static_cast<int>(io::get_i64(is));
  const auto g = static_cast<int>(io::get_i64(is));
  const auto kind = io::get_i64(is) == 1 ? FieldKind::balanced : FieldKind::standard;
  const auto seed = io::get_u64(is);
  tree::TreeShape shape(d, g);
  GenerationField f{shape, g, kind, seed, {}, {}};
  f.values = io::get_f64_array(is, shape.generation_size(g));
  return f;
}

double CovarianceCell::z() const {
  return std_error > 0.0 ? (estimate - oracle) / std_error : (estimate == oracle ? 0.0 : HUGE_VAL);
}

std::vector<CovarianceCell> covariance_sweep(FieldKind kind, int d, int max_n, std::size_t replicas,
                                             std::uint64_t seed) {
  if (replicas < 2) throw std::invalid_argument("covariance_sweep: need at least two replicas");
  const tree::TreeShape shape(d, max_n);
  struct Acc {
    int n, dist;
    std::uint64_t partner;
    double sx = 0, sy = 0, sxy = 0, sxy2 = 0;
  };
  std::vector<Acc> acc;
  for (int n = 0; n <= max_n; ++n)
    for (int dist = 0; dist <= 2 * n; dist += 2)
      acc.push_back({n, dist, dist == 0 ? 0 : tree::partner_at_depth(shape, n, dist / 2)});
  for (std::size_t r = 0; r < replicas; ++r) {
    GenerationField f = root_field(shape, kind, rng::derive(seed, r));
    for (auto& a : acc) {
      while (f.generation < a.n) f = extend_field(f);
      const double x = f.values[0], y = f.values[a.partner];
      a.sx += x;
      a.sy += y;
      a.sxy += x * y;
      a.sxy2 += x * y * x * y;
    }
  }
  const double R = static_cast<double>(replicas);
  std::vector<CovarianceCell> out;
  for (const auto& a : acc) {
    const double mxy = a.sxy / R;
    const double var_xy = std::max(0.0, (a.sxy2 / R - mxy * mxy) * R / (R - 1.0));
    CovarianceCell c;
    c.kind = kind;
    c.d = d;
    c.n = a.n;
    c.dist = a.dist;
    c.estimate = (a.sxy - a.sx * a.sy / R) / (R - 1.0);
    c.std_error = std::sqrt(var_xy / R);
    c.oracle = cov_oracle(kind, a.n, a.dist, d);
    out.push_back(c);
  }
  return out;
}

}  // namespace brwlab::field
