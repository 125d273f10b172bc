#include "brwlab/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "brwlab/field.hpp"
#include "brwlab/hash.hpp"
#include "brwlab/io.hpp"
#include "brwlab/parallel.hpp"
#include "brwlab/rng.hpp"
#include "brwlab/tilted.hpp"
#include "json.hpp"

namespace brwlab::experiments {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using config::ExperimentConfig;

namespace {

std::string hex(std::uint64_t v) { return hash::to_hex(v); }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// One run directory: CSV outputs, schema.json, manifest.json.
class Run {
 public:
  Run(const ExperimentConfig& cfg, std::string command)
      : cfg_(cfg), command_(std::move(command)), dir_(fs::path(cfg.output_dir) / command_), started_(utc_now()) {
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }

  io::CsvWriter csv(const io::CsvSchema& schema) {
    schemas_.push_back(schema);
    outputs_.push_back(schema.file);
    return io::CsvWriter(dir_ / schema.file, schema);
  }
  void output(const std::string& name) { outputs_.push_back(name); }
  json& fingerprints() { return fingerprints_; }
  json& results() { return results_; }

  CommandResult finish(std::vector<Gate> gates, std::ostream& log) {
    CommandResult res;
    res.run_dir = dir_;
    res.gates = std::move(gates);
    for (const auto& g : res.gates)
      if (!g.passed && !g.warn_only) res.exit_code = kGateFailed;
    io::write_schema(dir_, schemas_);

    json m;
    m["command"] = command_;
    m["started_utc"] = started_;
    m["finished_utc"] = utc_now();
    m["input_hash"] = io::git_blob_hash(cfg_.source);
    json c;
    for (const auto& [k, v] : config::resolved(cfg_)) c[k] = v;
    m["config"] = c;
    m["seed"] = cfg_.seed;
    m["threads"] = par::threads();
    m["fingerprints"] = fingerprints_;
    json outs;
    for (const auto& f : outputs_) outs[f] = io::git_blob_hash(io::read_file(dir_ / f));
    outs["schema.json"] = io::git_blob_hash(io::read_file(dir_ / "schema.json"));
    m["outputs"] = outs;
    m["results"] = results_;
    json gs = json::array();
    for (const auto& g : res.gates) {
      gs.push_back({{"name", g.name},
                    {"value", g.value},
                    {"threshold", g.threshold},
                    {"passed", g.passed},
                    {"warn_only", g.warn_only},
                    {"detail", g.detail}});
      log << (g.passed ? "  pass " : (g.warn_only ? "  WARN " : "  FAIL ")) << g.name << "  value=" << g.value
          << " threshold=" << g.threshold << (g.detail.empty() ? "" : "  (" + g.detail + ")") << '\n';
    }
    m["gates"] = gs;
    m["exit_code"] = res.exit_code;
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << m.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write manifest.json");
    log << command_ << ": wrote " << dir_.string() << " (exit " << res.exit_code << ")\n";
    return res;
  }

 private:
  const ExperimentConfig& cfg_;
  std::string command_;
  fs::path dir_;
  std::string started_;
  std::vector<io::CsvSchema> schemas_;
  std::vector<std::string> outputs_;
  json fingerprints_ = json::object();
  json results_ = json::object();
};

Gate gate_le(std::string name, double value, double threshold, std::string detail = {}) {
  return {std::move(name), value, threshold, value <= threshold, false, std::move(detail)};
}
Gate gate_ge(std::string name, double value, double threshold, std::string detail = {}) {
  return {std::move(name), value, threshold, value >= threshold, false, std::move(detail)};
}
Gate gate_true(std::string name, bool ok, std::string detail = {}) {
  return {std::move(name), ok ? 1.0 : 0.0, 1.0, ok, false, std::move(detail)};
}

fs::path cache_dir(const ExperimentConfig& cfg) {
  fs::path p = fs::path(cfg.output_dir) / "cache";
  fs::create_directories(p);
  return p;
}

chaos::ChaosParams params_of(const ExperimentConfig& cfg) { return chaos::ChaosParams::make(cfg.d, cfg.gamma); }

laplace::GridSpec grid_of(const ExperimentConfig& cfg) {
  return laplace::GridSpec::make(params_of(cfg), cfg.half_width, cfg.spacing);
}

std::string pool_key(const ExperimentConfig& cfg, chaos::PoolKind kind) {
  hash::Fnv1a h;
  h.text(chaos::to_string(kind));
  h.value(cfg.d);
  h.value(cfg.gamma);
  h.value(cfg.pool_size);
  h.value(cfg.pool_seed);
  h.value(cfg.pool_burn_in);
  h.value(cfg.pool_max_extra);
  return h.hex();
}

chaos::ChaosPool build_and_cache(const ExperimentConfig& cfg, chaos::PoolKind kind, std::ostream& log,
                                 chaos::BuildReport* report) {
  const auto params = params_of(cfg);
  log << "building " << chaos::to_string(kind) << " pool (N=" << cfg.pool_size << ")\n";
  chaos::BuildReport rep;
  chaos::ChaosPool pool =
      chaos::build_pool(kind, params, cfg.pool_size, cfg.pool_seed, cfg.pool_burn_in, cfg.pool_max_extra, &rep);
  if (report) *report = rep;
  const fs::path dir = cache_dir(cfg);
  {
    std::ofstream out(dir / ("pool_" + pool_key(cfg, kind) + ".bin"), std::ios::binary);
    chaos::save_pool(pool, out);
  }
  json meta{{"sweeps", rep.sweeps}, {"converged", rep.converged}, {"ks_last", rep.ks_last},
            {"ks_threshold", rep.ks_threshold}, {"fingerprint", hex(pool.fingerprint())}};
  std::ofstream(dir / ("pool_" + pool_key(cfg, kind) + ".json")) << meta.dump(2) << '\n';
  return pool;
}

// Loads a saved run of tables if every file is present and built from `pool_fp`.
std::optional<std::vector<laplace::LambdaTable>> load_tables(const fs::path& dir, std::size_t count,
                                                             std::uint64_t pool_fp) {
  std::vector<laplace::LambdaTable> out;
  for (std::size_t k = 0; k < count; ++k) {
    std::ifstream in(dir / ("level_" + std::to_string(k) + ".tbl"), std::ios::binary);
    if (!in) return std::nullopt;
    out.push_back(laplace::load_table(in));
    if (out.back().pool_fingerprint != pool_fp || out.back().level != static_cast<int>(k)) return std::nullopt;
  }
  return out;
}

json h_sidecar(const laplace::LambdaTable& t) {
  json j;
  j["level"] = t.level;
  j["d"] = t.params.d;
  j["gamma"] = t.params.gamma;
  j["lambda_anchor"] = t.lambda;
  j["table_fingerprint"] = hex(t.fingerprint());
  j["pool_fingerprint"] = hex(t.pool_fingerprint);
  json ls = json::array(), hs = json::array();
  for (double l : laplace::lambda_samples(t, 64)) {
    ls.push_back(l);
    hs.push_back(laplace::h_estimate(t, l));
  }
  j["lambda"] = ls;
  j["h"] = hs;
  return j;
}

std::string kind_name(field::FieldKind k) { return std::string(field::to_string(k)); }

}  // namespace

// --- pipeline ------------------------------------------------------------

chaos::ChaosPool obtain_pool(const ExperimentConfig& cfg, chaos::PoolKind kind, std::ostream& log,
                             chaos::BuildReport* report) {
  const fs::path dir = cache_dir(cfg);
  const fs::path file = dir / ("pool_" + pool_key(cfg, kind) + ".bin");
  const fs::path meta = dir / ("pool_" + pool_key(cfg, kind) + ".json");
  if (fs::exists(file) && fs::exists(meta)) {
    std::ifstream in(file, std::ios::binary);
    chaos::ChaosPool pool = chaos::load_pool(in);
    const json m = json::parse(io::read_file(meta));
    if (pool.kind == kind && pool.d == cfg.d && pool.gamma == cfg.gamma && pool.size() == cfg.pool_size &&
        m.value("fingerprint", "") == hex(pool.fingerprint())) {
      if (report) {
        report->sweeps = m["sweeps"];
        report->converged = m["converged"];
        report->ks_last = m["ks_last"];
        report->ks_threshold = m["ks_threshold"];
      }
      log << "loaded cached " << chaos::to_string(kind) << " pool " << hex(pool.fingerprint()) << '\n';
      return pool;
    }
    log << "cached pool does not match the configuration; rebuilding\n";
  }
  return build_and_cache(cfg, kind, log, report);
}

LevelArtifacts obtain_levels(const ExperimentConfig& cfg, std::ostream& log) {
  LevelArtifacts art;
  art.params = params_of(cfg);
  const chaos::ChaosPool pool = obtain_pool(cfg, chaos::PoolKind::balanced, log);
  art.pool_fingerprint = pool.fingerprint();
  hash::Fnv1a h;
  h.value(art.pool_fingerprint);
  h.value(cfg.half_width);
  h.value(cfg.spacing);
  h.value(cfg.max_level);
  h.value(cfg.min_level);
  h.value(cfg.level_tol);
  const fs::path dir = cache_dir(cfg) / ("levels_" + h.hex());
  const fs::path meta = dir / "meta.json";
  if (fs::exists(meta)) {
    const json m = json::parse(io::read_file(meta));
    auto tables = load_tables(dir, m["levels"].get<std::size_t>(), art.pool_fingerprint);
    std::ifstream bin(dir / "base.tbl", std::ios::binary);
    if (tables && bin) {
      art.base = laplace::load_table(bin);
      art.run.tables = std::move(*tables);
      for (const auto& c : m["cauchy"]) art.run.cauchy.push_back(c.is_null() ? std::nan("") : c.get<double>());
      art.run.converged = m["converged"];
      art.run.trust_exhausted = m["trust_exhausted"];
      art.run.stop_reason = m["stop_reason"];
      art.solve.sweeps = m["solve_sweeps"];
      art.solve.residual = m["solve_residual"];
      art.solve.converged = m["solve_converged"];
      log << "loaded " << art.run.tables.size() << " cached level tables\n";
      return art;
    }
  }
  const laplace::GridSpec grid = grid_of(cfg);
  const double adm = laplace::largest_admissible_x(pool, 1.0, grid);
  art.base = laplace::base_table(pool, art.params, 1.0, grid.truncated(adm));
  log << "base table on x <= " << art.base.trusted_x_max() << "; solving for the self-consistent level 0\n";
  const laplace::BlockIntegrator integ(art.params);
  laplace::LambdaTable g0 = laplace::solve_self_consistent(art.base, grid, integ, 1e-11, 3000, &art.solve);
  log << "level 0: " << art.solve.sweeps << " sweeps, residual " << art.solve.residual << '\n';
  art.run = laplace::run_levels(std::move(g0), integ, cfg.max_level, cfg.level_tol, cfg.min_level);
  log << "levels 0.." << art.run.tables.size() - 1 << (art.run.converged ? " (converged)" : " (not converged)") << '\n';

  fs::create_directories(dir);
  for (const auto& t : art.run.tables) {
    std::ofstream out(dir / ("level_" + std::to_string(t.level) + ".tbl"), std::ios::binary);
    laplace::save_table(t, out);
  }
  {
    std::ofstream out(dir / "base.tbl", std::ios::binary);
    laplace::save_table(art.base, out);
  }
  json m;
  m["levels"] = art.run.tables.size();
  json c = json::array();
  for (double x : art.run.cauchy) c.push_back(std::isnan(x) ? json() : json(x));
  m["cauchy"] = c;
  m["converged"] = art.run.converged;
  m["trust_exhausted"] = art.run.trust_exhausted;
  m["stop_reason"] = art.run.stop_reason;
  m["solve_sweeps"] = art.solve.sweeps;
  m["solve_residual"] = art.solve.residual;
  m["solve_converged"] = art.solve.converged;
  std::ofstream(meta) << m.dump(2) << '\n';
  return art;
}

SinhArtifacts obtain_sinh(const ExperimentConfig& cfg, std::ostream& log) {
  SinhArtifacts art;
  const auto params = params_of(cfg);
  const chaos::ChaosPool pool = obtain_pool(cfg, chaos::PoolKind::joint, log);
  art.pool_fingerprint = pool.fingerprint();
  hash::Fnv1a h;
  h.value(art.pool_fingerprint);
  h.value(cfg.half_width);
  h.value(cfg.spacing);
  h.value(cfg.max_level);
  h.value(cfg.min_level);
  h.value(cfg.level_tol);
  const fs::path dir = cache_dir(cfg) / ("sinh_" + h.hex());
  const fs::path meta = dir / "meta.json";
  if (fs::exists(meta)) {
    const json m = json::parse(io::read_file(meta));
    bool ok = true;
    for (std::size_t k = 0; ok && k < m["levels"].get<std::size_t>(); ++k) {
      std::ifstream in(dir / ("level_" + std::to_string(k) + ".snh"), std::ios::binary);
      if (!in) {
        ok = false;
        break;
      }
      art.run.tables.push_back(sinh::load_sinh_table(in));
      ok = art.run.tables.back().pool_fingerprint == art.pool_fingerprint;
    }
    if (ok) {
      for (const auto& c : m["cauchy"]) art.run.cauchy.push_back(c.is_null() ? std::nan("") : c.get<double>());
      art.run.converged = m["converged"];
      log << "loaded " << art.run.tables.size() << " cached sinh tables\n";
      return art;
    }
    art.run = {};
  }
  const laplace::GridSpec grid = grid_of(cfg);
  const double adm = sinh::largest_admissible_abs_x(pool, 1.0, grid);
  sinh::SinhTable base = sinh::sinh_base_table(pool, params, 1.0, sinh::symmetric_truncated(grid, adm));
  log << "sinh base table on |x| <= " << base.trusted_x_max() << '\n';
  art.run = sinh::run_sinh_levels(std::move(base), sinh::SinhIntegrator(), cfg.max_level, cfg.level_tol,
                                  cfg.min_level);
  fs::create_directories(dir);
  for (const auto& t : art.run.tables) {
    std::ofstream out(dir / ("level_" + std::to_string(t.level) + ".snh"), std::ios::binary);
    sinh::save_sinh_table(t, out);
  }
  json m;
  m["levels"] = art.run.tables.size();
  json c = json::array();
  for (double x : art.run.cauchy) c.push_back(std::isnan(x) ? json() : json(x));
  m["cauchy"] = c;
  m["converged"] = art.run.converged;
  std::ofstream(meta) << m.dump(2) << '\n';
  return art;
}

void write_certificate(const Certificate& c, const fs::path& path) {
  json j{{"lambda", c.lambda},           {"curvature", c.curvature}, {"noise_floor", c.noise_floor},
         {"certified", c.certified},     {"at_edge", c.at_edge},     {"level", c.level},
         {"table_fingerprint", hex(c.table_fingerprint)}, {"d", c.d}, {"gamma", c.gamma}};
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

Certificate read_certificate(const fs::path& path) {
  if (!fs::exists(path)) throw DependencyError("no lambda* certificate at " + path.string() + " (run scaling-report)");
  const json j = json::parse(io::read_file(path));
  Certificate c;
  c.lambda = j.at("lambda");
  c.curvature = j.at("curvature");
  c.noise_floor = j.at("noise_floor");
  c.certified = j.at("certified");
  c.at_edge = j.at("at_edge");
  c.level = j.at("level");
  c.table_fingerprint = std::stoull(j.at("table_fingerprint").get<std::string>(), nullptr, 16);
  c.d = j.at("d");
  c.gamma = j.at("gamma");
  return c;
}

// --- commands ------------------------------------------------------------

CommandResult cmd_covariance_check(const ExperimentConfig& cfg, std::ostream& log) {
  Run run(cfg, "covariance-check");
  io::CsvSchema schema{"covariance.csv",
                       "Empirical Cov(A_0, A_w) of generation-n vertices at graph distance dist against the closed form",
                       {{"kind", "standard or balanced"},
                        {"d", "branching number"},
                        {"n", "generation"},
                        {"dist", "graph distance between the two vertices"},
                        {"estimate", "sample covariance over the replicas"},
                        {"std_error", "standard error of the estimate"},
                        {"oracle", "closed-form covariance"},
                        {"z", "(estimate - oracle) / std_error"}}};
  auto csv = run.csv(schema);
  double worst = 0.0;
  for (int d : cfg.cov_d)
    for (auto kind : {field::FieldKind::standard, field::FieldKind::balanced}) {
      log << "covariance sweep d=" << d << " " << field::to_string(kind) << '\n';
      const auto cells = field::covariance_sweep(kind, d, cfg.cov_max_n, cfg.cov_replicas,
                                                 rng::derive(cfg.seed, static_cast<std::uint64_t>(d),
                                                             kind == field::FieldKind::balanced ? 1 : 0));
      for (const auto& c : cells) {
        const double z = c.std_error > 0.0 ? c.z() : 0.0;
        worst = std::max(worst, std::abs(z));
        csv.row({kind_name(kind), static_cast<long long>(d), static_cast<long long>(c.n),
                 static_cast<long long>(c.dist), c.estimate, c.std_error, c.oracle, z});
      }
    }
  csv.close();

  io::CsvSchema zs{"zero_sum.csv",
                   "Largest |sum| over the sibling increment blocks of sampled balanced fields",
                   {{"d", "branching number"}, {"generation", "deepest generation sampled"},
                    {"fields", "number of fields"}, {"max_block_sum", "largest |block sum|"}}};
  auto zcsv = run.csv(zs);
  double worst_sum = 0.0;
  for (int d : cfg.cov_d) {
    const int n = std::max(1, std::min(cfg.cov_max_n, d == 2 ? 12 : 6));
    const tree::TreeShape shape(d, n);
    double w = 0.0;
    const int fields = 50;
    for (int r = 0; r < fields; ++r) {
      field::GenerationField f = field::root_field(shape, field::FieldKind::balanced, rng::derive(cfg.seed, 0x5e, r));
      while (f.generation < n) {
        f = field::extend_field(f);
        w = std::max(w, field::max_block_sum(f));
      }
    }
    worst_sum = std::max(worst_sum, w);
    zcsv.row({static_cast<long long>(d), static_cast<long long>(n), static_cast<long long>(fields), w});
  }
  zcsv.close();
  run.results()["max_abs_z"] = worst;
  run.results()["max_block_sum"] = worst_sum;
  return run.finish({gate_le("covariance_max_abs_z", worst, 4.0), gate_le("zero_sum", worst_sum, 1e-12)}, log);
}

CommandResult cmd_pool_build(const ExperimentConfig& cfg, std::ostream& log) {
  Run run(cfg, "pool-build");
  io::CsvSchema schema{"pool_diagnostics.csv",
                       "Population-dynamics pools: convergence and martingale-mean checks",
                       {{"kind", "balanced, standard or joint"},
                        {"size", "number of samples"},
                        {"sweeps", "refresh sweeps performed"},
                        {"converged", "1 when the sweep-to-sweep KS distance fell below its threshold"},
                        {"ks_last", "last KS distance between sweeps r and r+5"},
                        {"ks_threshold", "2 / sqrt(size)"},
                        {"mean", "pool mean of M (of (M+ + M-)/2 for joint)"},
                        {"sd", "pool standard deviation"},
                        {"tolerance", "4 sd / sqrt(size)"},
                        {"mean_ok", "1 when |mean - 1| <= tolerance"}}};
  auto csv = run.csv(schema);
  std::vector<Gate> gates;
  for (auto kind : {chaos::PoolKind::balanced, chaos::PoolKind::standard, chaos::PoolKind::joint}) {
    chaos::BuildReport rep;
    const chaos::ChaosPool pool = build_and_cache(cfg, kind, log, &rep);
    const auto mc = chaos::mean_check(pool);
    const std::string name(chaos::to_string(kind));
    {
      std::ofstream out(run.dir() / ("pool_" + name + ".bin"), std::ios::binary);
      chaos::save_pool(pool, out);
    }
    run.fingerprints()["pool_" + name] = hex(pool.fingerprint());
    csv.row({name, static_cast<long long>(pool.size()), static_cast<long long>(rep.sweeps),
             static_cast<long long>(rep.converged), rep.ks_last, rep.ks_threshold, mc.mean, mc.sd, mc.tolerance,
             static_cast<long long>(mc.ok())});
    gates.push_back(gate_le("mean_" + name, std::abs(mc.mean - 1.0), mc.tolerance));
    Gate conv = gate_le("converged_" + name, rep.ks_last, rep.ks_threshold);
    conv.warn_only = true;
    gates.push_back(conv);
  }
  csv.close();
  return run.finish(std::move(gates), log);
}

CommandResult cmd_lambda_table(const ExperimentConfig& cfg, std::ostream& log) {
  Run run(cfg, "lambda-table");
  const LevelArtifacts art = obtain_levels(cfg, log);
  const auto& tables = art.run.tables;
  run.fingerprints()["pool_balanced"] = hex(art.pool_fingerprint);
  run.fingerprints()["base_table"] = hex(art.base.fingerprint());
  for (const auto& t : tables) {
    const std::string stem = "level_" + std::to_string(t.level);
    {
      std::ofstream out(run.dir() / (stem + ".tbl"), std::ios::binary);
      laplace::save_table(t, out);
    }
    std::ofstream(run.dir() / (stem + ".json"), std::ios::binary) << h_sidecar(t).dump(2) << '\n';
    run.fingerprints()["table_" + std::to_string(t.level)] = hex(t.fingerprint());
  }

  const std::vector<double> lambdas = laplace::lambda_samples(tables.front());
  io::CsvSchema ls{"levels.csv",
                   "Per-level diagnostics of the Laplace-exponent tables (anchor lambda = 1)",
                   {{"level", "k"},
                    {"h_at_1", "h_k(1) = G_k(0) / d^k"},
                    {"cauchy", "max over 64 lambdas in [1, p] of |h_k - h_{k-1}| / h_k"},
                    {"anchor_error", "max relative |h_k(p lambda) - d h_{k+1}(lambda)| (empty on the last level)"},
                    {"checks_ok", "1 when nonnegative, monotone, below t, concave in t and Lipschitz"},
                    {"worst_concavity", "largest relative concavity violation"},
                    {"trusted_x_max", "right end of the trusted range"},
                    {"table_fingerprint", "content fingerprint"}}};
  auto lcsv = run.csv(ls);
  double worst_anchor = 0.0;
  bool checks = true;
  for (std::size_t k = 0; k < tables.size(); ++k) {
    const auto c = laplace::check_table(tables[k]);
    checks = checks && c.ok();
    double anchor = std::nan("");
    if (k + 1 < tables.size()) {
      anchor = laplace::anchor_identity_error(tables[k], tables[k + 1], lambdas);
      if (k <= 20) worst_anchor = std::max(worst_anchor, anchor);
    }
    lcsv.row({static_cast<long long>(k), laplace::h_estimate(tables[k], 1.0), art.run.cauchy[k], anchor,
              static_cast<long long>(c.ok()), c.worst_concavity, tables[k].trusted_x_max(),
              hex(tables[k].fingerprint())});
  }
  lcsv.close();

  io::CsvSchema hs{"h_curves.csv",
                   "h_k(lambda) on 64 lambdas spread evenly in log over [1, p]",
                   {{"level", "k"}, {"lambda", "lambda"}, {"h", "h_k(lambda)"}}};
  auto hcsv = run.csv(hs);
  for (const auto& t : tables)
    for (double l : lambdas) hcsv.row({static_cast<long long>(t.level), l, laplace::h_estimate(t, l)});
  hcsv.close();

  // one recursion step from the Monte-Carlo level 0 against two-level Monte Carlo
  io::CsvSchema rs{"recursion_check.csv",
                   "Lambda(lambda p) from one recursion step of the Monte-Carlo table against direct two-level Monte Carlo",
                   {{"lambda", "anchor"},
                    {"recursion", "G_1(log lambda / gamma)"},
                    {"monte_carlo", "two-level Monte-Carlo estimate"},
                    {"std_error", "its standard error"},
                    {"z", "(recursion - monte_carlo) / std_error"}}};
  auto rcsv = run.csv(rs);
  const laplace::BlockIntegrator integ(art.params);
  const laplace::LambdaTable g1 = laplace::recursion_step(art.base, integ);
  const chaos::ChaosPool pool = obtain_pool(cfg, chaos::PoolKind::balanced, log);
  double worst_z = 0.0;
  for (double lam : {1.0, 2.0}) {
    const auto mc = laplace::two_level_laplace(pool, art.params, lam * art.params.p, 1000000,
                                               rng::derive(cfg.seed, 0x2e, static_cast<std::uint64_t>(lam)));
    const double rec = g1(std::log(lam) / art.params.gamma);
    const double z = (rec - mc.value) / mc.std_error;
    worst_z = std::max(worst_z, std::abs(z));
    rcsv.row({lam, rec, mc.value, mc.std_error, z});
  }
  rcsv.close();

  for (const auto& t : tables) {
    run.output("level_" + std::to_string(t.level) + ".tbl");
    run.output("level_" + std::to_string(t.level) + ".json");
  }
  run.results()["levels"] = tables.size();
  run.results()["converged"] = art.run.converged;
  run.results()["stop_reason"] = art.run.stop_reason;
  run.results()["solve_sweeps"] = art.solve.sweeps;
  run.results()["solve_residual"] = art.solve.residual;
  return run.finish({gate_true("table_checks", checks), gate_le("anchor_identity", worst_anchor, 1e-6),
                     gate_true("cauchy_converged", art.run.converged, art.run.stop_reason),
                     gate_le("recursion_vs_mc_z", worst_z, 3.0)},
                    log);
}

CommandResult cmd_scaling_report(const ExperimentConfig& cfg, std::ostream& log) {
  Run run(cfg, "scaling-report");
  const LevelArtifacts art = obtain_levels(cfg, log);
  const auto& tables = art.run.tables;
  const auto& P = art.params;
  run.fingerprints()["pool_balanced"] = hex(art.pool_fingerprint);
  const std::vector<double> lambdas = laplace::lambda_samples(tables.front());

  io::CsvSchema as{"alpha.csv",
                   "Exponent fit per level: OLS slope of log Lambda(t_k) against log t_k over levels k-3..k",
                   {{"level", "k"},
                    {"t", "t_k = p^k (lambda = 1)"},
                    {"lambda_value", "Lambda(t_k) = G_k(0)"},
                    {"alpha_hat", "fitted exponent over the 4 levels ending at k (empty below k = 3)"},
                    {"alpha", "kappa / (kappa + 1)"},
                    {"bound_ratio", "max / min of Lambda(t) / t^alpha over the same window"},
                    {"anchor_error", "max relative |h_k(p lambda) - d h_{k+1}(lambda)|"},
                    {"monotone", "1 when h_k is nondecreasing over the sample lambdas"},
                    {"sandwich", "1 when h_k(l2) <= (l2/l1) h_k(l1) over the sample lambdas"}}};
  auto acsv = run.csv(as);
  double alpha_final = std::nan("");
  bool structure = true;
  double worst_anchor = 0.0;
  for (std::size_t k = 0; k < tables.size(); ++k) {
    double fit = std::nan(""), ratio = std::nan("");
    if (k >= 3) {
      std::span<const laplace::LambdaTable> window(tables.data(), k + 1);
      fit = laplace::alpha_fit(window);
      ratio = laplace::bound_ratio(window);
      alpha_final = fit;
    }
    double anchor = std::nan("");
    if (k + 1 < tables.size()) {
      anchor = laplace::anchor_identity_error(tables[k], tables[k + 1], lambdas);
      worst_anchor = std::max(worst_anchor, anchor);
    }
    const auto sw = laplace::check_h_sandwich(tables[k], lambdas);
    structure = structure && sw.monotone && sw.sandwich;
    acsv.row({static_cast<long long>(k), tables[k].t_at(0.0), tables[k](0.0), fit, P.alpha, ratio, anchor,
              static_cast<long long>(sw.monotone), static_cast<long long>(sw.sandwich)});
  }
  acsv.close();

  const laplace::LambdaTable& top = tables.back();
  const std::vector<double> probe = laplace::lambda_samples(top, 16);
  io::CsvSchema vs{"variational.csv",
                   "Variational residual h(lambda) - min_y (h(lambda e^{gamma y}) + h(lambda e^{-gamma y})) / 2 on the top level",
                   {{"lambda", "lambda"},
                    {"h", "h(lambda)"},
                    {"residual", "h - min over grid-resolved y >= 0"},
                    {"relative", "residual / h"},
                    {"y_min", "minimising y"},
                    {"inconclusive", "1 when the minimiser sits at the grid edge"}}};
  auto vcsv = run.csv(vs);
  double worst_var = 0.0;
  for (double l : probe) {
    const auto v = laplace::variational_check(top, l);
    worst_var = std::max(worst_var, std::abs(v.residual) / v.h);
    vcsv.row({l, v.h, v.residual, v.residual / v.h, v.y_min, static_cast<long long>(v.inconclusive)});
  }
  vcsv.close();

  io::CsvSchema cs{"convexity.csv",
                   "Convexity scan of f_lambda(x) = h(lambda e^{gamma x}) on the top level",
                   {{"lambda", "lambda"},
                    {"min_second_difference", "smallest second difference over the trusted range / max f"}}};
  auto ccsv = run.csv(cs);
  double worst_conv = std::numeric_limits<double>::infinity();
  for (double l : probe) {
    const double m = laplace::min_second_difference(top, l);
    worst_conv = std::min(worst_conv, m);
    ccsv.row({l, m});
  }
  ccsv.close();

  const laplace::LambdaStar star = laplace::find_lambda_star(top);
  Certificate cert{star.lambda, star.curvature, star.noise_floor, star.certified, star.at_edge,
                   top.level,   star.table_fingerprint, P.d, P.gamma};
  write_certificate(cert, run.dir() / "lambda_star.json");
  run.output("lambda_star.json");
  run.fingerprints()["top_table"] = hex(top.fingerprint());
  run.results()["alpha_hat"] = alpha_final;
  run.results()["alpha"] = P.alpha;
  run.results()["lambda_star"] = star.lambda;
  run.results()["lambda_star_curvature"] = star.curvature;
  run.results()["lambda_star_noise_floor"] = star.noise_floor;
  run.results()["lambda_star_at_edge"] = star.at_edge;

  std::vector<Gate> gates;
  gates.push_back(gate_le("alpha_fit", std::abs(alpha_final - P.alpha), 0.05));
  gates.push_back(gate_le("anchor_identity", worst_anchor, 1e-6));
  gates.push_back(gate_true("h_monotone_sandwich", structure));
  gates.push_back(gate_le("variational_residual", worst_var, 5e-3));
  gates.push_back(gate_ge("convexity", worst_conv, -1e-6));
  gates.push_back(gate_ge("lambda_star_curvature", star.curvature, 10.0 * star.noise_floor,
                          star.at_edge ? "maximum at the edge of [1, p]" : ""));
  return run.finish(std::move(gates), log);
}

CommandResult cmd_sinh_table(const ExperimentConfig& cfg, std::ostream& log) {
  Run run(cfg, "sinh-table");
  const SinhArtifacts art = obtain_sinh(cfg, log);
  const auto& tables = art.run.tables;
  const auto P = params_of(cfg);
  run.fingerprints()["pool_joint"] = hex(art.pool_fingerprint);
  io::CsvSchema ss{"sinh_levels.csv",
                   "Per-level diagnostics of F_k(x) = -log E exp(-(lambda/2) p^k (e^{gamma x} M+ + e^{-gamma x} M-))",
                   {{"level", "k"},
                    {"h_tilde", "F_k(0) / d^k"},
                    {"cauchy", "|h~_k - h~_{k-1}| / h~_k"},
                    {"symmetry", "max |F(x) - F(-x)| / F(x)"},
                    {"convexity", "most negative second difference / max F (0 if convex)"},
                    {"min_at_zero", "1 when F(x) >= F(0) on every trusted knot"},
                    {"trusted_x_max", "trusted half-width"},
                    {"table_fingerprint", "content fingerprint"}}};
  auto csv = run.csv(ss);
  double worst_sym = 0.0, worst_conv = 0.0;
  bool min0 = true;
  for (std::size_t k = 0; k < tables.size(); ++k) {
    const auto c = sinh::check_sinh(tables[k]);
    worst_sym = std::max(worst_sym, c.symmetry);
    worst_conv = std::min(worst_conv, c.convexity);
    min0 = min0 && c.min_at_zero;
    csv.row({static_cast<long long>(k), sinh::h_tilde(tables[k]), art.run.cauchy[k], c.symmetry, c.convexity,
             static_cast<long long>(c.min_at_zero), tables[k].trusted_x_max(), hex(tables[k].fingerprint())});
    std::ofstream out(run.dir() / ("sinh_level_" + std::to_string(k) + ".snh"), std::ios::binary);
    sinh::save_sinh_table(tables[k], out);
  }
  csv.close();
  for (std::size_t k = 0; k < tables.size(); ++k) run.output("sinh_level_" + std::to_string(k) + ".snh");
  const double alpha = sinh::sinh_alpha_fit(tables);
  run.results()["alpha_hat"] = alpha;
  run.results()["alpha"] = P.alpha;
  run.results()["presym_z"] = tables.front().presym_z;
  run.results()["presym_abs"] = tables.front().presym_abs;
  run.results()["converged"] = art.run.converged;
  return run.finish({gate_le("symmetry", worst_sym, 1e-9),
                     gate_le("presymmetrisation_z", tables.front().presym_z, 4.0, "largest |F(x) - F(-x)| in standard errors"),
                     gate_ge("convexity", worst_conv, -1e-9), gate_true("minimum_at_zero", min0),
                     gate_le("alpha_fit", std::abs(alpha - P.alpha), 0.05),
                     gate_true("cauchy_converged", art.run.converged)},
                    log);
}

CommandResult cmd_small_ball(const ExperimentConfig& cfg, std::ostream& log) {
  Run run(cfg, "small-ball");
  const auto P = params_of(cfg);
  const chaos::ChaosPool pool = obtain_pool(cfg, chaos::PoolKind::balanced, log);
  run.fingerprints()["pool_balanced"] = hex(pool.fingerprint());
  std::vector<double> s = cfg.small_ball_s;
  if (s.empty())
    for (int i = 0; i < 24; ++i) s.push_back(0.02 * std::pow(25.0, i / 23.0));
  const auto fit = chaos::small_ball_fit(pool, s, cfg.small_ball_min_count);
  io::CsvSchema ss{"small_ball.csv",
                   "Empirical small-ball probabilities P(M <= s) at the resolved s values",
                   {{"s", "threshold"},
                    {"count", "pool samples <= s"},
                    {"probability", "count / N"},
                    {"ci_low", "Wilson 95% interval, lower"},
                    {"ci_high", "Wilson 95% interval, upper"},
                    {"log_inv_s", "log(1/s)"},
                    {"log_neg_log_p", "log(-log probability)"}}};
  auto csv = run.csv(ss);
  for (const auto& p : fit.points)
    csv.row({p.s, static_cast<long long>(p.count), p.prob, p.ci.lo, p.ci.hi, std::log(1.0 / p.s),
             std::log(-std::log(p.prob))});
  csv.close();
  run.results()["slope"] = fit.slope;
  run.results()["kappa"] = P.kappa;
  run.results()["resolved_points"] = fit.points.size();
  Gate g = gate_le("small_ball_slope", std::abs(fit.slope / P.kappa - 1.0), 0.25,
                   fit.resolved ? "relative deviation of the slope from kappa" : "fewer than two resolved points");
  if (!fit.resolved) g.passed = false;
  g.warn_only = true;
  return run.finish({g}, log);
}

CommandResult cmd_tilted_run(const ExperimentConfig& cfg, std::ostream& log) {
  const auto P = params_of(cfg);
  // lambda first: refuse before any heavy work
  std::optional<Certificate> cert;
  if (!cfg.lambda) {
    const fs::path path = cfg.certificate.empty() ? fs::path(cfg.output_dir) / "scaling-report" / "lambda_star.json"
                                                  : fs::path(cfg.certificate);
    cert = read_certificate(path);
    if (cert->d != P.d || cert->gamma != P.gamma)
      throw DependencyError("lambda* certificate was issued for different (d, gamma)");
    if (!cert->certified) {
      CommandResult r;
      r.exit_code = kGateFailed;
      r.message = "lambda* certificate is not certified (curvature below 10x the noise floor); refusing to run";
      log << r.message << '\n';
      return r;
    }
  }
  Run run(cfg, "tilted-run");
  const LevelArtifacts art = obtain_levels(cfg, log);
  const auto& tables = art.run.tables;
  if (cert) {
    if (cert->level >= static_cast<int>(tables.size()) ||
        tables[static_cast<std::size_t>(cert->level)].fingerprint() != cert->table_fingerprint)
      throw DependencyError("lambda* certificate does not match the level tables of this configuration");
  }
  const double lambda = cert ? cert->lambda : *cfg.lambda;
  const int need = std::max(0, *std::max_element(cfg.a_values.begin(), cfg.a_values.end()));
  if (need >= static_cast<int>(tables.size())) throw DependencyError("not enough level tables for the requested a");
  std::map<int, laplace::LambdaTable> at;
  try {
    at[0] = laplace::reanchor(tables[0], lambda);
    for (int a : cfg.a_values) at[a] = laplace::reanchor(tables[static_cast<std::size_t>(a)], lambda);
  } catch (const std::invalid_argument& e) {
    throw DependencyError(std::string("tilt.lambda: ") + e.what());
  }
  run.fingerprints()["pool_balanced"] = hex(art.pool_fingerprint);
  for (const auto& [a, t] : at) run.fingerprints()["table_" + std::to_string(a)] = hex(t.fingerprint());
  if (cert) run.fingerprints()["certificate_table"] = hex(cert->table_fingerprint);

  tilted::ChainBudget b;
  b.chains = cfg.chains;
  b.pilot_sweeps = cfg.pilot_sweeps;
  b.burn_sweeps = cfg.burn_sweeps;
  b.sweeps = cfg.sweeps;
  b.target_acceptance = cfg.target_acceptance;
  b.seed = rng::derive(cfg.seed, 0x7117);
  std::vector<int> as = cfg.a_values;
  std::sort(as.begin(), as.end());
  as.erase(std::unique(as.begin(), as.end()), as.end());

  log << "L1 collapse at k=" << cfg.k << ", lambda=" << lambda << '\n';
  std::vector<tilted::EnsembleResult> l1runs;
  const auto rows = tilted::l1_collapse_experiment(at, lambda, cfg.k, as, b, &l1runs);
  std::map<int, double> eps;
  for (const auto& r : rows) eps[r.a] = r.q90;
  log << "correlations at truncation m=k=" << cfg.k << '\n';
  tilted::EnsembleResult crun;
  const auto corr = tilted::correlation_decay_experiment(at.at(0), lambda, cfg.k, eps, b, &crun);

  io::CsvSchema ls{"l1_collapse.csv",
                   "Tilted mean of d^{-m} sum_v |A_v| at truncation m = k - a against the untilted half-normal mean",
                   {{"a", "levels integrated out"},
                    {"m", "truncation generation k - a"},
                    {"mean_l1", "tilted mean of the L1 norm over all chains"},
                    {"std_error", "batch-means standard error"},
                    {"q10", "10% quantile"},
                    {"q50", "median"},
                    {"q90", "90% quantile (used as epsilon_a)"},
                    {"untilted_mean", "sqrt(2 m / pi)"},
                    {"ratio", "mean_l1 / untilted_mean"},
                    {"rhat", "split R-hat of the L1 trace over chains"},
                    {"acceptance", "mean pCN acceptance rate"},
                    {"worst_audit", "largest relative incremental-vs-recomputed log-weight gap"},
                    {"out_of_range", "proposals rejected beyond the table's trusted range"},
                    {"flagged", "1 when R-hat exceeds 1.05"},
                    {"table_fingerprint", "fingerprint of the level-a table at anchor lambda"}}};
  auto lcsv = run.csv(ls);
  double worst_audit = 0.0, worst_rhat = 0.0;
  std::uint64_t oor = 0;
  for (const auto& r : rows) {
    lcsv.row({static_cast<long long>(r.a), static_cast<long long>(r.m), r.mean_l1, r.std_error, r.q10, r.q50, r.q90,
              r.untilted, r.mean_l1 / r.untilted, r.rhat, r.acceptance, r.worst_audit,
              static_cast<long long>(r.out_of_range), static_cast<long long>(r.flagged), hex(r.table_fingerprint)});
    worst_audit = std::max(worst_audit, r.worst_audit);
    worst_rhat = std::max(worst_rhat, r.rhat);
    oor += r.out_of_range;
  }
  lcsv.close();

  io::CsvSchema cs{"correlation.csv",
                   "E[A_v A_w 1_event] under the tilted law at truncation m = k for pairs whose common ancestor is a+1 "
                   "generations up (truncated geometry)",
                   {{"a", "ancestor depth of the event"},
                    {"restricted", "E[A_v A_w 1_event]"},
                    {"std_error", "batch-means standard error"},
                    {"p_event", "estimated probability of the event"},
                    {"conditional", "restricted / p_event"},
                    {"epsilon", "epsilon_a from the L1 experiment"},
                    {"bound", "d sqrt(epsilon_a)"},
                    {"untilted_cov", "untilted covariance m - (a + 1) - 1"},
                    {"rhat", "split R-hat of the restricted-product trace"},
                    {"underpowered", "1 when p_event < 0.2"}}};
  auto ccsv = run.csv(cs);
  for (const auto& r : corr) {
    ccsv.row({static_cast<long long>(r.a), r.restricted, r.std_error, r.p_event, r.conditional, r.epsilon, r.bound,
              r.untilted_cov, r.rhat, static_cast<long long>(r.underpowered)});
    worst_rhat = std::max(worst_rhat, r.rhat);
  }
  worst_rhat = std::max(worst_rhat, crun.rhat_l1);
  worst_audit = std::max(worst_audit, crun.worst_audit);
  ccsv.close();

  io::CsvSchema ts{"traces.csv",
                   "Per-sweep chain observables",
                   {{"experiment", "l1 (truncation k - a) or correlation (truncation k)"},
                    {"a", "levels integrated out (l1) or -1 (correlation)"},
                    {"chain", "chain index"},
                    {"sweep", "sweep index after burn-in"},
                    {"l1", "d^{-m} sum_v |A_v|"},
                    {"first_leaf", "A_v at leaf 0"},
                    {"log_weight", "-sum_v G_a(A_v)"}}};
  auto tcsv = run.csv(ts);
  auto dump = [&](const std::string& name, long long a, const tilted::EnsembleResult& e) {
    for (std::size_t c = 0; c < e.chains.size(); ++c) {
      const auto& tr = e.chains[c];
      for (std::size_t s = 0; s < tr.l1.size(); ++s)
        tcsv.row({name, a, static_cast<long long>(c), static_cast<long long>(s), tr.l1[s], tr.first_leaf[s],
                  tr.log_weight[s]});
    }
  };
  for (std::size_t i = 0; i < rows.size(); ++i) dump("l1", rows[i].a, l1runs[i]);
  dump("correlation", -1, crun);
  tcsv.close();

  json rh = json::object();
  for (const auto& r : rows) rh["l1_a" + std::to_string(r.a)] = r.rhat;
  for (const auto& r : corr) rh["correlation_a" + std::to_string(r.a)] = r.rhat;
  rh["correlation_l1"] = crun.rhat_l1;
  run.results()["rhat"] = rh;
  run.results()["lambda"] = lambda;
  run.results()["k"] = cfg.k;
  run.results()["geometry"] = "truncated";
  json beta = json::array();
  for (const auto& e : l1runs) beta.push_back(e.chains.front().beta);
  run.results()["beta_chain0"] = beta;

  std::vector<Gate> gates;
  gates.push_back(gate_le("rhat", worst_rhat, 1.05));
  gates.push_back(gate_le("weight_audit", worst_audit, 1e-8));
  Gate range = gate_le("out_of_range_proposals", static_cast<double>(oor), 0.0);
  range.warn_only = true;
  gates.push_back(range);
  bool decreasing = true;
  for (std::size_t i = 1; i < rows.size(); ++i) decreasing = decreasing && rows[i].mean_l1 < rows[i - 1].mean_l1;
  gates.push_back(gate_true("l1_decreasing_in_a", decreasing));
  gates.push_back(gate_le("l1_ratio_at_largest_a", rows.back().mean_l1 / rows.back().untilted, 0.5));
  bool corr_decreasing = true;
  for (std::size_t i = 1; i < corr.size(); ++i)
    corr_decreasing = corr_decreasing && std::abs(corr[i].restricted) < std::abs(corr[i - 1].restricted);
  gates.push_back(gate_true("correlation_decreasing_in_a", corr_decreasing));
  gates.push_back(gate_ge("p_event_at_smallest_a", corr.front().p_event, 0.8));
  double pmin = 1.0;
  for (const auto& r : corr) pmin = std::min(pmin, r.p_event);
  gates.push_back(gate_ge("p_event_not_underpowered", pmin, 0.2));
  return run.finish(std::move(gates), log);
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"covariance-check", "pool-build",  "lambda-table", "scaling-report",
                                                 "sinh-table",       "small-ball", "tilted-run"};
  return names;
}

CommandResult run_command(const std::string& name, const ExperimentConfig& cfg, std::ostream& log) {
  try {
    if (name == "covariance-check") return cmd_covariance_check(cfg, log);
    if (name == "pool-build") return cmd_pool_build(cfg, log);
    if (name == "lambda-table") return cmd_lambda_table(cfg, log);
    if (name == "scaling-report") return cmd_scaling_report(cfg, log);
    if (name == "sinh-table") return cmd_sinh_table(cfg, log);
    if (name == "small-ball") return cmd_small_ball(cfg, log);
    if (name == "tilted-run") return cmd_tilted_run(cfg, log);
  } catch (const DependencyError& e) {
    CommandResult r;
    r.exit_code = kConfigInvalid;
    r.message = name + ": " + e.what();
    return r;
  }
  throw std::invalid_argument("unknown command '" + name + "'");
}

}  // namespace brwlab::experiments
