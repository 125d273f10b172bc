#include "brwlab/tilted.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "brwlab/parallel.hpp"
#include "brwlab/tree.hpp"

namespace brwlab::tilted {

namespace {

std::size_t upow(int d, int n) { return static_cast<std::size_t>(tree::ipow(d, n)); }

}  // namespace

void TiltConfig::validate() const {
  if (m < 1) throw ContractViolation("TiltConfig: truncation generation m must be >= 1");
  if (a() < 0) throw ContractViolation("TiltConfig: need m <= k");
  if (table.level != a()) {
    std::ostringstream os;
    os << "TiltConfig: table level " << table.level << " does not match a = k - m = " << a();
    throw ContractViolation(os.str());
  }
  if (std::abs(table.lambda - lambda) > 1e-12 * lambda)
    throw ContractViolation("TiltConfig: table anchor differs from lambda");
  if (table.params.d != params.d || table.params.gamma != params.gamma)
    throw ContractViolation("TiltConfig: table built for different (d, gamma)");
}

LeafCost table_cost(const laplace::LambdaTable& tbl) {
  auto t = std::make_shared<const laplace::LambdaTable>(tbl);
  return [t](double x) {
    if (x > t->trusted_x_max()) {
      std::ostringstream os;
      os << "leaf value " << x << " beyond the trusted range (x <= " << t->trusted_x_max() << ") of the level-"
         << t->level << " table";
      throw laplace::WidenGridError(os.str());
    }
    return (*t)(x);
  };
}

LeafCost zero_cost() {
  return [](double) { return 0.0; };
}

double log_weight(const field::GenerationField& f, const TiltConfig& cfg) {
  cfg.validate();
  if (f.generation != cfg.m || f.shape.d() != cfg.params.d)
    throw ContractViolation("log_weight: field is not a generation-m field of the configured tree");
  const LeafCost cost = table_cost(cfg.table);
  stats::CompensatedSum s;
  for (double x : f.values) s.add(cost(x));
  return -s.value();
}

// --- chain ---------------------------------------------------------------

TiltedChain::TiltedChain(int d, int m, LeafCost cost, std::uint64_t seed, ChainOptions opt)
    : d_(d), m_(m), cost_(std::move(cost)), rs_(seed), opt_(std::move(opt)) {
  if (d < 2 || m < 1) throw std::invalid_argument("TiltedChain: need d >= 2 and m >= 1");
  (void)upow(d, m + 1);  // overflow check
  beta_ = opt_.beta.empty() ? std::vector<double>(static_cast<std::size_t>(m), 0.5) : opt_.beta;
  if (beta_.size() != static_cast<std::size_t>(m)) throw std::invalid_argument("TiltedChain: need one beta per generation");
  for (double b : beta_)
    if (!(b > 0.0 && b <= 1.0)) throw std::invalid_argument("TiltedChain: beta must lie in (0, 1]");
  proposed_.assign(static_cast<std::size_t>(m), 0);
  accepted_.assign(static_cast<std::size_t>(m), 0);
  latent_.resize(static_cast<std::size_t>(m) + 1);
  incr_.resize(static_cast<std::size_t>(m) + 1);
  for (int g = 1; g <= m; ++g) {
    latent_[static_cast<std::size_t>(g)].resize(upow(d, g));
    incr_[static_cast<std::size_t>(g)].resize(upow(d, g));
  }
  // start from a prior draw the cost can evaluate
  for (int attempt = 0;; ++attempt) {
    for (int g = 1; g <= m; ++g) {
      auto& z = latent_[static_cast<std::size_t>(g)];
      for (double& x : z) x = rs_.normal();
      auto& y = incr_[static_cast<std::size_t>(g)];
      for (std::size_t p = 0; p < z.size(); p += static_cast<std::size_t>(d))
        field::balanced_block_from({z.data() + p, static_cast<std::size_t>(d)}, {y.data() + p, static_cast<std::size_t>(d)});
    }
    try {
      rebuild(values_, costs_, log_weight_);
      break;
    } catch (const laplace::WidenGridError&) {
      if (attempt >= 999) throw;
    }
  }
  scratch_.resize(upow(d, m));
}

void TiltedChain::rebuild(std::vector<std::vector<double>>& values, std::vector<double>& costs, double& logw) const {
  values.assign(static_cast<std::size_t>(m_) + 1, {});
  values[0] = {0.0};
  const auto d = static_cast<std::size_t>(d_);
  for (std::size_t g = 1; g <= static_cast<std::size_t>(m_); ++g) {
    const auto& up = values[g - 1];
    auto& cur = values[g];
    cur.resize(up.size() * d);
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = up[i / d] + incr_[g][i];
  }
  costs.resize(values.back().size());
  stats::CompensatedSum s;
  for (std::size_t v = 0; v < costs.size(); ++v) {
    costs[v] = cost_(values.back()[v]);
    s.add(costs[v]);
  }
  logw = -s.value();
}

double TiltedChain::audit() {
  std::vector<std::vector<double>> values;
  std::vector<double> costs;
  double logw = 0.0;
  rebuild(values, costs, logw);
  const double gap = std::abs(log_weight_ - logw) / std::max(1.0, std::abs(logw));
  worst_audit_ = std::max(worst_audit_, gap);
  ++audits_;
  values_ = std::move(values);
  costs_ = std::move(costs);
  log_weight_ = logw;
  return gap;
}

void TiltedChain::step() {
  // locate block `cursor_` in sweep order: generation 1's single block first
  std::size_t c = cursor_;
  int g = 1;
  while (c >= upow(d_, g - 1)) {
    c -= upow(d_, g - 1);
    ++g;
  }
  const std::size_t p = c;
  const auto d = static_cast<std::size_t>(d_);
  const auto gi = static_cast<std::size_t>(g);
  const double beta = beta_[gi - 1];
  const double keep = std::sqrt(std::max(0.0, 1.0 - beta * beta));

  double z[64], y[64], delta[64];
  std::vector<double> big;
  double* zp = z;
  double* yp = y;
  double* dp = delta;
  if (d > 64) {
    big.resize(3 * d);
    zp = big.data();
    yp = zp + d;
    dp = yp + d;
  }
  const double* z0 = latent_[gi].data() + p * d;
  const double* y0 = incr_[gi].data() + p * d;
  for (std::size_t j = 0; j < d; ++j) zp[j] = keep * z0[j] + beta * rs_.normal();
  field::balanced_block_from({zp, d}, {yp, d});
  for (std::size_t j = 0; j < d; ++j) dp[j] = yp[j] - y0[j];

  // leaves under child j of the block: [(p d + j) w, (p d + j + 1) w)
  const std::size_t w = upow(d_, m_ - g);
  const std::size_t first = p * d * w;
  const auto& leaves = values_.back();
  double dlogw = 0.0;
  bool in_range = true;
  try {
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t v = 0; v < w; ++v) {
        const std::size_t i = j * w + v;
        scratch_[i] = cost_(leaves[first + i] + dp[j]);
        dlogw -= scratch_[i] - costs_[first + i];
      }
  } catch (const laplace::WidenGridError&) {
    in_range = false;
    ++out_of_range_;
  }
  ++proposed_[gi - 1];
  if (in_range && (dlogw >= 0.0 || std::log(rs_.uniform()) < dlogw)) {
    ++accepted_[gi - 1];
    std::copy(zp, zp + d, latent_[gi].begin() + static_cast<std::ptrdiff_t>(p * d));
    std::copy(yp, yp + d, incr_[gi].begin() + static_cast<std::ptrdiff_t>(p * d));
    for (std::size_t h = gi; h <= static_cast<std::size_t>(m_); ++h) {
      const std::size_t span = upow(d_, static_cast<int>(h - gi));
      auto& vals = values_[h];
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t base = (p * d + j) * span;
        for (std::size_t v = 0; v < span; ++v) vals[base + v] += dp[j];
      }
    }
    std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(d * w),
              costs_.begin() + static_cast<std::ptrdiff_t>(first));
    log_weight_ += dlogw;
  }
  ++steps_;
  cursor_ = (cursor_ + 1) % ((upow(d_, m_) - 1) / (d - 1));
  if (opt_.audit_every > 0 && steps_ % opt_.audit_every == 0) audit();
}

void TiltedChain::sweep() {
  const std::size_t blocks = (upow(d_, m_) - 1) / static_cast<std::size_t>(d_ - 1);
  for (std::size_t b = 0; b < blocks; ++b) step();
}

void TiltedChain::tune(int sweeps, double target) {
  const int batch = 10;
  int round = 0;
  for (int s = 0; s < sweeps; s += batch, ++round) {
    std::fill(proposed_.begin(), proposed_.end(), 0);
    std::fill(accepted_.begin(), accepted_.end(), 0);
    for (int i = 0; i < batch; ++i) sweep();
    const double rate = 2.0 / std::sqrt(1.0 + round);
    for (std::size_t g = 0; g < beta_.size(); ++g) {
      const double acc = static_cast<double>(accepted_[g]) / static_cast<double>(proposed_[g]);
      beta_[g] = std::clamp(beta_[g] * std::exp(rate * (acc - target)), 1e-4, 1.0);
    }
  }
  std::fill(proposed_.begin(), proposed_.end(), 0);
  std::fill(accepted_.begin(), accepted_.end(), 0);
}

double TiltedChain::l1_norm() const {
  double s = 0.0;
  for (double x : values_.back()) s += std::abs(x);
  return s / static_cast<double>(values_.back().size());
}

field::GenerationField TiltedChain::field() const {
  field::GenerationField f{tree::TreeShape(d_, m_), m_, field::FieldKind::balanced, 0, values_.back(), incr_.back()};
  return f;
}

double TiltedChain::acceptance() const {
  std::uint64_t p = 0, a = 0;
  for (std::size_t g = 0; g < proposed_.size(); ++g) {
    p += proposed_[g];
    a += accepted_[g];
  }
  return p == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(p);
}

double TiltedChain::acceptance(int g) const {
  const auto i = static_cast<std::size_t>(g - 1);
  return proposed_.at(i) == 0 ? 0.0 : static_cast<double>(accepted_[i]) / static_cast<double>(proposed_[i]);
}

// --- ensembles -----------------------------------------------------------

std::vector<double> EnsembleResult::pooled(int i) const {
  std::vector<double> out;
  for (const auto& c : chains) {
    const auto& tr = i < 0 ? c.l1 : c.probes.at(static_cast<std::size_t>(i));
    out.insert(out.end(), tr.begin(), tr.end());
  }
  return out;
}

stats::Estimate EnsembleResult::mean(int i) const {
  double sum = 0.0, var = 0.0;
  for (const auto& c : chains) {
    const auto& tr = i < 0 ? c.l1 : c.probes.at(static_cast<std::size_t>(i));
    const auto mv = stats::mean_var(tr);
    sum += mv.mean;
    const double se = stats::batch_means_se(tr);
    var += se * se;
  }
  const double n = static_cast<double>(chains.size());
  return {sum / n, std::sqrt(var) / n};
}

EnsembleResult run_ensemble(int d, int m, const LeafCost& cost, const ChainBudget& budget,
                            const std::vector<Probe>& probes) {
  if (budget.chains < 1 || budget.sweeps < 4) throw std::invalid_argument("run_ensemble: need chains >= 1 and sweeps >= 4");
  EnsembleResult res;
  res.chains.resize(static_cast<std::size_t>(budget.chains));
  par::parallel_for(res.chains.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t c = lo; c < hi; ++c) {
      ChainOptions opt;
      opt.beta = budget.beta;
      TiltedChain chain(d, m, cost, rng::derive(budget.seed, 0x7117ed, c), opt);
      if (budget.tune) chain.tune(budget.pilot_sweeps, budget.target_acceptance);
      for (int s = 0; s < budget.burn_sweeps; ++s) chain.sweep();
      ChainTrace& tr = res.chains[c];
      tr.probes.assign(probes.size(), {});
      const auto n = static_cast<std::size_t>(budget.sweeps);
      tr.l1.reserve(n);
      tr.log_weight.reserve(n);
      tr.first_leaf.reserve(n);
      for (auto& p : tr.probes) p.reserve(n);
      for (int s = 0; s < budget.sweeps; ++s) {
        chain.sweep();
        tr.l1.push_back(chain.l1_norm());
        tr.log_weight.push_back(chain.log_weight());
        tr.first_leaf.push_back(chain.leaves().front());
        for (std::size_t i = 0; i < probes.size(); ++i) tr.probes[i].push_back(probes[i](chain));
      }
      chain.audit();
      tr.beta = chain.beta();
      tr.acceptance = chain.acceptance();
      tr.out_of_range = chain.rejected_out_of_range();
      tr.worst_audit = chain.worst_audit();
      tr.audits = chain.audits();
    }
  });
  std::vector<std::vector<double>> l1;
  res.min_acceptance = 1.0;
  for (const auto& c : res.chains) {
    l1.push_back(c.l1);
    res.worst_audit = std::max(res.worst_audit, c.worst_audit);
    res.min_acceptance = std::min(res.min_acceptance, c.acceptance);
    res.max_acceptance = std::max(res.max_acceptance, c.acceptance);
  }
  res.rhat_l1 = l1.size() >= 2 ? stats::split_rhat(l1) : 1.0;
  return res;
}

// --- experiments ---------------------------------------------------------

std::vector<CollapseRow> l1_collapse_experiment(const std::map<int, laplace::LambdaTable>& tables, double lambda, int k,
                                                const std::vector<int>& as, const ChainBudget& budget,
                                                std::vector<EnsembleResult>* runs) {
  std::vector<CollapseRow> rows;
  for (int a : as) {
    const auto it = tables.find(a);
    if (it == tables.end()) throw ContractViolation("l1_collapse_experiment: no level-" + std::to_string(a) + " table");
    TiltConfig cfg{it->second.params, lambda, k, k - a, it->second};
    cfg.validate();
    ChainBudget b = budget;
    b.seed = rng::derive(budget.seed, 0xc011a95e, static_cast<std::uint64_t>(a));
    const EnsembleResult res = run_ensemble(cfg.params.d, cfg.m, table_cost(cfg.table), b);
    CollapseRow row;
    row.a = a;
    row.m = cfg.m;
    const auto est = res.mean(-1);
    row.mean_l1 = est.value;
    row.std_error = est.std_error;
    const std::vector<double> all = res.pooled(-1);
    row.q10 = stats::quantile(all, 0.10);
    row.q50 = stats::quantile(all, 0.50);
    row.q90 = stats::quantile(all, 0.90);
    row.untilted = std::sqrt(2.0 * cfg.m / std::numbers::pi);
    row.rhat = res.rhat_l1;
    row.acceptance = 0.5 * (res.min_acceptance + res.max_acceptance);
    row.worst_audit = res.worst_audit;
    for (const auto& c : res.chains) row.out_of_range += c.out_of_range;
    row.flagged = !res.converged();
    row.table_fingerprint = cfg.table.fingerprint();
    rows.push_back(row);
    if (runs) runs->push_back(res);
  }
  return rows;
}

std::vector<CorrelationRow> correlation_decay_experiment(const laplace::LambdaTable& level0, double lambda, int k,
                                                         const std::map<int, double>& epsilon,
                                                         const ChainBudget& budget, EnsembleResult* run) {
  TiltConfig cfg{level0.params, lambda, k, k, level0};
  cfg.validate();
  const int d = cfg.params.d;
  const int m = k;
  std::vector<Probe> probes;
  for (const auto& [a, eps] : epsilon) {
    if (a < 0 || m - a - 1 < 0) throw ContractViolation("correlation_decay_experiment: need 0 <= a <= k - 1");
    const double bound = d * std::sqrt(eps);
    const std::size_t mrcas = upow(d, m - a - 1);
    const auto du = static_cast<std::size_t>(d);
    // event: every child of the MRCA within the bound
    auto event = [=](const std::vector<double>& anc, std::size_t q) {
      for (std::size_t j = 0; j < du; ++j)
        if (std::abs(anc[q * du + j]) > bound) return false;
      return true;
    };
    // A_v A_w 1_event averaged over every leaf pair (v under child 0, w under
    // child j > 0) of every MRCA; leaf means under a child equal the child's value
    probes.push_back([=](const TiltedChain& ch) {
      const auto& anc = ch.values(m - a);
      double s = 0.0;
      for (std::size_t q = 0; q < mrcas; ++q) {
        if (!event(anc, q)) continue;
        double w = 0.0;
        for (std::size_t j = 1; j < du; ++j) w += anc[q * du + j];
        s += anc[q * du] * w / static_cast<double>(du - 1);
      }
      return s / static_cast<double>(mrcas);
    });
    probes.push_back([=](const TiltedChain& ch) {
      const auto& anc = ch.values(m - a);
      std::size_t hits = 0;
      for (std::size_t q = 0; q < mrcas; ++q) hits += event(anc, q);
      return static_cast<double>(hits) / static_cast<double>(mrcas);
    });
  }
  ChainBudget b = budget;
  b.seed = rng::derive(budget.seed, 0xc0aa, static_cast<std::uint64_t>(k));
  const EnsembleResult res = run_ensemble(d, m, table_cost(cfg.table), b, probes);
  std::vector<CorrelationRow> rows;
  int i = 0;
  for (const auto& [a, eps] : epsilon) {
    CorrelationRow row;
    row.a = a;
    const auto r = res.mean(2 * i);
    row.restricted = r.value;
    row.std_error = r.std_error;
    row.p_event = res.mean(2 * i + 1).value;
    row.conditional = row.p_event > 0.0 ? row.restricted / row.p_event : 0.0;
    row.epsilon = eps;
    row.bound = d * std::sqrt(eps);
    row.untilted_cov = field::cov_oracle(field::FieldKind::balanced, m, 2 * (a + 1), d);
    std::vector<std::vector<double>> tr;
    for (const auto& c : res.chains) tr.push_back(c.probes[static_cast<std::size_t>(2 * i)]);
    row.rhat = tr.size() >= 2 ? stats::split_rhat(tr) : 1.0;
    row.underpowered = row.p_event < 0.2;
    rows.push_back(row);
    ++i;
  }
  if (run) *run = res;
  return rows;
}

}  // namespace brwlab::tilted
