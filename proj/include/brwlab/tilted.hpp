#pragma once

// The balanced field truncated at generation m under the tilted law
//   dP_t / dP  proportional to  E[exp(-t_k M) | A_gen m] = exp(-sum_v G_a(A_v)),
// t_k = lambda p^k and a = k - m. The chaos below generation m is integrated
// out through the level-a table, so only the d^1 + ... + d^m Gaussian latents
// of the field are sampled, by blockwise preconditioned Crank–Nicolson moves.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "brwlab/chaos.hpp"
#include "brwlab/field.hpp"
#include "brwlab/laplace.hpp"
#include "brwlab/rng.hpp"
#include "brwlab/stats.hpp"

namespace brwlab::tilted {

struct TiltConfig {
  chaos::ChaosParams params;
  double lambda = 1.0;
  int k = 0;
  int m = 0;
  laplace::LambdaTable table;  // level k - m, anchor lambda

  int a() const { return k - m; }
  // Throws ContractViolation on a < 0 or a table of the wrong level or anchor.
  void validate() const;
};

// Per-leaf cost: log weight = -sum_v cost(A_v).
using LeafCost = std::function<double(double)>;

// G_a read from the table; throws laplace::WidenGridError past its trusted range.
LeafCost table_cost(const laplace::LambdaTable& tbl);
LeafCost zero_cost();

double log_weight(const field::GenerationField& f, const TiltConfig& cfg);

struct ChainOptions {
  std::vector<double> beta;        // pCN step per generation 1..m; empty means 0.5 everywhere
  std::uint64_t audit_every = 10000;
};

// One Markov chain. A step proposes new latents for one sibling block
// Z' = sqrt(1 - beta_g^2) Z + beta_g xi and accepts with min(1, exp(delta log weight)).
// A sweep visits every block of every generation once.
class TiltedChain {
 public:
  TiltedChain(int d, int m, LeafCost cost, std::uint64_t seed, ChainOptions opt = {});

  void step();
  void sweep();
  // Adapts beta_g towards `target` acceptance over `sweeps` sweeps, then resets counters.
  void tune(int sweeps, double target = 0.3);

  int d() const { return d_; }
  int m() const { return m_; }
  const std::vector<double>& values(int g) const { return values_[static_cast<std::size_t>(g)]; }
  const std::vector<double>& leaves() const { return values_.back(); }
  double log_weight() const { return log_weight_; }
  double l1_norm() const;
  field::GenerationField field() const;

  const std::vector<double>& beta() const { return beta_; }
  std::uint64_t steps() const { return steps_; }
  double acceptance() const;
  double acceptance(int g) const;
  std::uint64_t rejected_out_of_range() const { return out_of_range_; }
  // Largest |incremental - recomputed| / max(1, |recomputed|) seen at audits.
  double worst_audit() const { return worst_audit_; }
  std::uint64_t audits() const { return audits_; }
  // Recompute values and weight from the latents; returns the discrepancy.
  double audit();

 private:
  void rebuild(std::vector<std::vector<double>>& values, std::vector<double>& costs, double& logw) const;

  int d_;
  int m_;
  LeafCost cost_;
  rng::Stream rs_;
  ChainOptions opt_;
  std::vector<double> beta_;
  std::vector<std::vector<double>> latent_;  // generation g: d^g standard normals
  std::vector<std::vector<double>> incr_;    // generation g: balanced increments
  std::vector<std::vector<double>> values_;  // generation 0..m
  std::vector<double> costs_;                // per leaf
  double log_weight_ = 0.0;
  std::uint64_t steps_ = 0;
  std::size_t cursor_ = 0;  // next block in sweep order
  std::vector<std::uint64_t> proposed_, accepted_;
  std::uint64_t out_of_range_ = 0;
  std::uint64_t audits_ = 0;
  double worst_audit_ = 0.0;
  std::vector<double> scratch_;
};

// --- chain ensembles -----------------------------------------------------

struct ChainBudget {
  int chains = 8;
  int pilot_sweeps = 400;
  int burn_sweeps = 400;
  int sweeps = 4000;
  double target_acceptance = 0.3;
  std::uint64_t seed = 1;
  bool tune = true;
  std::vector<double> beta;  // used as given (or as the tuning start)
};

// A scalar read off the chain state after every sweep.
using Probe = std::function<double(const TiltedChain&)>;

struct ChainTrace {
  std::vector<double> l1;
  std::vector<double> log_weight;
  std::vector<double> first_leaf;
  std::vector<std::vector<double>> probes;
  std::vector<double> beta;
  double acceptance = 0.0;
  std::uint64_t out_of_range = 0;
  double worst_audit = 0.0;
  std::uint64_t audits = 0;
};

struct EnsembleResult {
  std::vector<ChainTrace> chains;
  double rhat_l1 = 0.0;
  double worst_audit = 0.0;
  double min_acceptance = 0.0;
  double max_acceptance = 0.0;
  bool converged() const { return rhat_l1 <= 1.05; }
  // All chains' values of probe i (or of l1 when i < 0), concatenated.
  std::vector<double> pooled(int i) const;
  // Mean over chains with a batch-means error bar.
  stats::Estimate mean(int i) const;
};

EnsembleResult run_ensemble(int d, int m, const LeafCost& cost, const ChainBudget& budget,
                            const std::vector<Probe>& probes = {});

// --- experiments ---------------------------------------------------------

struct CollapseRow {
  int a = 0;
  int m = 0;
  double mean_l1 = 0.0;
  double std_error = 0.0;
  double q10 = 0.0;
  double q50 = 0.0;
  double q90 = 0.0;          // taken as epsilon_a
  double untilted = 0.0;     // sqrt(2 m / pi)
  double rhat = 0.0;
  double acceptance = 0.0;
  double worst_audit = 0.0;
  std::uint64_t out_of_range = 0;
  bool flagged = false;      // split-R-hat above 1.05
  std::uint64_t table_fingerprint = 0;
};

// tables[a] is the level-a table at anchor lambda.
// `runs` (optional) receives the ensemble behind each row.
std::vector<CollapseRow> l1_collapse_experiment(const std::map<int, laplace::LambdaTable>& tables, double lambda, int k,
                                                const std::vector<int>& as, const ChainBudget& budget,
                                                std::vector<EnsembleResult>* runs = nullptr);

struct CorrelationRow {
  int a = 0;
  double restricted = 0.0;   // E[A_v A_w 1_event] over pairs whose MRCA is a + 1 levels up
  double std_error = 0.0;
  double p_event = 0.0;
  double conditional = 0.0;  // restricted / p_event
  double epsilon = 0.0;
  double bound = 0.0;        // d sqrt(epsilon)
  double untilted_cov = 0.0; // cov_oracle(balanced, m, 2 (a + 1))
  double rhat = 0.0;
  bool underpowered = false; // p_event < 0.2
};

// Chains at truncation m = k with the level-0 table. The event bounds every
// child of the MRCA (the ancestors a generations above v and w and their
// siblings) by d sqrt(epsilon_a).
std::vector<CorrelationRow> correlation_decay_experiment(const laplace::LambdaTable& level0, double lambda, int k,
                                                         const std::map<int, double>& epsilon,
                                                         const ChainBudget& budget, EnsembleResult* run = nullptr);

}  // namespace brwlab::tilted
