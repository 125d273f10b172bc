#pragma once

// The command-line experiments. Each command resolves its inputs (pools and
// tables are cached under <output>/cache, keyed and checked by fingerprint),
// writes CSV files, schema.json and manifest.json into <output>/<command>, and
// reports its gates.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "brwlab/chaos.hpp"
#include "brwlab/config.hpp"
#include "brwlab/laplace.hpp"
#include "brwlab/sinh.hpp"

namespace brwlab::experiments {

enum ExitCode : int { kOk = 0, kGateFailed = 2, kConfigInvalid = 3 };

struct Gate {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = true;
  bool warn_only = false;
  std::string detail;
};

struct CommandResult {
  int exit_code = kOk;
  std::vector<Gate> gates;
  std::filesystem::path run_dir;
  std::string message;
};

// Raised when a command cannot start (missing or incompatible inputs).
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- shared pipeline -----------------------------------------------------

chaos::ChaosPool obtain_pool(const config::ExperimentConfig& cfg, chaos::PoolKind kind, std::ostream& log,
                             chaos::BuildReport* report = nullptr);

struct LevelArtifacts {
  chaos::ChaosParams params;
  std::uint64_t pool_fingerprint = 0;
  laplace::LambdaTable base;     // Monte-Carlo level 0 on the admissible range
  laplace::LevelRun run;         // from the self-consistent level 0, anchor 1
  laplace::SolveReport solve;
};

LevelArtifacts obtain_levels(const config::ExperimentConfig& cfg, std::ostream& log);

struct SinhArtifacts {
  std::uint64_t pool_fingerprint = 0;
  sinh::SinhRun run;
};

SinhArtifacts obtain_sinh(const config::ExperimentConfig& cfg, std::ostream& log);

// lambda* certificate as written by scaling-report.
struct Certificate {
  double lambda = 0.0;
  double curvature = 0.0;
  double noise_floor = 0.0;
  bool certified = false;
  bool at_edge = false;
  int level = 0;
  std::uint64_t table_fingerprint = 0;
  int d = 0;
  double gamma = 0.0;
};

void write_certificate(const Certificate& c, const std::filesystem::path& path);
Certificate read_certificate(const std::filesystem::path& path);

// --- commands ------------------------------------------------------------

CommandResult cmd_covariance_check(const config::ExperimentConfig& cfg, std::ostream& log);
CommandResult cmd_pool_build(const config::ExperimentConfig& cfg, std::ostream& log);
CommandResult cmd_lambda_table(const config::ExperimentConfig& cfg, std::ostream& log);
CommandResult cmd_scaling_report(const config::ExperimentConfig& cfg, std::ostream& log);
CommandResult cmd_sinh_table(const config::ExperimentConfig& cfg, std::ostream& log);
CommandResult cmd_small_ball(const config::ExperimentConfig& cfg, std::ostream& log);
CommandResult cmd_tilted_run(const config::ExperimentConfig& cfg, std::ostream& log);

const std::vector<std::string>& command_names();
// Runs a command by name; DependencyError becomes exit code 3.
CommandResult run_command(const std::string& name, const config::ExperimentConfig& cfg, std::ostream& log);

}  // namespace brwlab::experiments
