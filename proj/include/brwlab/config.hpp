#pragma once

// Experiment configuration: plain-text `key = value` lines grouped under
// `[section]` headers, `#` or `;` comments. Parsing collects every problem
// before failing.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace brwlab::config {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// section -> key -> raw value
using IniData = std::map<std::string, std::map<std::string, std::string>>;

// Syntax errors are appended to `problems`.
IniData parse_ini(const std::string& text, std::vector<std::string>& problems);

struct ExperimentConfig {
  // [model]
  int d = 2;
  double gamma = 0.5;
  // [pool]
  std::size_t pool_size = 1000000;
  std::uint64_t pool_seed = 7;
  int pool_burn_in = 50;
  int pool_max_extra = 60;
  // [grid]
  double half_width = 12.0;
  double spacing = 0.02;
  // [levels]
  int max_level = 40;
  int min_level = 21;
  double level_tol = 1e-4;
  // [covariance]
  std::vector<int> cov_d = {2, 3};
  int cov_max_n = 6;
  std::size_t cov_replicas = 100000;
  // [small_ball]
  std::vector<double> small_ball_s;  // empty: 24 points log-spaced in [0.02, 0.5]
  std::size_t small_ball_min_count = 100;
  // [tilt]
  std::optional<double> lambda;  // empty means "auto" (lambda* certificate)
  std::string certificate;       // path; empty means <output>/scaling-report/lambda_star.json
  int k = 12;
  std::vector<int> a_values = {2, 4, 6};
  int chains = 8;
  int pilot_sweeps = 300;
  int burn_sweeps = 300;
  int sweeps = 2000;
  double target_acceptance = 0.3;
  // [run]
  std::uint64_t seed = 1;
  int threads = 1;
  std::string output_dir = "out";

  std::string source;  // the text the config was parsed from

  double gamma_max() const;
};

// Throws ConfigError listing every missing, malformed, unknown or
// out-of-range entry.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
// Re-checks the cross-field constraints (after command-line overrides).
void validate(const ExperimentConfig& cfg);

// Resolved values as a flat section.key -> string map (for manifests).
std::map<std::string, std::string> resolved(const ExperimentConfig& cfg);

}  // namespace brwlab::config
