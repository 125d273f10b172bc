#include "brwlab/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

#include <boost/algorithm/string/trim.hpp>
#include <boost/lexical_cast.hpp>

namespace brwlab::config {

namespace {

std::string join_problems(const std::vector<std::string>& p) {
  std::ostringstream os;
  os << p.size() << " configuration problem" << (p.size() == 1 ? "" : "s") << ":";
  for (const auto& s : p) os << "\n  - " << s;
  return os.str();
}

template <class T>
std::optional<T> convert(const std::string& raw) {
  if constexpr (std::is_unsigned_v<T>)
    if (!raw.empty() && raw.front() == '-') return std::nullopt;
  try {
    return boost::lexical_cast<T>(raw);
  } catch (const boost::bad_lexical_cast&) {
    return std::nullopt;
  }
}

template <class T>
std::optional<std::vector<T>> convert_list(const std::string& raw) {
  std::vector<T> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    boost::algorithm::trim(item);
    auto v = convert<T>(item);
    if (!v) return std::nullopt;
    out.push_back(*v);
  }
  return out;
}

// Reads known keys from the parsed file, noting type errors and leftovers.
class Reader {
 public:
  Reader(IniData data, std::vector<std::string>& problems) : data_(std::move(data)), problems_(problems) {}

  template <class T>
  void get(const std::string& section, const std::string& key, T& out) {
    const auto raw = take(section, key);
    if (!raw) return;
    if (auto v = convert<T>(*raw)) out = *v;
    else problems_.push_back(section + "." + key + ": cannot read '" + *raw + "'");
  }

  template <class T>
  void get_list(const std::string& section, const std::string& key, std::vector<T>& out) {
    const auto raw = take(section, key);
    if (!raw) return;
    if (auto v = convert_list<T>(*raw); v && !v->empty()) out = *v;
    else problems_.push_back(section + "." + key + ": expected a comma-separated list, got '" + *raw + "'");
  }

  std::optional<std::string> take(const std::string& section, const std::string& key) {
    const auto s = data_.find(section);
    if (s == data_.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    std::string v = k->second;
    s->second.erase(k);
    return v;
  }

  void report_unknown() {
    for (const auto& [section, keys] : data_)
      for (const auto& [key, value] : keys) problems_.push_back("unknown key " + section + "." + key);
  }

 private:
  IniData data_;
  std::vector<std::string>& problems_;
};

void check(std::vector<std::string>& p) {
  if (!p.empty()) throw ConfigError(p);
}

void collect(const ExperimentConfig& c, std::vector<std::string>& p) {
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) p.push_back(what);
  };
  need(c.d >= 2 && c.d <= 64, "model.d must lie in [2, 64]");
  if (c.d >= 2) {
    std::ostringstream os;
    os << "model.gamma must lie in (0, sqrt(2 ln d)) = (0, " << c.gamma_max() << ")";
    need(c.gamma > 0.0 && c.gamma < c.gamma_max(), os.str());
  }
  need(c.pool_size >= 1000, "pool.size must be at least 1000");
  need(c.pool_burn_in >= 1, "pool.burn_in must be positive");
  need(c.pool_max_extra >= 0, "pool.max_extra must be non-negative");
  need(c.half_width > 0.0, "grid.half_width must be positive");
  need(c.spacing > 0.0 && c.spacing < 1.0, "grid.spacing must lie in (0, 1)");
  need(c.max_level >= 4 && c.max_level <= 200, "levels.max_level must lie in [4, 200]");
  need(c.min_level >= 0 && c.min_level <= c.max_level, "levels.min_level must lie in [0, max_level]");
  need(c.level_tol > 0.0, "levels.tol must be positive");
  for (int d : c.cov_d) need(d >= 2 && d <= 16, "covariance.d entries must lie in [2, 16]");
  need(c.cov_max_n >= 0 && c.cov_max_n <= 12, "covariance.max_n must lie in [0, 12]");
  need(c.cov_replicas >= 2, "covariance.replicas must be at least 2");
  for (double s : c.small_ball_s) need(s > 0.0 && s < 1.0, "small_ball.s entries must lie in (0, 1)");
  need(c.small_ball_min_count >= 1, "small_ball.min_count must be positive");
  if (c.lambda) need(*c.lambda > 0.0, "tilt.lambda must be positive or 'auto'");
  need(c.k >= 1 && c.k <= 20, "tilt.k must lie in [1, 20]");
  for (int a : c.a_values) need(a >= 0 && a < c.k, "tilt.a entries must lie in [0, k)");
  need(c.chains >= 2, "tilt.chains must be at least 2");
  need(c.pilot_sweeps >= 0 && c.burn_sweeps >= 0, "tilt.pilot_sweeps and tilt.burn_sweeps must be non-negative");
  need(c.sweeps >= 20, "tilt.sweeps must be at least 20");
  need(c.target_acceptance > 0.0 && c.target_acceptance < 1.0, "tilt.target_acceptance must lie in (0, 1)");
  need(c.threads >= 1 && c.threads <= 1024, "run.threads must lie in [1, 1024]");
  need(!c.output_dir.empty(), "run.output must not be empty");
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

double ExperimentConfig::gamma_max() const { return std::sqrt(2.0 * std::log(static_cast<double>(d))); }

IniData parse_ini(const std::string& text, std::vector<std::string>& problems) {
  IniData data;
  std::istringstream is(text);
  std::string line, section;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (const auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
    boost::algorithm::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        problems.push_back("line " + std::to_string(no) + ": malformed section header");
        continue;
      }
      section = boost::algorithm::trim_copy(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(no) + ": expected key = value");
      continue;
    }
    if (section.empty()) {
      problems.push_back("line " + std::to_string(no) + ": key outside any [section]");
      continue;
    }
    const std::string key = boost::algorithm::trim_copy(line.substr(0, eq));
    const std::string value = boost::algorithm::trim_copy(line.substr(eq + 1));
    if (key.empty()) {
      problems.push_back("line " + std::to_string(no) + ": empty key");
      continue;
    }
    if (!data[section].emplace(key, value).second)
      problems.push_back("line " + std::to_string(no) + ": duplicate key " + section + "." + key);
  }
  return data;
}

ExperimentConfig parse_config(const std::string& text) {
  std::vector<std::string> problems;
  Reader r(parse_ini(text, problems), problems);
  ExperimentConfig c;
  c.source = text;
  r.get("model", "d", c.d);
  r.get("model", "gamma", c.gamma);
  r.get("pool", "size", c.pool_size);
  r.get("pool", "seed", c.pool_seed);
  r.get("pool", "burn_in", c.pool_burn_in);
  r.get("pool", "max_extra", c.pool_max_extra);
  r.get("grid", "half_width", c.half_width);
  r.get("grid", "spacing", c.spacing);
  r.get("levels", "max_level", c.max_level);
  r.get("levels", "min_level", c.min_level);
  r.get("levels", "tol", c.level_tol);
  r.get_list("covariance", "d", c.cov_d);
  r.get("covariance", "max_n", c.cov_max_n);
  r.get("covariance", "replicas", c.cov_replicas);
  r.get_list("small_ball", "s", c.small_ball_s);
  r.get("small_ball", "min_count", c.small_ball_min_count);
  if (auto raw = r.take("tilt", "lambda")) {
    if (*raw == "auto") c.lambda.reset();
    else if (auto v = convert<double>(*raw)) c.lambda = *v;
    else problems.push_back("tilt.lambda: expected a number or 'auto', got '" + *raw + "'");
  }
  if (auto raw = r.take("tilt", "certificate")) c.certificate = *raw;
  r.get("tilt", "k", c.k);
  r.get_list("tilt", "a", c.a_values);
  r.get("tilt", "chains", c.chains);
  r.get("tilt", "pilot_sweeps", c.pilot_sweeps);
  r.get("tilt", "burn_sweeps", c.burn_sweeps);
  r.get("tilt", "sweeps", c.sweeps);
  r.get("tilt", "target_acceptance", c.target_acceptance);
  r.get("run", "seed", c.seed);
  r.get("run", "threads", c.threads);
  if (auto raw = r.take("run", "output")) c.output_dir = *raw;
  r.report_unknown();
  collect(c, problems);
  check(problems);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file '" + path + "'"});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void validate(const ExperimentConfig& cfg) {
  std::vector<std::string> problems;
  collect(cfg, problems);
  check(problems);
}

std::map<std::string, std::string> resolved(const ExperimentConfig& c) {
  auto num = [](auto v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  auto list = [&](const auto& xs) {
    std::string s;
    for (const auto& x : xs) s += (s.empty() ? "" : ",") + num(x);
    return s;
  };
  return {
      {"model.d", num(c.d)},
      {"model.gamma", num(c.gamma)},
      {"pool.size", num(c.pool_size)},
      {"pool.seed", num(c.pool_seed)},
      {"pool.burn_in", num(c.pool_burn_in)},
      {"pool.max_extra", num(c.pool_max_extra)},
      {"grid.half_width", num(c.half_width)},
      {"grid.spacing", num(c.spacing)},
      {"levels.max_level", num(c.max_level)},
      {"levels.min_level", num(c.min_level)},
      {"levels.tol", num(c.level_tol)},
      {"covariance.d", list(c.cov_d)},
      {"covariance.max_n", num(c.cov_max_n)},
      {"covariance.replicas", num(c.cov_replicas)},
      {"small_ball.s", list(c.small_ball_s)},
      {"small_ball.min_count", num(c.small_ball_min_count)},
      {"tilt.lambda", c.lambda ? num(*c.lambda) : std::string("auto")},
      {"tilt.certificate", c.certificate},
      {"tilt.k", num(c.k)},
      {"tilt.a", list(c.a_values)},
      {"tilt.chains", num(c.chains)},
      {"tilt.pilot_sweeps", num(c.pilot_sweeps)},
      {"tilt.burn_sweeps", num(c.burn_sweeps)},
      {"tilt.sweeps", num(c.sweeps)},
      {"tilt.target_acceptance", num(c.target_acceptance)},
      {"run.seed", num(c.seed)},
      {"run.threads", num(c.threads)},
      {"run.output", c.output_dir},
  };
}

}  // namespace brwlab::config
