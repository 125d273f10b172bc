#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "brwlab/config.hpp"
#include "brwlab/io.hpp"
#include "json.hpp"

using namespace brwlab;
using config::ConfigError;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> problems_of(const std::string& text) {
  try {
    config::parse_config(text);
  } catch (const ConfigError& e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string>& ps, const std::string& what) {
  for (const auto& p : ps)
    if (p.find(what) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("ini syntax") {
  std::vector<std::string> problems;
  const auto data = config::parse_ini("# top\n[a]\nx = 1 ; note\n y=two words \n[b]\nz=\n", problems);
  CHECK(problems.empty());
  CHECK(data.at("a").at("x") == "1");
  CHECK(data.at("a").at("y") == "two words");
  CHECK(data.at("b").at("z") == "");

  problems.clear();
  config::parse_ini("x = 1\n[a\n[a]\nnoequals\n= 3\nk = 1\nk = 2\n", problems);
  REQUIRE(problems.size() == 5);
  CHECK(problems[0] == "line 1: key outside any [section]");
  CHECK(problems[1] == "line 2: malformed section header");
  CHECK(problems[2] == "line 4: expected key = value");
  CHECK(problems[3] == "line 5: empty key");
  CHECK(problems[4] == "line 7: duplicate key a.k");
}

TEST_CASE("defaults") {
  const auto c = config::parse_config("");
  CHECK(c.d == 2);
  CHECK(c.gamma == 0.5);
  CHECK(c.pool_size == 1000000);
  CHECK(c.max_level == 40);
  CHECK(!c.lambda.has_value());
  CHECK(c.k == 12);
  CHECK(c.a_values == std::vector<int>{2, 4, 6});
  CHECK(c.chains == 8);
  CHECK(c.target_acceptance == 0.3);
  CHECK(c.cov_d == std::vector<int>{2, 3});
  CHECK(c.output_dir == "out");
}

TEST_CASE("values and lists") {
  const auto c = config::parse_config(
      "[model]\nd = 4\ngamma = 1.0\n[tilt]\nlambda = 2.5\na = 1, 3,5\n[small_ball]\ns = 0.1,0.2\n[run]\noutput = x/y\n");
  CHECK(c.d == 4);
  CHECK(c.gamma == 1.0);
  CHECK(*c.lambda == 2.5);
  CHECK(c.a_values == std::vector<int>{1, 3, 5});
  CHECK(c.small_ball_s == std::vector<double>{0.1, 0.2});
  CHECK(c.output_dir == "x/y");
  CHECK(!config::parse_config("[tilt]\nlambda = auto\n").lambda.has_value());
}

TEST_CASE("every problem is reported") {
  const auto ps = problems_of("[model]\nd = 1\ngamma = abc\nfoo = 3\n[pool]\nsize = 10\n[tilt]\nlambda = soon\nk = 0\n");
  CHECK(mentions(ps, "model.d must lie in [2, 64]"));
  CHECK(mentions(ps, "model.gamma: cannot read 'abc'"));
  CHECK(mentions(ps, "unknown key model.foo"));
  CHECK(mentions(ps, "pool.size must be at least 1000"));
  CHECK(mentions(ps, "tilt.lambda: expected a number or 'auto'"));
  CHECK(mentions(ps, "tilt.k must lie in [1, 20]"));
  CHECK(ps.size() >= 6);
  CHECK(mentions(problems_of("[tilt]\na = 1, x\n"), "tilt.a: expected a comma-separated list"));
  CHECK(mentions(problems_of("[tilt]\nk = 6\na = 2, 6\n"), "tilt.a entries must lie in [0, k)"));
}

TEST_CASE("gamma must stay below sqrt(2 ln d)") {
  CHECK(problems_of("[model]\nd = 2\ngamma = 1.17\n").empty());
  CHECK(mentions(problems_of("[model]\nd = 2\ngamma = 1.18\n"), "model.gamma must lie in (0, sqrt(2 ln d))"));
  CHECK(mentions(problems_of("[model]\ngamma = 0\n"), "model.gamma"));
  CHECK(problems_of("[model]\nd = 4\ngamma = 1.6\n").empty());
}

TEST_CASE("validate after overrides") {
  auto c = config::parse_config("");
  CHECK_NOTHROW(config::validate(c));
  c.threads = 0;
  CHECK_THROWS_AS(config::validate(c), ConfigError);
  c.threads = 4;
  c.min_level = 50;
  CHECK_THROWS_AS(config::validate(c), ConfigError);
}

TEST_CASE("resolved configuration") {
  const auto r = config::resolved(config::parse_config("[model]\ngamma = 0.75\n[tilt]\na = 2,4\n"));
  CHECK(r.at("model.gamma") == "0.75");
  CHECK(r.at("tilt.lambda") == "auto");
  CHECK(r.at("tilt.a") == "2,4");
  CHECK(r.at("small_ball.s") == "");
  CHECK(r.size() == 28);
}

TEST_CASE("load_config") {
  CHECK_THROWS_AS(config::load_config("/nonexistent/brwlab.ini"), ConfigError);
  const fs::path p = fs::temp_directory_path() / "brwlab_test_load.ini";
  {
    std::ofstream out(p);
    out << "[model]\nd = 3\n";
  }
  const auto c = config::load_config(p.string());
  CHECK(c.d == 3);
  CHECK(c.source == "[model]\nd = 3\n");
  fs::remove(p);
}

TEST_CASE("git blob hash") {
  CHECK(io::git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(io::git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("number format round-trips") {
  CHECK(io::format_number(0.1) == "0.1");
  CHECK(io::format_number(1.0) == "1");
  CHECK(io::format_number(-2.5e-300) == "-2.5e-300");
  CHECK(io::format_number(std::nan("")) == "nan");
  CHECK(io::format_number(-HUGE_VAL) == "-inf");
  for (double v : {1.0 / 3.0, 2.718281828459045, 1e-17, 123456789.123})
    CHECK(std::stod(io::format_number(v)) == v);
}

TEST_CASE("csv writer and schema") {
  const fs::path dir = fs::temp_directory_path() / "brwlab_test_csv";
  fs::create_directories(dir);
  const io::CsvSchema s{"t.csv", "test", {{"name", "a label"}, {"x", "a number"}, {"n", "a count"}}};
  io::CsvWriter w(dir / "t.csv", s);
  w.row({std::string("a"), 0.5, 3LL});
  CHECK_THROWS_AS(w.row({std::string("b"), 1.0}), std::logic_error);
  w.close();
  CHECK(io::read_file(dir / "t.csv") == "name,x,n\na,0.5,3\n");
  io::write_schema(dir, {s});
  const auto j = nlohmann::json::parse(io::read_file(dir / "schema.json"));
  CHECK(j["schema_version"] == io::kSchemaVersion);
  CHECK(j["files"][0]["file"] == "t.csv");
  CHECK(j["files"][0]["columns"].size() == 3);
  CHECK(j["files"][0]["columns"][1]["name"] == "x");
  fs::remove_all(dir);
  CHECK_THROWS_AS(io::read_file(dir / "t.csv"), std::runtime_error);
}
