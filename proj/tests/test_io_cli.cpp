#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "qdet/error.hpp"
#include "qdet/io.hpp"

using namespace qdet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const json kFigure1 = json::parse(R"({
  "model": {"generator": {"erlang": {"n": 2, "lambda": 3}}, "lambda0": 6, "lambda1": 5, "c": 1},
  "initial_belief": [1, 0, 0], "epsilon": 0.05, "resolution": 12, "seed": 7,
  "horizon": 50, "samples": 400
})");

std::string error_of(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("qdet_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

struct Run {
  int code;
  std::string out;
};

Run cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt";
  const std::string cmd = std::string(QDET_CLI) + " " + args + " > " + out.string() + " 2> " +
                          (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out)};
}

std::string repo_config(const std::string& name) {
  return (fs::path(QDET_SOURCE_DIR) / "configs" / name).string();
}

std::size_t lines(const std::string& s) {
  std::size_t n = 0;
  for (char ch : s) n += ch == '\n';
  return n;
}

}  // namespace

TEST_SUITE("io_cli") {

TEST_CASE("config parsing and field-level errors") {
  const auto cfg = parse_config(kFigure1);
  CHECK(cfg.model.n() == 2);
  CHECK(cfg.model.lambda0 == 6.0);
  CHECK(cfg.resolution == 12);
  CHECK(cfg.pi0 == BeliefPoint::vertex(2, 0));

  auto j = kFigure1;
  j.erase("model");
  CHECK(error_of(j).find("model") != std::string::npos);
  j = kFigure1;
  j["model"]["lambda0"] = -1;
  CHECK(error_of(j).find("model.lambda0") != std::string::npos);
  j = kFigure1;
  j["initial_belief"] = {0.5, 0.5};
  CHECK(error_of(j).find("initial_belief") != std::string::npos);
  j = kFigure1;
  j["epsilon"] = 0;
  CHECK(error_of(j).find("epsilon") != std::string::npos);
  j = kFigure1;
  j["model"]["generator"] = json::parse(R"({"R": [[-2, 1], [0, -3]], "r": [1, 2]})");
  CHECK(error_of(j).find("model.generator") != std::string::npos);
  j["model"]["generator"] = json::parse(R"({"R": [[-2, 1], [0, -3]]})");
  CHECK(error_of(j).empty());
  CHECK(parse_config(j).model.gen.r(1) == 3.0);
  j = kFigure1;
  j["solver"] = json::parse(R"({"refinement": "sideways"})");
  CHECK(error_of(j).find("solver.refinement") != std::string::npos);
}

TEST_CASE("model hash") {
  const auto a = parse_config(kFigure1).model;
  auto b = a;
  CHECK(model_hash(a) == model_hash(b));
  CHECK(model_hash(a).size() == 16);
  b.c = 1.0000000001;
  CHECK(model_hash(a) != model_hash(b));
  CHECK(model_hash(model_from_json(model_to_json(a))) == model_hash(a));
}

TEST_CASE("value table roundtrip and integrity checks") {
  const auto cfg = parse_config(kFigure1);
  IterateOptions opt;
  opt.keep_iterates = true;
  opt.threads = 1;
  const auto table = value_iterate(cfg.model, std::make_shared<SimplexGrid>(2, 6),
                                   truncated_plan(cfg.model, 1e-6, 3), opt);
  TableMeta meta;
  meta.epsilon = 0.05;
  meta.pi0 = std::vector<double>{1, 0, 0};
  const auto j = table_to_json(table, meta);
  TableMeta back_meta;
  const auto back = table_from_json(j, &back_meta);
  CHECK(back.values == table.values);
  CHECK(back.iterates == table.iterates);
  CHECK(back.m == table.m);
  CHECK(back.mode == table.mode);
  CHECK(back.delta == table.delta);
  CHECK(back.certified_bound == table.certified_bound);
  CHECK(back.history == table.history);
  CHECK(back_meta.epsilon == 0.05);

  auto bad = j;
  bad["model"]["lambda0"] = 7;
  CHECK_THROWS_AS(table_from_json(bad), ConfigError);
  bad = j;
  bad["values"][0] = 2.0;
  CHECK_THROWS_AS(table_from_json(bad), ConfigError);
  bad = j;
  bad["format"] = "something-else";
  CHECK_THROWS_AS(table_from_json(bad), ConfigError);

  std::ostringstream csv;
  write_surface_csv(csv, table, 0.05);
  CHECK(lines(csv.str()) == table.grid->size() + 1);
  CHECK(csv.str().rfind("pi_1,pi_2,pi,value,h,in_region\n", 0) == 0);
}

TEST_CASE("solve writes deterministic exports") {
  const auto dir = scratch("solve");
  const auto cfg_path = dir / "fig1.json";
  spit(cfg_path, kFigure1.dump());
  auto r = cli("solve --config " + cfg_path.string() + " --out " + (dir / "a").string(), dir);
  REQUIRE(r.code == 0);
  r = cli("solve --config " + cfg_path.string() + " --out " + (dir / "b").string(), dir);
  REQUIRE(r.code == 0);
  const auto report = json::parse(slurp(dir / "a" / "report.json"));
  CHECK(report.at("mode") == "truncated");
  CHECK(report.at("nodes") == 91);
  CHECK(report.contains("certified_bound"));
  CHECK(report.at("grid_refinement").contains("sup_delta"));
  const auto surface = slurp(dir / "a" / "surface.csv");
  CHECK(lines(surface) == 92);
  CHECK(surface == slurp(dir / "b" / "surface.csv"));
  CHECK(fs::exists(dir / "a" / "boundary.csv"));
  CHECK(fs::exists(dir / "a" / "value_table.json"));
  // The exported table loads and matches the model.
  const auto table = load_table((dir / "a" / "value_table.json").string());
  CHECK(model_hash(table.model) == report.at("model_hash").get<std::string>());
}

TEST_CASE("solve mode follows the horizon bound") {
  const auto dir = scratch("modes");
  auto r = cli("solve --config " + repo_config("hyperexp.json") + " --resolution 8 --out " +
                   (dir / "h").string(), dir);
  REQUIRE(r.code == 0);
  CHECK(json::parse(slurp(dir / "h" / "report.json")).at("mode") == "truncated");
  r = cli("solve --config " + repo_config("hyperexp_bounded.json") + " --resolution 8 --out " +
              (dir / "b").string(), dir);
  REQUIRE(r.code == 0);
  const auto rep = json::parse(slurp(dir / "b" / "report.json"));
  CHECK(rep.at("mode") == "bounded");
  CHECK(rep.at("tstar").is_number());
}

TEST_CASE("detect agrees with the offline detector") {
  const auto dir = scratch("detect");
  const auto cfg_path = dir / "fig1.json";
  spit(cfg_path, kFigure1.dump());
  REQUIRE(cli("solve --config " + cfg_path.string() + " --out " + (dir / "t").string(), dir).code == 0);
  const auto table_path = (dir / "t" / "value_table.json").string();
  const auto table = std::make_shared<const ValueTable>(load_table(table_path));
  const auto cfg = parse_config(kFigure1);
  const auto policy = Policy::hitting(table, cfg.epsilon, cfg.pi0);

  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto s = sample_indexed(cfg.model, cfg.pi0, cfg.horizon, 300, i);
    std::ostringstream ev;
    ev << "# model_hash=" << model_hash(cfg.model) << " horizon=" << cfg.horizon << "\n";
    ev.precision(17);
    for (double a : s.arrivals) ev << a << "\n";
    spit(dir / "events.txt", ev.str());
    const auto r = cli("detect --table " + table_path + " --events " + (dir / "events.txt").string(), dir);
    const auto out = run_policy(policy, s);
    REQUIRE(r.code == (out.censored ? 4 : 0));
    const auto rec = json::parse(r.out);
    if (!out.censored) CHECK(rec.at("alarm_time").get<double>() == out.tau);
    CHECK(rec.at("rule") == "hitting");
  }

  // Out of order.
  spit(dir / "bad.txt", "0.5\n0.2\n");
  CHECK(cli("detect --table " + table_path + " --events " + (dir / "bad.txt").string(), dir).code == 2);
  // Wrong model hash in the header.
  spit(dir / "hash.txt", "# model_hash=0000000000000000\n0.1\n");
  CHECK(cli("detect --table " + table_path + " --events " + (dir / "hash.txt").string(), dir).code == 2);

  // Absorbed start alarms at once on an empty stream.
  auto absorbed = kFigure1;
  absorbed["initial_belief"] = {0, 0, 1};
  spit(dir / "abs.json", absorbed.dump());
  spit(dir / "empty.txt", "");
  auto r = cli("detect --table " + table_path + " --config " + (dir / "abs.json").string() +
                   " --events " + (dir / "empty.txt").string(), dir);
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out).at("alarm_time").get<double>() == 0.0);

  // A short horizon with no arrivals is censored.
  r = cli("detect --table " + table_path + " --horizon 0.01 --events " + (dir / "empty.txt").string(), dir);
  CHECK(r.code == 4);
  CHECK(json::parse(r.out).at("censored") == true);
}

TEST_CASE("evaluate, validate and input errors") {
  const auto dir = scratch("eval");
  auto cfg = kFigure1;
  cfg["initial_belief"] = {0.4, 0.3, 0.3};
  cfg["samples"] = 4000;
  spit(dir / "c.json", cfg.dump());
  REQUIRE(cli("solve --config " + (dir / "c.json").string() + " --out " + (dir / "t").string(), dir).code == 0);
  const auto table_path = (dir / "t" / "value_table.json").string();
  auto r = cli("evaluate --table " + table_path + " --config " + (dir / "c.json").string() +
                   " --rule immediate --out " + (dir / "outcomes.csv").string(), dir);
  REQUIRE(r.code == 0);
  const auto est = json::parse(r.out);
  CHECK(std::abs(est.at("risk").get<double>() - 0.7) <= 3 * est.at("standard_error").get<double>());
  CHECK(lines(slurp(dir / "outcomes.csv")) == 4001);

  CHECK(cli("validate --config " + (dir / "c.json").string(), dir).code == 0);

  CHECK(cli("solve --config " + (dir / "missing.json").string() + " --out " + (dir / "x").string(), dir).code == 2);
  CHECK(cli("solve", dir).code == 2);
  CHECK(cli("frobnicate", dir).code == 2);
  auto broken = kFigure1;
  broken["model"]["c"] = -2;
  spit(dir / "broken.json", broken.dump());
  r = cli("solve --config " + (dir / "broken.json").string() + " --out " + (dir / "y").string(), dir);
  CHECK(r.code == 2);
  CHECK(slurp(dir / "stderr.txt").find("model.c") != std::string::npos);
}

}
