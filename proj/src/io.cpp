#include "qdet/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "qdet/error.hpp"

namespace qdet {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError(where + ": " + what);
}

const json& field(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object()) fail(where, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) fail(where + "." + key, "missing");
  return *it;
}

double number(const json& j, const std::string& where) {
  if (!j.is_number()) fail(where, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(where, "must be finite");
  return v;
}

double positive(const json& j, const std::string& where) {
  const double v = number(j, where);
  if (!(v > 0.0)) fail(where, "must be positive");
  return v;
}

std::int64_t integer(const json& j, const std::string& where) {
  if (!j.is_number_integer()) fail(where, "expected an integer");
  return j.get<std::int64_t>();
}

std::vector<double> numbers(const json& j, const std::string& where) {
  if (!j.is_array()) fail(where, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(number(j[i], where + "[" + std::to_string(i) + "]"));
  }
  return out;
}

PhaseTypeGenerator generator_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) fail(where, "expected an object");
  try {
    if (j.contains("erlang")) {
      const std::string w = where + ".erlang";
      const json& e = j["erlang"];
      const auto phases = integer(field(e, "n", w), w + ".n");
      if (phases < 1 || phases > static_cast<std::int64_t>(kMaxTransient)) {
        fail(w + ".n", "must be in [1, " + std::to_string(kMaxTransient) + "]");
      }
      return build_erlang(static_cast<int>(phases), positive(field(e, "lambda", w), w + ".lambda"));
    }
    if (j.contains("hyperexponential")) {
      const std::string w = where + ".hyperexponential";
      const auto mu = numbers(field(j["hyperexponential"], "mu", w), w + ".mu");
      if (mu.empty() || mu.size() > kMaxTransient) fail(w + ".mu", "bad length");
      for (std::size_t i = 0; i < mu.size(); ++i) {
        if (!(mu[i] > 0.0)) fail(w + ".mu[" + std::to_string(i) + "]", "must be positive");
      }
      return build_hyperexponential(mu);
    }
    const json& rows = field(j, "R", where);
    if (!rows.is_array() || rows.empty() || rows.size() > kMaxTransient) {
      fail(where + ".R", "expected a non-empty square matrix");
    }
    const auto n = static_cast<Eigen::Index>(rows.size());
    PhaseTypeGenerator gen;
    gen.R.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::string rw = where + ".R[" + std::to_string(i) + "]";
      const auto row = numbers(rows[static_cast<std::size_t>(i)], rw);
      if (static_cast<Eigen::Index>(row.size()) != n) fail(rw, "row length differs from row count");
      for (Eigen::Index k = 0; k < n; ++k) gen.R(i, k) = row[static_cast<std::size_t>(k)];
    }
    if (j.contains("r")) {
      const auto r = numbers(j["r"], where + ".r");
      if (static_cast<Eigen::Index>(r.size()) != n) fail(where + ".r", "length differs from R");
      gen.r = Eigen::Map<const Eigen::VectorXd>(r.data(), n);
    } else {
      gen.r = -gen.R.rowwise().sum();
    }
    const auto report = validate_generator(gen);
    if (!report.ok()) fail(where, report.describe());
    return gen;
  } catch (const DomainError& e) {
    fail(where, e.what());
  } catch (const StructuralError& e) {
    fail(where, e.what());
  }
}

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a;", v);
  return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double from_nullable(const json& j, const std::string& where) {
  return j.is_null() ? kInfinity : number(j, where);
}

}  // namespace

json model_to_json(const ModelSpec& model) {
  json R = json::array();
  for (Eigen::Index i = 0; i < model.gen.R.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < model.gen.R.cols(); ++k) row.push_back(model.gen.R(i, k));
    R.push_back(row);
  }
  json r = json::array();
  for (Eigen::Index i = 0; i < model.gen.r.size(); ++i) r.push_back(model.gen.r(i));
  return {{"generator", {{"R", R}, {"r", r}}},
          {"lambda0", model.lambda0},
          {"lambda1", model.lambda1},
          {"c", model.c}};
}

ModelSpec model_from_json(const json& j, const std::string& where) {
  ModelSpec m;
  m.gen = generator_from_json(field(j, "generator", where), where + ".generator");
  m.lambda0 = positive(field(j, "lambda0", where), where + ".lambda0");
  m.lambda1 = positive(field(j, "lambda1", where), where + ".lambda1");
  m.c = positive(field(j, "c", where), where + ".c");
  return m;
}

std::string model_hash(const ModelSpec& model) {
  std::string canon = "n=" + std::to_string(model.n()) + ";";
  canon += hex_double(model.lambda0) + hex_double(model.lambda1) + hex_double(model.c);
  for (Eigen::Index i = 0; i < model.gen.R.rows(); ++i) {
    for (Eigen::Index k = 0; k < model.gen.R.cols(); ++k) canon += hex_double(model.gen.R(i, k));
  }
  for (Eigen::Index i = 0; i < model.gen.r.size(); ++i) canon += hex_double(model.gen.r(i));
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig parse_config(const json& j) {
  if (!j.is_object()) fail("config", "expected a JSON object");
  RunConfig cfg;
  cfg.model = model_from_json(field(j, "model", "config"), "model");
  const std::size_t n = cfg.model.n();
  if (j.contains("initial_belief")) {
    const auto pi = numbers(j["initial_belief"], "initial_belief");
    if (pi.size() != n + 1) {
      fail("initial_belief", "expected " + std::to_string(n + 1) + " entries");
    }
    try {
      cfg.pi0 = BeliefPoint::make(pi);
    } catch (const std::exception& e) {
      fail("initial_belief", e.what());
    }
  } else {
    cfg.pi0 = BeliefPoint::vertex(n, 0);
  }
  if (j.contains("epsilon")) cfg.epsilon = positive(j["epsilon"], "epsilon");
  if (j.contains("resolution")) {
    const auto res = integer(j["resolution"], "resolution");
    if (res < 1 || res > 100000) fail("resolution", "must be in [1, 100000]");
    cfg.resolution = static_cast<int>(res);
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) fail("seed", "expected a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("horizon")) cfg.horizon = positive(j["horizon"], "horizon");
  if (j.contains("samples")) {
    const auto s = integer(j["samples"], "samples");
    if (s < 2) fail("samples", "must be at least 2");
    cfg.samples = static_cast<std::size_t>(s);
  }
  if (j.contains("rule")) {
    try {
      cfg.rule = rule_from_string(j["rule"].get<std::string>());
    } catch (const std::exception& e) {
      fail("rule", e.what());
    }
  }
  if (j.contains("solver")) {
    const json& s = j["solver"];
    if (!s.is_object()) fail("solver", "expected an object");
    if (s.contains("time_step")) cfg.settings.time_step = positive(s["time_step"], "solver.time_step");
    if (s.contains("tie_tolerance")) {
      cfg.settings.tie_tolerance = positive(s["tie_tolerance"], "solver.tie_tolerance");
    }
    if (s.contains("refine_levels")) {
      const auto l = integer(s["refine_levels"], "solver.refine_levels");
      if (l < 0 || l > 6) fail("solver.refine_levels", "must be in [0, 6]");
      cfg.settings.refine_levels = static_cast<int>(l);
    }
    if (s.contains("empirical_stop")) {
      if (s["empirical_stop"].is_null()) {
        cfg.empirical_stop.reset();
      } else {
        cfg.empirical_stop = positive(s["empirical_stop"], "solver.empirical_stop");
      }
    }
    if (s.contains("max_iterations")) {
      const auto m = integer(s["max_iterations"], "solver.max_iterations");
      if (m < 1) fail("solver.max_iterations", "must be at least 1");
      cfg.max_iterations = static_cast<std::size_t>(m);
    }
    if (s.contains("refinement")) {
      const std::string r = s["refinement"].is_string() ? s["refinement"].get<std::string>() : "";
      if (r == "none") cfg.refinement = Refinement::none;
      else if (r == "coarse") cfg.refinement = Refinement::coarse;
      else if (r == "fine") cfg.refinement = Refinement::fine;
      else fail("solver.refinement", "expected \"none\", \"coarse\" or \"fine\"");
    }
    if (s.contains("threads")) {
      const auto t = integer(s["threads"], "solver.threads");
      if (t < 0) fail("solver.threads", "must be non-negative");
      cfg.threads = static_cast<unsigned>(t);
    }
  }
  return cfg;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError(path + ": cannot write");
  out << j.dump(2) << '\n';
}

RunConfig load_config(const std::string& path) { return parse_config(read_json_file(path)); }

json table_to_json(const ValueTable& table, const TableMeta& meta) {
  json j;
  j["format"] = "qdet-value-table";
  j["version"] = 1;
  j["model"] = model_to_json(table.model);
  j["model_hash"] = model_hash(table.model);
  j["transient_states"] = table.grid->transient_states();
  j["resolution"] = table.grid->resolution();
  j["mode"] = to_string(table.mode);
  j["m"] = table.m;
  j["t_limit"] = table.t_limit;
  j["delta"] = table.delta;
  j["time_step"] = table.time_step;
  j["certified_bound"] = finite_or_null(table.certified_bound);
  j["empirical_delta"] = finite_or_null(table.empirical_delta);
  j["history"] = table.history;
  j["values"] = table.values;
  if (!table.iterates.empty()) j["iterates"] = table.iterates;
  json run = json::object();
  if (meta.pi0) run["initial_belief"] = *meta.pi0;
  if (meta.epsilon) run["epsilon"] = *meta.epsilon;
  if (meta.horizon) run["horizon"] = *meta.horizon;
  if (!run.empty()) j["run"] = run;
  return j;
}

ValueTable table_from_json(const json& j, TableMeta* meta) {
  const std::string where = "table";
  if (!j.is_object() || j.value("format", "") != "qdet-value-table") {
    fail(where, "not a value table");
  }
  ValueTable t;
  t.model = model_from_json(field(j, "model", where), where + ".model");
  const std::string stored = field(j, "model_hash", where).get<std::string>();
  if (stored != model_hash(t.model)) fail(where + ".model_hash", "does not match the embedded model");
  const auto n = integer(field(j, "transient_states", where), where + ".transient_states");
  if (n != static_cast<std::int64_t>(t.model.n())) fail(where + ".transient_states", "mismatch");
  const auto res = integer(field(j, "resolution", where), where + ".resolution");
  if (res < 1) fail(where + ".resolution", "must be positive");
  t.grid = std::make_shared<const SimplexGrid>(static_cast<std::size_t>(n), static_cast<int>(res));
  try {
    t.mode = horizon_mode_from_string(field(j, "mode", where).get<std::string>());
  } catch (const ConfigError& e) {
    fail(where + ".mode", e.what());
  }
  t.m = static_cast<std::size_t>(integer(field(j, "m", where), where + ".m"));
  t.t_limit = number(field(j, "t_limit", where), where + ".t_limit");
  t.delta = number(field(j, "delta", where), where + ".delta");
  t.time_step = j.contains("time_step") ? number(j["time_step"], where + ".time_step") : 0.0;
  t.certified_bound = from_nullable(field(j, "certified_bound", where), where + ".certified_bound");
  if (j.contains("empirical_delta")) {
    t.empirical_delta = from_nullable(j["empirical_delta"], where + ".empirical_delta");
  }
  if (j.contains("history")) t.history = numbers(j["history"], where + ".history");
  t.values = numbers(field(j, "values", where), where + ".values");
  if (t.values.size() != t.grid->size()) fail(where + ".values", "length differs from node count");
  if (j.contains("iterates")) {
    const json& its = j["iterates"];
    if (!its.is_array()) fail(where + ".iterates", "expected an array");
    for (std::size_t k = 0; k < its.size(); ++k) {
      t.iterates.push_back(numbers(its[k], where + ".iterates[" + std::to_string(k) + "]"));
      if (t.iterates.back().size() != t.grid->size()) {
        fail(where + ".iterates[" + std::to_string(k) + "]", "length differs from node count");
      }
    }
  }
  for (std::size_t k = 0; k < t.values.size(); ++k) {
    const double h = 1.0 - t.grid->node(k)[static_cast<std::size_t>(n)];
    if (!(t.values[k] >= 0.0 && t.values[k] <= h + 1e-12)) {
      fail(where + ".values[" + std::to_string(k) + "]", "outside [0, h]");
    }
  }
  if (meta && j.contains("run")) {
    const json& run = j["run"];
    if (run.contains("initial_belief")) meta->pi0 = numbers(run["initial_belief"], where + ".run.initial_belief");
    if (run.contains("epsilon")) meta->epsilon = number(run["epsilon"], where + ".run.epsilon");
    if (run.contains("horizon")) meta->horizon = number(run["horizon"], where + ".run.horizon");
  }
  return t;
}

void save_table(const std::string& path, const ValueTable& table, const TableMeta& meta) {
  std::ofstream out(path);
  if (!out) throw ConfigError(path + ": cannot write");
  out << table_to_json(table, meta).dump() << '\n';
}

ValueTable load_table(const std::string& path, TableMeta* meta) {
  return table_from_json(read_json_file(path), meta);
}

void write_surface_csv(std::ostream& os, const ValueTable& table, double epsilon) {
  const auto& grid = *table.grid;
  const std::size_t n = grid.transient_states();
  const StoppingRegion region = stopping_region(table, epsilon);
  for (std::size_t i = 1; i <= n; ++i) os << "pi_" << i << ',';
  os << "pi,value,h,in_region\n";
  char buf[32];
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto y = grid.node(k);
    for (double v : y) {
      std::snprintf(buf, sizeof buf, "%.10g,", v);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "%.12g,", table.values[k]);
    os << buf;
    std::snprintf(buf, sizeof buf, "%.12g,", 1.0 - y[n]);
    os << buf << (region.member[k] ? 1 : 0) << '\n';
  }
}

void write_boundary_csv(std::ostream& os, const StoppingRegion& region) {
  os << "segment,end,pi_1,pi_2,pi\n";
  char buf[96];
  for (std::size_t s = 0; s < region.boundary.size(); ++s) {
    for (int e = 0; e < 2; ++e) {
      const auto& p = region.boundary[s][static_cast<std::size_t>(e)];
      std::snprintf(buf, sizeof buf, "%zu,%d,%.10g,%.10g,%.10g\n", s, e, p[0], p[1], p[2]);
      os << buf;
    }
  }
}

}  // namespace qdet
