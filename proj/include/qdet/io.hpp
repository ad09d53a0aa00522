#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "json.hpp"
#include "qdet/bellman.hpp"
#include "qdet/policy.hpp"

namespace qdet {

enum class Refinement { none, coarse, fine };

/// Everything a command needs besides its flags.
struct RunConfig {
  ModelSpec model;
  BeliefPoint pi0 = BeliefPoint::vertex(1, 0);
  double epsilon = 0.05;
  int resolution = 60;
  std::uint64_t seed = 1;
  double horizon = 50.0;
  std::size_t samples = 20000;
  RuleKind rule = RuleKind::hitting;
  SolverSettings settings;
  std::optional<double> empirical_stop = 1e-6;
  std::optional<std::size_t> max_iterations;
  /// Second resolution for the grid-refinement estimate: res/2, 2·res or none.
  Refinement refinement = Refinement::coarse;
  unsigned threads = 0;
};

/// Throws ConfigError naming the offending field.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

nlohmann::json model_to_json(const ModelSpec& model);
ModelSpec model_from_json(const nlohmann::json& j, const std::string& where = "model");

/// Stable 64-bit FNV-1a digest of the model, as 16 hex digits.
std::string model_hash(const ModelSpec& model);

struct TableMeta {
  std::optional<std::vector<double>> pi0;
  std::optional<double> epsilon;
  std::optional<double> horizon;
};

nlohmann::json table_to_json(const ValueTable& table, const TableMeta& meta = {});
ValueTable table_from_json(const nlohmann::json& j, TableMeta* meta = nullptr);
void save_table(const std::string& path, const ValueTable& table, const TableMeta& meta = {});
ValueTable load_table(const std::string& path, TableMeta* meta = nullptr);

/// Per node: pi_1..pi_n, pi, value, h, in_region.
void write_surface_csv(std::ostream& os, const ValueTable& table, double epsilon);

/// Level-set segments: segment, end, pi_1, pi_2, pi.
void write_boundary_csv(std::ostream& os, const StoppingRegion& region);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace qdet
