#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qdet/io.hpp"

namespace qdet {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ValidationSuite {
  std::vector<CheckResult> checks;
  bool pass() const;
  nlohmann::json to_json() const;
};

/// Cross-module property checks on the configured model: generator,
/// simplex and semigroup properties of the flow, filter-oracle agreement,
/// σ₁ law, and iterate structure on a coarse grid. With a table, its
/// structural invariants are checked as well.
ValidationSuite run_validation(const RunConfig& cfg, const ValueTable* table = nullptr,
                               int resolution = 16);

}  // namespace qdet
