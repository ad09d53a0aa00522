#include "qdet/scenario.hpp"

#include <istream>
#include <ostream>
#include <string>

#include "json.hpp"

#include "qdet/error.hpp"

namespace qdet {

Scenario sample_scenario(const ModelSpec& model, const BeliefPoint& pi,
                         double horizon, Rng& rng) {
  if (!(horizon > 0.0)) throw DomainError("sample_scenario: horizon must be positive");
  const auto draw = sample_absorption(model.gen, pi, rng);
  Scenario s;
  s.initial_state = draw.initial_state;
  s.theta = draw.theta;
  s.horizon = horizon;

  const double switch_time = std::min(s.theta, horizon);
  double t = rng.exponential(model.lambda0);
  while (t < switch_time) {
    s.arrivals.push_back(t);
    t += rng.exponential(model.lambda0);
  }
  if (s.theta < horizon) {
    // Memorylessness: the post-disorder stream restarts at Θ.
    t = s.theta + rng.exponential(model.lambda1);
    while (t <= horizon) {
      s.arrivals.push_back(t);
      t += rng.exponential(model.lambda1);
    }
  }
  return s;
}

Scenario sample_indexed(const ModelSpec& model, const BeliefPoint& pi,
                        double horizon, std::uint64_t seed, std::uint64_t index) {
  Rng rng(seed, index);
  return sample_scenario(model, pi, horizon, rng);
}

std::vector<Scenario> sample_batch(const ModelSpec& model, const BeliefPoint& pi,
                                   double horizon, std::size_t count,
                                   std::uint64_t seed) {
  std::vector<Scenario> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(sample_indexed(model, pi, horizon, seed, i));
  return out;
}

void write_scenarios(std::ostream& os, std::span<const Scenario> batch) {
  for (const auto& s : batch) {
    nlohmann::json j;
    j["theta"] = s.theta;
    j["arrivals"] = s.arrivals;
    j["horizon"] = s.horizon;
    j["initial_state"] = s.initial_state;
    os << j.dump() << '\n';
  }
}

std::vector<Scenario> read_scenarios(std::istream& is) {
  std::vector<Scenario> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Scenario s;
      s.theta = j.at("theta").get<double>();
      s.arrivals = j.at("arrivals").get<std::vector<double>>();
      s.horizon = j.at("horizon").get<double>();
      s.initial_state = j.value("initial_state", std::size_t{0});
      for (std::size_t k = 1; k < s.arrivals.size(); ++k)
        if (!(s.arrivals[k] > s.arrivals[k - 1]))
          throw DomainError("arrivals not strictly increasing");
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw ConfigError("scenario line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace qdet
