#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "qdet/flow.hpp"
#include "qdet/rng.hpp"

namespace qdet {

/// One draw of the hidden chain and the observed arrivals up to `horizon`.
struct Scenario {
  std::size_t initial_state = 0;  // == n for Δ
  double theta = 0.0;
  std::vector<double> arrivals;
  double horizon = 0.0;
};

Scenario sample_scenario(const ModelSpec& model, const BeliefPoint& pi,
                         double horizon, Rng& rng);

/// Scenario `index` of the batch identified by `seed`; equal to element
/// `index` of sample_batch(model, pi, horizon, count, seed).
Scenario sample_indexed(const ModelSpec& model, const BeliefPoint& pi,
                        double horizon, std::uint64_t seed, std::uint64_t index);

std::vector<Scenario> sample_batch(const ModelSpec& model, const BeliefPoint& pi,
                                   double horizon, std::size_t count,
                                   std::uint64_t seed);

/// JSON lines: {"theta": .., "arrivals": [..], "horizon": .., "initial_state": ..}
void write_scenarios(std::ostream& os, std::span<const Scenario> batch);
std::vector<Scenario> read_scenarios(std::istream& is);

}  // namespace qdet
