#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "qdet/phase_type.hpp"

namespace qdet {

/// Largest number of transient states the grid supports.
inline constexpr std::size_t kMaxTransient = 8;

/// Uniform lattice on the simplex D = {y ∈ [0,1]^{n+1} : Σy = 1} with
/// spacing 1/resolution, split into simplices by the Freudenthal (Kuhn)
/// triangulation of the suffix-sum coordinates z_j = N·(y_j + … + y_n).
///
/// A point on a shared face is assigned to the cell picked by sorting the
/// fractional parts of z in descending order, ties by ascending index.
/// Because every cell vertex lies on the lattice, any function that is
/// affine on D is interpolated exactly.
class SimplexGrid {
 public:
  struct Location {
    std::array<std::size_t, kMaxTransient + 1> vertex{};
    std::array<double, kMaxTransient + 1> weight{};
  };

  SimplexGrid(std::size_t transient_states, int resolution);

  std::size_t transient_states() const { return n_; }
  std::size_t dim() const { return n_ + 1; }
  int resolution() const { return res_; }
  std::size_t size() const { return node_count_; }

  /// Coordinates (π_1, …, π_n, π) of node k.
  std::span<const double> node(std::size_t k) const {
    return {coords_.data() + k * dim(), dim()};
  }
  /// Integer coordinates (multiples of 1/resolution) of node k.
  std::span<const int> lattice(std::size_t k) const {
    return {lattice_.data() + k * dim(), dim()};
  }
  BeliefPoint belief(std::size_t k) const { return BeliefPoint::make(node(k)); }

  /// Node index for integer coordinates summing to the resolution, or
  /// size() when no such node exists.
  std::size_t find(std::span<const int> counts) const;

  /// Cell containing y and the barycentric weights of its n+1 vertices.
  Location locate(std::span<const double> y) const;

  double interpolate(std::span<const double> values, std::span<const double> y) const;

  /// Every simplex of the triangulation as n+1 node indices.
  std::vector<std::vector<std::size_t>> cells() const;

 private:
  std::size_t lookup(std::span<const int> z) const;

  std::size_t n_;
  int res_;
  std::size_t node_count_ = 0;
  std::vector<double> coords_;
  std::vector<int> lattice_;
  std::vector<std::size_t> index_;  // dense over z ∈ [0, N]^n
};

/// Bounded function on D evaluated at raw coordinates (π_1, …, π_n, π).
class ValueFunction {
 public:
  virtual ~ValueFunction() = default;
  virtual double operator()(std::span<const double> y) const = 0;
};

/// β₀ + Σ βᵢ yᵢ.
class AffineFunction final : public ValueFunction {
 public:
  AffineFunction(double constant, std::vector<double> slopes)
      : constant_(constant), slopes_(std::move(slopes)) {}
  double operator()(std::span<const double> y) const override;

 private:
  double constant_;
  std::vector<double> slopes_;
};

/// Piecewise-linear interpolant of node values on a SimplexGrid.
class GridFunction final : public ValueFunction {
 public:
  /// Throws ContractError when a value is not finite or outside [lo, hi].
  GridFunction(const SimplexGrid& grid, std::vector<double> values,
               double lo = 0.0, double hi = 1.0);

  double operator()(std::span<const double> y) const override {
    return grid_->interpolate(values_, y);
  }
  const std::vector<double>& values() const { return values_; }
  const SimplexGrid& grid() const { return *grid_; }

 private:
  const SimplexGrid* grid_;
  std::vector<double> values_;
};

}  // namespace qdet
