#include "qdet/simplex_grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "qdet/error.hpp"

namespace qdet {

SimplexGrid::SimplexGrid(std::size_t transient_states, int resolution)
    : n_(transient_states), res_(resolution) {
  if (n_ < 1 || n_ > kMaxTransient)
    throw DomainError("simplex grid supports 1.." + std::to_string(kMaxTransient) +
                      " transient states");
  if (res_ < 1) throw DomainError("grid resolution must be >= 1");
  const double cube = std::pow(double(res_ + 1), double(n_));
  if (cube > 5e7) throw DomainError("grid too large for dense indexing");
  index_.assign(static_cast<std::size_t>(cube), std::size_t(-1));

  // Enumerate z with N ≥ z_1 ≥ … ≥ z_n ≥ 0 in lexicographic order.
  std::vector<int> z(n_, 0);
  for (bool done = false; !done;) {
    bool monotone = true;
    for (std::size_t j = 1; j < n_; ++j) monotone = monotone && z[j - 1] >= z[j];
    if (monotone) {
      index_[lookup(z)] = node_count_++;
      // y_0 = N - z_1, y_j = z_j - z_{j+1}, y_n = z_n
      int prev = res_;
      for (std::size_t j = 0; j < n_; ++j) {
        lattice_.push_back(prev - z[j]);
        prev = z[j];
      }
      lattice_.push_back(prev);
    }
    done = true;
    for (std::size_t d = n_; d-- > 0;) {
      if (++z[d] <= res_) {
        done = false;
        break;
      }
      z[d] = 0;
    }
  }
  coords_.resize(lattice_.size());
  for (std::size_t k = 0; k < lattice_.size(); ++k)
    coords_[k] = double(lattice_[k]) / double(res_);
}

std::size_t SimplexGrid::lookup(std::span<const int> z) const {
  std::size_t idx = 0;
  for (std::size_t j = n_; j-- > 0;) idx = idx * std::size_t(res_ + 1) + std::size_t(z[j]);
  return idx;
}

std::size_t SimplexGrid::find(std::span<const int> counts) const {
  if (counts.size() != dim()) return size();
  std::array<int, kMaxTransient> z{};
  int suffix = 0;
  for (std::size_t j = n_; j >= 1; --j) {
    if (counts[j] < 0) return size();
    suffix += counts[j];
    z[j - 1] = suffix;
  }
  if (counts[0] < 0 || suffix + counts[0] != res_) return size();
  const std::size_t k = index_[lookup({z.data(), n_})];
  return k == std::size_t(-1) ? size() : k;
}

SimplexGrid::Location SimplexGrid::locate(std::span<const double> y) const {
  const double N = res_;
  std::array<double, kMaxTransient> frac{};
  std::array<int, kMaxTransient> base{};
  std::array<std::size_t, kMaxTransient> order{};

  double suffix = 0.0;
  for (std::size_t j = n_; j >= 1; --j) {
    suffix += std::max(0.0, y[j]);
    const double zj = std::clamp(N * suffix, 0.0, N);
    int b = static_cast<int>(std::floor(zj));
    if (b >= res_) b = res_ - 1;
    base[j - 1] = b;
    frac[j - 1] = zj - b;
  }
  for (std::size_t j = 0; j < n_; ++j) order[j] = j;
  std::stable_sort(order.begin(), order.begin() + n_,
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });

  Location loc;
  std::array<int, kMaxTransient> v = base;
  loc.vertex[0] = index_[lookup({v.data(), n_})];
  loc.weight[0] = 1.0 - frac[order[0]];
  for (std::size_t k = 1; k <= n_; ++k) {
    ++v[order[k - 1]];
    loc.vertex[k] = index_[lookup({v.data(), n_})];
    loc.weight[k] = k < n_ ? frac[order[k - 1]] - frac[order[k]] : frac[order[n_ - 1]];
  }
  return loc;
}

double SimplexGrid::interpolate(std::span<const double> values,
                                std::span<const double> y) const {
  const auto loc = locate(y);
  double out = 0.0;
  for (std::size_t k = 0; k <= n_; ++k)
    if (loc.weight[k] != 0.0) out += loc.weight[k] * values[loc.vertex[k]];
  return out;
}

std::vector<std::vector<std::size_t>> SimplexGrid::cells() const {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> perm(n_);
  std::vector<int> b(n_, 0);
  for (;;) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
      std::vector<int> v = b;
      std::vector<std::size_t> cell;
      bool valid = true;
      for (std::size_t k = 0; k <= n_ && valid; ++k) {
        if (k > 0) ++v[perm[k - 1]];
        for (std::size_t j = 0; j < n_; ++j) {
          if (v[j] > res_ || (j > 0 && v[j - 1] < v[j])) valid = false;
        }
        if (valid) cell.push_back(index_[lookup(v)]);
      }
      if (valid) out.push_back(std::move(cell));
    } while (std::next_permutation(perm.begin(), perm.end()));

    std::size_t d = n_;
    bool done = true;
    while (d-- > 0) {
      if (++b[d] < res_) {
        done = false;
        break;
      }
      b[d] = 0;
    }
    if (done) break;
  }
  return out;
}

double AffineFunction::operator()(std::span<const double> y) const {
  double out = constant_;
  for (std::size_t i = 0; i < slopes_.size() && i < y.size(); ++i) out += slopes_[i] * y[i];
  return out;
}

GridFunction::GridFunction(const SimplexGrid& grid, std::vector<double> values,
                           double lo, double hi)
    : grid_(&grid), values_(std::move(values)) {
  if (values_.size() != grid.size())
    throw ContractError("grid function needs one value per node");
  for (std::size_t k = 0; k < values_.size(); ++k) {
    const double v = values_[k];
    if (!std::isfinite(v) || v < lo || v > hi)
      throw ContractError("value " + std::to_string(v) + " at node " +
                          std::to_string(k) + " is outside [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + "]");
  }
}

}  // namespace qdet
