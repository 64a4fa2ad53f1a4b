#ifndef ESSFLOW_HISTOGRAM_HPP
#define ESSFLOW_HISTOGRAM_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "essflow/core.hpp"

namespace essflow {

/// Regular 2D grid over [lower0, upper0] x [lower1, upper1]; cell (i, j) is
/// stored at index i * resolution + j with i along the first axis.
struct GridSpec {
  std::array<double, 2> lower{-5.0, -5.0};
  std::array<double, 2> upper{5.0, 5.0};
  std::size_t resolution = 64;

  static GridSpec square(double lo, double hi, std::size_t resolution) {
    return {{lo, lo}, {hi, hi}, resolution};
  }

  void validate() const {
    if (resolution == 0) throw InvalidParameter("grid resolution must be positive");
    for (int a = 0; a < 2; ++a)
      if (!(upper[a] > lower[a])) throw InvalidParameter("grid upper bound must exceed lower bound");
  }

  [[nodiscard]] std::size_t cells() const noexcept { return resolution * resolution; }
  [[nodiscard]] double width(int axis) const noexcept {
    return (upper[axis] - lower[axis]) / static_cast<double>(resolution);
  }
  [[nodiscard]] double cell_area() const noexcept { return width(0) * width(1); }
  [[nodiscard]] std::array<double, 2> center(std::size_t cell) const noexcept {
    const std::size_t i = cell / resolution;
    const std::size_t j = cell % resolution;
    return {lower[0] + (static_cast<double>(i) + 0.5) * width(0),
            lower[1] + (static_cast<double>(j) + 0.5) * width(1)};
  }
  /// Cell index of p, or cells() when p lies outside the grid.
  [[nodiscard]] std::size_t locate(std::span<const double> p) const noexcept {
    std::size_t idx[2];
    for (int a = 0; a < 2; ++a) {
      const double u = (p[a] - lower[a]) / width(a);
      if (!(u >= 0.0) || !(u < static_cast<double>(resolution))) return cells();
      idx[a] = static_cast<std::size_t>(u);
    }
    return idx[0] * resolution + idx[1];
  }
};

/// Cell masses of a weighted point cloud; `outside` holds mass off the grid.
struct Histogram {
  std::vector<double> mass;
  double outside = 0.0;
};

inline Histogram histogram(std::span<const Vector> points, std::span<const double> weights,
                           const GridSpec& grid) {
  Histogram h{std::vector<double>(grid.cells(), 0.0), 0.0};
  double total = 0.0;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const double w = weights.empty() ? 1.0 : weights[k];
    total += w;
    const std::size_t c = grid.locate(points[k]);
    if (c == grid.cells()) h.outside += w;
    else h.mass[c] += w;
  }
  if (total > 0.0) {
    for (auto& m : h.mass) m /= total;
    h.outside /= total;
  }
  return h;
}

inline Histogram histogram(std::span<const Vector> points, const GridSpec& grid) {
  return histogram(points, {}, grid);
}

/// Half the L1 distance between two histograms on the same grid, with each
/// side's off-grid mass counted as disagreement.
inline double tv_distance(const Histogram& a, const Histogram& b) {
  if (a.mass.size() != b.mass.size()) throw InvalidParameter("histograms on different grids");
  double s = 0.0;
  for (std::size_t i = 0; i < a.mass.size(); ++i) s += std::abs(a.mass[i] - b.mass[i]);
  s += std::abs(a.outside - b.outside);
  return std::min(1.0, 0.5 * s);
}

/// Sums cell masses of `h`, defined on `fine`, into a grid of the same
/// bounds at `resolution`, which must divide fine.resolution.
inline Histogram coarsen(const Histogram& h, const GridSpec& fine, std::size_t resolution) {
  if (resolution == 0 || fine.resolution % resolution != 0)
    throw InvalidParameter("coarse resolution must divide the fine resolution");
  const std::size_t f = fine.resolution / resolution;
  Histogram out{std::vector<double>(resolution * resolution, 0.0), h.outside};
  for (std::size_t i = 0; i < fine.resolution; ++i)
    for (std::size_t j = 0; j < fine.resolution; ++j)
      out.mass[(i / f) * resolution + j / f] += h.mass[i * fine.resolution + j];
  return out;
}

inline GridSpec with_resolution(GridSpec g, std::size_t resolution) {
  g.resolution = resolution;
  return g;
}

}  // namespace essflow

#endif  // ESSFLOW_HISTOGRAM_HPP
