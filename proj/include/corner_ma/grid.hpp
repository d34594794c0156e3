#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "corner_ma/error.hpp"

namespace corner_ma {

/// Geometric grading of a 1D node distribution toward the node at 0.
///
/// Cell widths grow by `ratio` per cell starting from the origin until they
/// reach `max_refinement` times the finest width, after which they stay
/// constant. ratio == 1 gives a uniform grid.
struct Grading {
  double ratio = 1.0;
  double max_refinement = 1.0;

  bool uniform() const { return ratio == 1.0 || max_refinement <= 1.0; }
};

inline std::vector<double> graded_nodes(std::size_t n, double length,
                                        const Grading& grading = {}) {
  if (n < 2) throw InvalidArgument("graded_nodes: need at least 2 nodes");
  if (!(length > 0.0)) throw InvalidArgument("graded_nodes: length must be positive");
  if (grading.ratio < 1.0 || grading.ratio > 1.05)
    throw InvalidArgument("graded_nodes: grading ratio must lie in [1, 1.05]");
  std::vector<double> nodes(n);
  const std::size_t cells = n - 1;
  if (grading.uniform()) {
    for (std::size_t k = 0; k < n; ++k)
      nodes[k] = length * static_cast<double>(k) / static_cast<double>(cells);
    nodes.back() = length;
    return nodes;
  }
  std::vector<double> widths(cells);
  double w = 1.0;
  double total = 0.0;
  for (std::size_t k = 0; k < cells; ++k) {
    widths[k] = w;
    total += w;
    w = std::min(w * grading.ratio, grading.max_refinement);
  }
  nodes[0] = 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < cells; ++k) {
    acc += widths[k];
    nodes[k + 1] = length * acc / total;
  }
  nodes.back() = length;
  return nodes;
}

/// Tensor-product grid; values are stored x-major: index = ix * ny + iy.
struct TensorGrid {
  std::vector<double> x;
  std::vector<double> y;

  std::size_t nx() const { return x.size(); }
  std::size_t ny() const { return y.size(); }
  std::size_t size() const { return x.size() * y.size(); }
  std::size_t index(std::size_t ix, std::size_t iy) const { return ix * y.size() + iy; }

  bool contains(double px, double py, double slack = 1e-12) const {
    return px >= x.front() - slack && px <= x.back() + slack && py >= y.front() - slack &&
           py <= y.back() + slack;
  }
};

namespace detail {

// Index of the first of four consecutive nodes bracketing p, clamped to the grid.
inline std::size_t stencil_start(std::span<const double> nodes, double p) {
  const auto it = std::upper_bound(nodes.begin(), nodes.end(), p);
  std::ptrdiff_t cell = std::distance(nodes.begin(), it) - 1;
  cell = std::clamp<std::ptrdiff_t>(cell, 0, static_cast<std::ptrdiff_t>(nodes.size()) - 2);
  std::ptrdiff_t start = cell - 1;
  start = std::clamp<std::ptrdiff_t>(start, 0, static_cast<std::ptrdiff_t>(nodes.size()) - 4);
  return static_cast<std::size_t>(start);
}

inline std::array<double, 4> lagrange_weights(std::span<const double> nodes, std::size_t start,
                                              double p) {
  std::array<double, 4> w{};
  for (std::size_t a = 0; a < 4; ++a) {
    double num = 1.0;
    double den = 1.0;
    const double xa = nodes[start + a];
    for (std::size_t b = 0; b < 4; ++b) {
      if (a == b) continue;
      num *= p - nodes[start + b];
      den *= xa - nodes[start + b];
    }
    w[a] = num / den;
  }
  return w;
}

}  // namespace detail

/// Real function sampled on a tensor grid with piecewise bicubic (tensor
/// cubic Lagrange) interpolation. Reproduces cubics exactly, so quadratic
/// backgrounds interpolate without error.
class GridField {
 public:
  GridField() = default;
  GridField(TensorGrid grid, std::vector<double> values)
      : grid_(std::move(grid)), values_(std::move(values)) {
    if (grid_.nx() < 4 || grid_.ny() < 4)
      throw InvalidArgument("GridField: bicubic interpolation needs at least 4x4 nodes");
    if (values_.size() != grid_.size())
      throw InvalidArgument("GridField: value count does not match grid");
  }

  template <class F>
  static GridField sample(TensorGrid grid, F&& f) {
    std::vector<double> v(grid.size());
    for (std::size_t i = 0; i < grid.nx(); ++i)
      for (std::size_t j = 0; j < grid.ny(); ++j) v[grid.index(i, j)] = f(grid.x[i], grid.y[j]);
    return GridField(std::move(grid), std::move(v));
  }

  const TensorGrid& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  double at(std::size_t ix, std::size_t iy) const { return values_[grid_.index(ix, iy)]; }

  bool covers(double px, double py) const { return grid_.contains(px, py); }

  double operator()(double px, double py) const {
    if (!covers(px, py)) throw CoverageError("GridField: point outside sampled region");
    const std::span<const double> xs(grid_.x);
    const std::span<const double> ys(grid_.y);
    const std::size_t sx = detail::stencil_start(xs, px);
    const std::size_t sy = detail::stencil_start(ys, py);
    const auto wx = detail::lagrange_weights(xs, sx, px);
    const auto wy = detail::lagrange_weights(ys, sy, py);
    double acc = 0.0;
    for (std::size_t a = 0; a < 4; ++a) {
      double row = 0.0;
      for (std::size_t b = 0; b < 4; ++b) row += wy[b] * at(sx + a, sy + b);
      acc += wx[a] * row;
    }
    return acc;
  }

 private:
  TensorGrid grid_;
  std::vector<double> values_;
};

}  // namespace corner_ma
