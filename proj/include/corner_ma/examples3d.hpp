#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "corner_ma/error.hpp"

namespace corner_ma {

/// Off-diagonal Hessian entry forced along the edge: the negative root of
/// det [[1, m, 0], [m, 1, 0], [0, 0, 1]] = f.
inline double edge_mixed_derivative(double f_value) {
  if (!(f_value > 0.0)) throw InvalidArgument("edge_mixed_derivative: f must be positive");
  if (f_value > 1.0) throw InvalidArgument("edge_mixed_derivative: f > 1 has no real root");
  return -std::sqrt(1.0 - f_value);
}

inline double edge_hessian_determinant(double m) {
  Eigen::Matrix3d h;
  h << 1.0, m, 0.0, m, 1.0, 0.0, 0.0, 0.0, 1.0;
  return h.determinant();
}

/// Opening of the planar sector of the barrier example.
inline constexpr double kSectorAngle = 2.0 * std::numbers::pi / 3.0;

struct BarrierValues {
  double h = 0.0;
  double v = 0.0;
  double laplacian_v = 0.0;
};

namespace detail {
inline void check_sector_point(double r, double theta, double min_gap = 0.0) {
  if (!(r > 0.0)) throw InvalidArgument("barrier: radius must be positive");
  if (!(theta > min_gap && theta < kSectorAngle - min_gap))
    throw InvalidArgument("barrier: edge singularity (theta must be interior)");
}
}  // namespace detail

/// h = r^{3/2} sin(3 theta/2) (harmonic, zero on both edges of the sector).
inline double sector_harmonic(double x, double y) {
  const double r = std::hypot(x, y);
  const double th = std::atan2(y, x);
  return std::pow(r, 1.5) * std::sin(1.5 * th);
}

/// v = h^{5/4}, extended constantly in x3.
inline double sector_barrier(double x, double y) {
  const double h = sector_harmonic(x, y);
  if (h < 0.0) throw InvalidArgument("barrier: point outside the sector");
  return std::pow(h, 1.25);
}

inline BarrierValues barrier_values(double r, double theta) {
  detail::check_sector_point(r, theta);
  const double s = std::sin(1.5 * theta);
  BarrierValues b;
  b.h = std::pow(r, 1.5) * s;
  b.v = std::pow(b.h, 1.25);
  b.laplacian_v = 45.0 / 64.0 * std::pow(r, -0.125) * std::pow(s, -0.75);
  return b;
}

/// Five-point Laplacian with step `step`.
inline double fd_laplacian(const std::function<double(double, double)>& f, double x, double y,
                           double step) {
  const double c = f(x, y);
  return (f(x + step, y) + f(x - step, y) + f(x, y + step) + f(x, y - step) - 4.0 * c) /
         (step * step);
}

/// Central-difference squared gradient.
inline double fd_gradient_squared(const std::function<double(double, double)>& f, double x,
                                  double y, double step) {
  const double gx = (f(x + step, y) - f(x - step, y)) / (2.0 * step);
  const double gy = (f(x, y + step) - f(x, y - step)) / (2.0 * step);
  return gx * gx + gy * gy;
}

struct HessianBoundReport {
  double r = 0.0;
  double theta = 0.0;
  Eigen::Matrix3d hessian = Eigen::Matrix3d::Zero();  // FD second derivatives of v
  double laplacian_v = 0.0;                           // closed form
  double max_entry_ratio = 0.0;                       // max |v_ij| / Laplacian v
  double spectral_ratio = 0.0;                        // ||D^2 v||_2 / Laplacian v
  bool finite = false;
};

/// Central FD Hessian of v(x1, x2, x3) = h^{5/4}(x1, x2) at the point
/// (r cos theta, r sin theta, 0).
inline HessianBoundReport hessian_bound_check(double r, double theta, double step = 1e-3) {
  constexpr double kEdgeGap = 1e-6;
  detail::check_sector_point(r, theta, kEdgeGap);
  // Distance to the nearer edge; keep the stencil inside the sector.
  const double gap = std::min(theta, kSectorAngle - theta);
  const double dist = gap < std::numbers::pi / 2 ? r * std::sin(gap) : r;
  if (dist < kEdgeGap) throw InvalidArgument("hessian_bound_check: point too close to an edge");
  const double hs = std::min(step, dist / 4.0);

  const std::array<double, 3> p{r * std::cos(theta), r * std::sin(theta), 0.0};
  auto v = [](const std::array<double, 3>& q) { return sector_barrier(q[0], q[1]); };
  HessianBoundReport rep;
  rep.r = r;
  rep.theta = theta;
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      double d;
      if (i == j) {
        auto a = p, b = p;
        a[i] += hs;
        b[i] -= hs;
        d = (v(a) - 2.0 * v(p) + v(b)) / (hs * hs);
      } else {
        auto pp = p, pm = p, mp = p, mm = p;
        pp[i] += hs, pp[j] += hs;
        pm[i] += hs, pm[j] -= hs;
        mp[i] -= hs, mp[j] += hs;
        mm[i] -= hs, mm[j] -= hs;
        d = (v(pp) - v(pm) - v(mp) + v(mm)) / (4.0 * hs * hs);
      }
      rep.hessian(i, j) = rep.hessian(j, i) = d;
    }
  rep.laplacian_v = barrier_values(r, theta).laplacian_v;
  rep.max_entry_ratio = rep.hessian.cwiseAbs().maxCoeff() / rep.laplacian_v;
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(rep.hessian, Eigen::EigenvaluesOnly);
  rep.spectral_ratio = es.eigenvalues().cwiseAbs().maxCoeff() / rep.laplacian_v;
  rep.finite = std::isfinite(rep.max_entry_ratio) && std::isfinite(rep.spectral_ratio);
  return rep;
}

struct HessianSweep {
  std::size_t points = 0;
  double max_entry_ratio = 0.0;
  double max_spectral_ratio = 0.0;
  bool finite = true;
};

/// Regular nr x ntheta sweep over [r0,r1] x [th0,th1].
inline HessianSweep hessian_sweep(double r0, double r1, double th0, double th1, std::size_t nr = 20,
                                  std::size_t nth = 20, double step = 1e-3) {
  if (nr < 2 || nth < 2) throw InvalidArgument("hessian_sweep: need at least 2x2 points");
  HessianSweep s;
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nth; ++j) {
      const double r = r0 + (r1 - r0) * i / (nr - 1);
      const double th = th0 + (th1 - th0) * j / (nth - 1);
      const auto rep = hessian_bound_check(r, th, step);
      ++s.points;
      s.finite = s.finite && rep.finite;
      s.max_entry_ratio = std::max(s.max_entry_ratio, rep.max_entry_ratio);
      s.max_spectral_ratio = std::max(s.max_spectral_ratio, rep.spectral_ratio);
    }
  return s;
}

}  // namespace corner_ma
