#pragma once

#include <Eigen/Sparse>
#include <Eigen/UmfPackSupport>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "corner_ma/cone.hpp"
#include "corner_ma/error.hpp"
#include "corner_ma/grid.hpp"

namespace corner_ma {

/// xx x^2 + xy x y + yy y^2 + x x + y y + c.
struct Quadratic {
  double xx = 0.0, xy = 0.0, yy = 0.0, x = 0.0, y = 0.0, c = 0.0;

  static Quadratic half_norm_squared() { return {0.5, 0.0, 0.5, 0.0, 0.0, 0.0}; }
  /// P_c^+ = |x|^2/2 + sqrt(1-c) x1 x2.
  static Quadratic model_plus(double c) { return {0.5, std::sqrt(1.0 - c), 0.5, 0.0, 0.0, 0.0}; }

  double operator()(double px, double py) const {
    return xx * px * px + xy * px * py + yy * py * py + x * px + y * py + c;
  }
  double hessian_det() const { return 4.0 * xx * yy - xy * xy; }

  /// q(M xi) as a quadratic in xi.
  Quadratic compose(const AffineMap2& map) const {
    const auto& m = map.matrix();
    // Hessian H = [[2xx, xy],[xy, 2yy]] -> M^T H M.
    const double h00 = 2 * xx, h01 = xy, h11 = 2 * yy;
    const double a00 = m[0][0], a01 = m[0][1], a10 = m[1][0], a11 = m[1][1];
    const double r00 = a00 * (h00 * a00 + h01 * a10) + a10 * (h01 * a00 + h11 * a10);
    const double r01 = a00 * (h00 * a01 + h01 * a11) + a10 * (h01 * a01 + h11 * a11);
    const double r11 = a01 * (h00 * a01 + h01 * a11) + a11 * (h01 * a01 + h11 * a11);
    return {0.5 * r00, r01, 0.5 * r11, x * a00 + y * a10, x * a01 + y * a11, c};
  }
};

/// Dirichlet problem det D^2 u = f on a rectangle [0,a]x[0,b], or on its
/// image under `map` (a parallelogram).
struct ProblemSpec {
  double a = 1.0;
  double b = 1.0;
  std::optional<AffineMap2> map;
  double f = 1.0;
  /// Optional nodal values of f on the solver grid (x-major); overrides `f`.
  std::vector<double> f_grid;
  std::function<double(double, double)> boundary;
  /// Known quadratic subtracted before differencing; the solver iterates on
  /// u - reference, which keeps second differences well above roundoff.
  std::optional<Quadratic> reference;
  std::size_t n = 65;
  Grading grading;

  /// Boundary data given by a quadratic; it doubles as the reference, so the
  /// solver iterates on u - q with homogeneous data.
  ProblemSpec& quadratic_boundary(const Quadratic& q) {
    boundary = [q](double px, double py) { return q(px, py); };
    if (!reference) reference = q;
    return *this;
  }

  void validate() const {
    if (!(a > 0.0 && b > 0.0)) throw InvalidArgument("ProblemSpec: rectangle sides must be positive");
    if (n < 17) throw InvalidArgument("ProblemSpec: grid must have at least 17 nodes per side");
    if (!boundary) throw InvalidArgument("ProblemSpec: boundary function missing");
    if (f_grid.empty()) {
      if (!(f > 0.0) || !std::isfinite(f)) throw InvalidArgument("ProblemSpec: f must be positive");
    } else {
      if (f_grid.size() != n * n) throw InvalidArgument("ProblemSpec: f_grid has wrong size");
      for (double v : f_grid)
        if (!(v > 0.0)) throw InvalidArgument("ProblemSpec: f must be positive everywhere");
    }
  }
};

struct NewtonLogEntry {
  int iter = 0;
  double residual = 0.0;
  double step = 0.0;
};

struct MASolution {
  ProblemSpec spec;
  /// Grid in reference (rectangle) coordinates.
  TensorGrid grid;
  /// u - reference at every node, x-major.
  std::vector<double> correction;
  Quadratic reference_ref;  // reference expressed in rectangle coordinates
  double residual_sup = 0.0;
  int newton_iters = 0;
  bool converged = false;
  bool convex_certificate = false;
  std::vector<NewtonLogEntry> log;

  double u(std::size_t ix, std::size_t iy) const {
    return reference_ref(grid.x[ix], grid.y[iy]) + correction[grid.index(ix, iy)];
  }
  /// Physical coordinates of a node.
  Point2 node(std::size_t ix, std::size_t iy) const {
    const Point2 p{grid.x[ix], grid.y[iy]};
    return spec.map ? spec.map->apply(p) : p;
  }
  Point2 to_reference(Point2 p) const { return spec.map ? spec.map->apply_inverse(p) : p; }

  /// Bicubic field of u - reference in reference coordinates.
  GridField correction_field() const { return GridField(grid, correction); }

  /// CSV `x,y,u` in physical coordinates.
  void write_csv(std::ostream& os) const {
    os << "x,y,u\n" << std::setprecision(17);
    for (std::size_t i = 0; i < grid.nx(); ++i)
      for (std::size_t j = 0; j < grid.ny(); ++j) {
        const Point2 p = node(i, j);
        os << p.x << ',' << p.y << ',' << u(i, j) << '\n';
      }
  }
  void write_log_csv(std::ostream& os) const {
    os << "iter,residual,step\n" << std::setprecision(17);
    for (const auto& e : log) os << e.iter << ',' << e.residual << ',' << e.step << '\n';
  }
};

namespace detail {

// Three-point second difference weights on a nonuniform grid (exact on quadratics).
struct SecondDiff {
  double m, c, p;
};

inline SecondDiff second_diff(double hm, double hp) {
  return {2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp))};
}

class Discretization {
 public:
  Discretization(const TensorGrid& g) : g_(g), nx_(g.nx()), ny_(g.ny()) {
    dx_.resize(nx_);
    dy_.resize(ny_);
    cx_.resize(nx_);
    cy_.resize(ny_);
    for (std::size_t i = 1; i + 1 < nx_; ++i) {
      dx_[i] = second_diff(g.x[i] - g.x[i - 1], g.x[i + 1] - g.x[i]);
      cx_[i] = 1.0 / (g.x[i + 1] - g.x[i - 1]);
    }
    for (std::size_t j = 1; j + 1 < ny_; ++j) {
      dy_[j] = second_diff(g.y[j] - g.y[j - 1], g.y[j + 1] - g.y[j]);
      cy_[j] = 1.0 / (g.y[j + 1] - g.y[j - 1]);
    }
  }

  std::size_t interior() const { return (nx_ - 2) * (ny_ - 2); }
  std::size_t unknown(std::size_t i, std::size_t j) const { return (i - 1) * (ny_ - 2) + (j - 1); }

  struct Hessian {
    double xx, yy, xy;
  };

  Hessian hessian(const std::vector<double>& w, std::size_t i, std::size_t j) const {
    auto at = [&](std::size_t a, std::size_t b) { return w[a * ny_ + b]; };
    const double c = at(i, j);
    const double xx = dx_[i].m * at(i - 1, j) + dx_[i].c * c + dx_[i].p * at(i + 1, j);
    const double yy = dy_[j].m * at(i, j - 1) + dy_[j].c * c + dy_[j].p * at(i, j + 1);
    const double xy = (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1)) *
                      cx_[i] * cy_[j];
    return {xx, yy, xy};
  }

  const SecondDiff& dx(std::size_t i) const { return dx_[i]; }
  const SecondDiff& dy(std::size_t j) const { return dy_[j]; }
  double cxy(std::size_t i, std::size_t j) const { return cx_[i] * cy_[j]; }
  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }

 private:
  const TensorGrid& g_;
  std::size_t nx_, ny_;
  std::vector<SecondDiff> dx_, dy_;
  std::vector<double> cx_, cy_;
};

}  // namespace detail

/// Damped Newton for det D^2 u = f with the 9-point second-difference
/// stencil. The initial iterate solves the discrete Poisson problem
/// Laplacian u = 2 sqrt(f); steps are halved until the residual sup-norm
/// decreases and the iterate stays discretely convex.
class MongeAmpereSolver {
 public:
  explicit MongeAmpereSolver(ProblemSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  MASolution solve(double tol = 1e-10, int max_iters = 50) {
    MASolution sol;
    sol.spec = spec_;
    sol.grid.x = graded_nodes(spec_.n, spec_.a, spec_.grading);
    sol.grid.y = graded_nodes(spec_.n, spec_.b, spec_.grading);
    const TensorGrid& g = sol.grid;
    const detail::Discretization disc(g);
    const std::size_t nx = g.nx(), ny = g.ny();

    // Rectangle formulation: det D^2_xi U = (det M)^2 f.
    const double jac2 = spec_.map ? spec_.map->determinant() * spec_.map->determinant() : 1.0;
    const Quadratic ref = spec_.reference
                              ? (spec_.map ? spec_.reference->compose(*spec_.map) : *spec_.reference)
                              : Quadratic{};
    sol.reference_ref = ref;
    const double ref_xx = 2 * ref.xx, ref_yy = 2 * ref.yy, ref_xy = ref.xy;

    std::vector<double> rhs_f(g.size());
    for (std::size_t k = 0; k < g.size(); ++k)
      rhs_f[k] = jac2 * (spec_.f_grid.empty() ? spec_.f : spec_.f_grid[k]);

    // Boundary values of the correction.
    std::vector<double> w(g.size(), 0.0);
    for (std::size_t i = 0; i < nx; ++i)
      for (std::size_t j = 0; j < ny; ++j) {
        if (i != 0 && j != 0 && i + 1 != nx && j + 1 != ny) continue;
        const Point2 p = sol.node(i, j);
        w[g.index(i, j)] = spec_.boundary(p.x, p.y) - ref(g.x[i], g.y[j]);
      }

    // Predictor: Laplacian of u equal to that of the reference shifted by
    // 2(sqrt f - sqrt det D^2 ref); exact whenever the reference solves the
    // problem, and the plain Poisson guess Delta u = 2 sqrt f without one.
    const double ref_det = ref_xx * ref_yy - ref_xy * ref_xy;
    const double ref_shift = ref_det > 0.0 ? 2.0 * std::sqrt(ref_det) : ref_xx + ref_yy;
    initial_poisson(disc, g, rhs_f, ref_shift, w);

    auto evaluate = [&](const std::vector<double>& v, std::vector<double>& res, int& nonconvex) {
      nonconvex = 0;
      double sup = 0.0;
      for (std::size_t i = 1; i + 1 < nx; ++i)
        for (std::size_t j = 1; j + 1 < ny; ++j) {
          const auto h = disc.hessian(v, i, j);
          const double uxx = h.xx + ref_xx, uyy = h.yy + ref_yy, uxy = h.xy + ref_xy;
          const double det = uxx * uyy - uxy * uxy;
          const double r = det - rhs_f[g.index(i, j)];
          res[disc.unknown(i, j)] = r;
          sup = std::max(sup, std::abs(r));
          if (!(uxx > 0.0 && uyy > 0.0 && det > 0.0)) ++nonconvex;
        }
      return sup;
    };

    std::vector<double> res(disc.interior()), trial_res(disc.interior());
    int nonconvex = 0;
    double sup = evaluate(w, res, nonconvex);
    sol.log.push_back({0, sup, 0.0});

    Eigen::SparseMatrix<double> jac(static_cast<Eigen::Index>(disc.interior()),
                                    static_cast<Eigen::Index>(disc.interior()));
    Eigen::UmfPackLU<Eigen::SparseMatrix<double>> lu;
    bool analyzed = false;
    std::vector<double> trial(w.size());

    int iter = 0;
    while (sup >= tol && iter < max_iters) {
      ++iter;
      assemble_jacobian(disc, w, ref_xx, ref_yy, ref_xy, jac);
      if (!analyzed) {
        lu.analyzePattern(jac);
        analyzed = true;
      }
      lu.factorize(jac);
      if (lu.info() != Eigen::Success)
        throw ConvergenceError("solve_dirichlet: Jacobian factorization failed", sup);
      const Eigen::Map<const Eigen::VectorXd> r(res.data(), static_cast<Eigen::Index>(res.size()));
      const Eigen::VectorXd step = lu.solve(r);

      double alpha = 1.0;
      bool accepted = false;
      const bool was_convex = nonconvex == 0;
      while (alpha >= kMinStep) {
        trial = w;
        for (std::size_t i = 1; i + 1 < nx; ++i)
          for (std::size_t j = 1; j + 1 < ny; ++j)
            trial[g.index(i, j)] -= alpha * step(static_cast<Eigen::Index>(disc.unknown(i, j)));
        int trial_nonconvex = 0;
        const double trial_sup = evaluate(trial, trial_res, trial_nonconvex);
        const bool convex_ok = was_convex ? trial_nonconvex == 0 : trial_nonconvex <= nonconvex;
        if (trial_sup < sup && convex_ok) {
          w.swap(trial);
          res.swap(trial_res);
          sup = trial_sup;
          nonconvex = trial_nonconvex;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        sol.correction = w;
        throw ConvergenceError("solve_dirichlet: Newton stagnation, residual " + format(sup), sup);
      }
      sol.log.push_back({iter, sup, alpha});
    }

    sol.correction = std::move(w);
    sol.residual_sup = sup;
    sol.newton_iters = iter;
    sol.converged = sup < tol;
    if (!sol.converged)
      throw ConvergenceError("solve_dirichlet: no convergence within " + std::to_string(max_iters) +
                                 " iterations, residual " + format(sup),
                             sup);
    sol.convex_certificate = nonconvex == 0;
    return sol;
  }

 private:
  static constexpr double kMinStep = 1.0 / 1024.0 / 1024.0;

  static std::string format(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
  }

  static void initial_poisson(const detail::Discretization& disc, const TensorGrid& g,
                              const std::vector<double>& rhs_f, double ref_shift,
                              std::vector<double>& w) {
    const std::size_t nx = g.nx(), ny = g.ny();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(disc.interior() * 5);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(disc.interior()));
    for (std::size_t i = 1; i + 1 < nx; ++i)
      for (std::size_t j = 1; j + 1 < ny; ++j) {
        const auto row = static_cast<Eigen::Index>(disc.unknown(i, j));
        double b = 2.0 * std::sqrt(rhs_f[g.index(i, j)]) - ref_shift;
        const auto& sx = disc.dx(i);
        const auto& sy = disc.dy(j);
        trip.emplace_back(row, row, sx.c + sy.c);
        auto couple = [&](std::size_t a, std::size_t c, double coef) {
          if (a == 0 || c == 0 || a + 1 == nx || c + 1 == ny)
            b -= coef * w[g.index(a, c)];
          else
            trip.emplace_back(row, static_cast<Eigen::Index>(disc.unknown(a, c)), coef);
        };
        couple(i - 1, j, sx.m);
        couple(i + 1, j, sx.p);
        couple(i, j - 1, sy.m);
        couple(i, j + 1, sy.p);
        rhs(row) = b;
      }
    Eigen::SparseMatrix<double> a(rhs.size(), rhs.size());
    a.setFromTriplets(trip.begin(), trip.end());
    Eigen::UmfPackLU<Eigen::SparseMatrix<double>> lu(a);
    if (lu.info() != Eigen::Success) throw Error("solve_dirichlet: Poisson factorization failed");
    const Eigen::VectorXd sol = lu.solve(rhs);
    for (std::size_t i = 1; i + 1 < nx; ++i)
      for (std::size_t j = 1; j + 1 < ny; ++j)
        w[g.index(i, j)] = sol(static_cast<Eigen::Index>(disc.unknown(i, j)));
  }

  // J dw = uyy Dxx dw + uxx Dyy dw - 2 uxy Dxy dw (boundary entries of dw vanish).
  static void assemble_jacobian(const detail::Discretization& disc, const std::vector<double>& w,
                                double rxx, double ryy, double rxy,
                                Eigen::SparseMatrix<double>& jac) {
    const std::size_t nx = disc.nx(), ny = disc.ny();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(disc.interior() * 9);
    for (std::size_t i = 1; i + 1 < nx; ++i)
      for (std::size_t j = 1; j + 1 < ny; ++j) {
        const auto row = static_cast<Eigen::Index>(disc.unknown(i, j));
        const auto h = disc.hessian(w, i, j);
        const double uxx = h.xx + rxx, uyy = h.yy + ryy, uxy = h.xy + rxy;
        const auto& sx = disc.dx(i);
        const auto& sy = disc.dy(j);
        const double cxy = -2.0 * uxy * disc.cxy(i, j);
        auto put = [&](std::size_t a, std::size_t c, double coef) {
          if (a == 0 || c == 0 || a + 1 == nx || c + 1 == ny) return;
          trip.emplace_back(row, static_cast<Eigen::Index>(disc.unknown(a, c)), coef);
        };
        put(i, j, uyy * sx.c + uxx * sy.c);
        put(i - 1, j, uyy * sx.m);
        put(i + 1, j, uyy * sx.p);
        put(i, j - 1, uxx * sy.m);
        put(i, j + 1, uxx * sy.p);
        put(i + 1, j + 1, cxy);
        put(i - 1, j - 1, cxy);
        put(i + 1, j - 1, -cxy);
        put(i - 1, j + 1, -cxy);
      }
    jac.setFromTriplets(trip.begin(), trip.end());
    jac.makeCompressed();
  }

  ProblemSpec spec_;
};

inline MASolution solve_dirichlet(const ProblemSpec& spec, double tol = 1e-10, int max_iters = 50) {
  return MongeAmpereSolver(spec).solve(tol, max_iters);
}

/// Convexity check of the discrete Hessian at every interior node.
inline bool discrete_convexity(const MASolution& sol) {
  const detail::Discretization disc(sol.grid);
  const Quadratic& q = sol.reference_ref;
  for (std::size_t i = 1; i + 1 < disc.nx(); ++i)
    for (std::size_t j = 1; j + 1 < disc.ny(); ++j) {
      const auto h = disc.hessian(sol.correction, i, j);
      const double uxx = h.xx + 2 * q.xx, uyy = h.yy + 2 * q.yy, uxy = h.xy + q.xy;
      if (!(uxx > 0.0 && uyy > 0.0 && uxx * uyy - uxy * uxy > 0.0)) return false;
    }
  return true;
}

/// Discrete determinant residual sup-norm of the stored solution.
inline double determinant_residual(const MASolution& sol) {
  const detail::Discretization disc(sol.grid);
  const Quadratic& q = sol.reference_ref;
  const double jac2 = sol.spec.map ? std::pow(sol.spec.map->determinant(), 2) : 1.0;
  double sup = 0.0;
  for (std::size_t i = 1; i + 1 < disc.nx(); ++i)
    for (std::size_t j = 1; j + 1 < disc.ny(); ++j) {
      const auto h = disc.hessian(sol.correction, i, j);
      const double uxx = h.xx + 2 * q.xx, uyy = h.yy + 2 * q.yy, uxy = h.xy + q.xy;
      const double f = sol.spec.f_grid.empty() ? sol.spec.f : sol.spec.f_grid[sol.grid.index(i, j)];
      sup = std::max(sup, std::abs(uxx * uyy - uxy * uxy - jac2 * f));
    }
  return sup;
}

struct PointValue {
  Point2 point;
  double value = 0.0;
};

/// Values of u(A target): bicubic interpolation of the solution at the
/// mapped points. Throws CoverageError for a target mapped outside the domain.
inline std::vector<PointValue> pullback(const MASolution& sol, const AffineMap2& a,
                                        const std::vector<Point2>& targets) {
  const GridField field = sol.correction_field();
  std::vector<PointValue> out;
  out.reserve(targets.size());
  for (const Point2& p : targets) {
    const Point2 x = sol.to_reference(a.apply(p));
    if (!field.covers(x.x, x.y))
      throw CoverageError("pullback: target maps outside the solved domain");
    out.push_back({p, sol.reference_ref(x.x, x.y) + field(x.x, x.y)});
  }
  return out;
}

}  // namespace corner_ma
