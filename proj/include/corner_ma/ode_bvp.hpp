#pragma once

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "corner_ma/cone.hpp"
#include "corner_ma/error.hpp"
#include "corner_ma/ledger.hpp"
#include "corner_ma/profile.hpp"

namespace corner_ma {

/// L_i psi = psi'' - (i/mu)^2 psi, the t-operator acting on the i-th sine mode.
struct ModeOperator {
  int i = 1;
  ConeGeometry cone = ConeGeometry::from_float(0.5);

  ModeOperator(int index, ConeGeometry c) : i(index), cone(c) {
    if (i < 1) throw InvalidArgument("ModeOperator: mode index must be positive");
  }
  double rate() const { return i * cone.leading_exponent(); }
};

/// Right-hand side f(t) with the decay bound |f| <= C t^m e^{-gamma t}.
struct DecayingSource {
  std::function<double(double)> f;
  double gamma = 1.0;
  int m = 0;
};

/// The particular solution psi_* of L_i psi = f on (T, inf) that tends to 0,
/// written through variation of constants. Each evaluation runs adaptive
/// Gauss-Kronrod quadrature (relative tolerance 1e-12).
class DecayingModeSolution {
 public:
  DecayingModeSolution(ModeOperator op, DecayingSource rhs, double T)
      : op_(op), rhs_(std::move(rhs)), T_(T) {
    if (!(rhs_.gamma > 0.0)) throw InvalidArgument("solve_decaying_mode: gamma must be positive");
    if (rhs_.m < 0) throw InvalidArgument("solve_decaying_mode: m must be nonnegative");
    if (!rhs_.f) throw InvalidArgument("solve_decaying_mode: empty right-hand side");
  }

  double T() const { return T_; }
  const ModeOperator& op() const { return op_; }

  double operator()(double t) const {
    if (t < T_) throw InvalidArgument("solve_decaying_mode: t below T");
    const double k = op_.rate();
    const double pref = 1.0 / (2.0 * k);  // mu / (2 i)
    const auto& f = rhs_.f;
    // e^{-k t} int_T^t e^{ks} f  and  e^{kt} int_t^inf e^{-ks} f, with the
    // exponentials folded into the integrands to avoid overflow.
    const double tail_minus = integrate_tail([&](double s) { return std::exp(-k * (s - t)) * f(s); },
                                             t, k + rhs_.gamma);
    if (rhs_.gamma <= k) {
      const double head =
          t > T_ ? integrate_finite([&](double s) { return std::exp(-k * (t - s)) * f(s); }, T_, t)
                 : 0.0;
      return -pref * head - pref * tail_minus;
    }
    const double tail_plus = integrate_tail([&](double s) { return std::exp(k * (s - t)) * f(s); },
                                            t, rhs_.gamma - k);
    return pref * tail_plus - pref * tail_minus;
  }

 private:
  static constexpr double kTol = 1e-12;

  template <class G>
  double integrate_finite(G&& g, double a, double b) const {
    using boost::math::quadrature::gauss_kronrod;
    double total = 0.0;
    // Pieces of unit length keep the adaptive rule away from its depth limit.
    const int pieces = std::max(1, static_cast<int>(std::ceil(b - a)));
    const double h = (b - a) / pieces;
    for (int p = 0; p < pieces; ++p) {
      double err = 0.0;
      double l1 = 0.0;
      const double lo = a + p * h;
      const double hi = p + 1 == pieces ? b : lo + h;
      total += gauss_kronrod<double, 31>::integrate(g, lo, hi, 15, kTol, &err, &l1);
      if (err > 1e3 * kTol * std::max(l1, std::numeric_limits<double>::min()) && err > 1e-300)
        throw ConvergenceError("solve_decaying_mode: quadrature did not converge", err);
    }
    return total;
  }

  // Upper limit chosen where the decay envelope drops below 1e-18 of its peak.
  template <class G>
  double integrate_tail(G&& g, double t, double decay) const {
    const double tt = std::max(t, 1.0);
    double len = 41.5 / decay;
    for (int it = 0; it < 8; ++it) len = (41.5 + rhs_.m * std::log((tt + len) / tt)) / decay;
    return integrate_finite(g, t, t + len);
  }

  ModeOperator op_;
  DecayingSource rhs_;
  double T_;
};

inline DecayingModeSolution solve_decaying_mode(const ModeOperator& op, DecayingSource rhs,
                                                double T) {
  return DecayingModeSolution(op, std::move(rhs), T);
}

struct ThetaBvpResult {
  ThetaProfile w;
  bool near_resonant = false;
  double residual = 0.0;  // sup-norm collocation residual at interior nodes
};

namespace detail {

struct ResonanceInfo {
  int mode = 0;             // nearest I1 index
  bool exact = false;       // |gamma - mode/mu| < 1e-9
  bool near = false;        // |sin(gamma mu pi)| < 1e-8
};

inline ResonanceInfo resonance(double gamma, const ConeGeometry& cone) {
  ResonanceInfo r;
  const double x = gamma * cone.mu();
  r.mode = static_cast<int>(std::lround(x));
  if (r.mode < 1) return r;
  r.exact = std::abs(gamma - r.mode * cone.leading_exponent()) < kExponentTolerance;
  r.near = std::abs(std::sin(std::numbers::pi * x)) < 1e-8;
  return r;
}

// Collocation matrix of d^2/dtheta^2 + gamma^2 with Dirichlet rows.
inline Eigen::MatrixXd helmholtz_matrix(const ChebyshevBasis& b, double gamma) {
  const auto n = static_cast<Eigen::Index>(b.size());
  Eigen::MatrixXd m = b.d2();
  m.diagonal().array() += gamma * gamma;
  m.row(0).setZero();
  m.row(n - 1).setZero();
  m(0, 0) = 1.0;
  m(n - 1, n - 1) = 1.0;
  return m;
}

inline Eigen::VectorXd interior_rhs(const ThetaProfile& h) {
  const auto n = static_cast<Eigen::Index>(h.size());
  Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(h.values().data(), n);
  r(0) = 0.0;
  r(n - 1) = 0.0;
  return r;
}

inline ThetaProfile to_profile(const ConeGeometry& cone, const Eigen::VectorXd& v) {
  std::vector<double> vals(v.data(), v.data() + v.size());
  vals.front() = 0.0;
  vals.back() = 0.0;
  return ThetaProfile(cone, std::move(vals));
}

inline double helmholtz_residual(const ThetaProfile& w, double gamma, const ThetaProfile& h) {
  const ThetaProfile r = w.second_derivative() + (gamma * gamma) * w - h;
  double m = 0.0;
  for (std::size_t k = 1; k + 1 < r.size(); ++k) m = std::max(m, std::abs(r[k]));
  return m;
}

}  // namespace detail

/// Solves w'' + gamma^2 w = h on [0, mu pi] with w = 0 at both ends by
/// Chebyshev collocation. Throws ResonanceError when gamma lies in I1.
inline ThetaBvpResult theta_bvp(double gamma, const ThetaProfile& h) {
  const ConeGeometry& cone = h.cone();
  if (!(gamma > 0.0)) throw InvalidArgument("theta_bvp: gamma must be positive");
  const auto res = detail::resonance(gamma, cone);
  if (res.exact)
    throw ResonanceError("theta_bvp: resonant exponent gamma = " + std::to_string(gamma) +
                         " (gamma in I1): use resonant_lift or orthogonality reduction");
  const Eigen::MatrixXd m = detail::helmholtz_matrix(h.basis(), gamma);
  const Eigen::VectorXd sol = m.partialPivLu().solve(detail::interior_rhs(h));
  ThetaBvpResult out{detail::to_profile(cone, sol), res.near, 0.0};
  out.residual = detail::helmholtz_residual(out.w, gamma, h);
  return out;
}

/// Profiles w_0..w_{m+1} with
///   Laplacian( sum_j t^j e^{-gamma t} w_j ) = sum_j t^j e^{-gamma t} h_j,
/// i.e. w_j'' + gamma^2 w_j - 2(j+1) gamma w_{j+1} + (j+2)(j+1) w_{j+2} = h_j,
/// solved from the top power down. At a resonant gamma the component of each
/// level along sin(gamma theta) is fixed by solvability of the level below;
/// the free kernel component of w_0 is set to zero (minimal norm).
inline std::vector<ThetaProfile> resonant_lift(double gamma, const std::vector<ThetaProfile>& h) {
  if (h.empty()) throw InvalidArgument("resonant_lift: need at least one source profile");
  if (!(gamma > 0.0)) throw InvalidArgument("resonant_lift: gamma must be positive");
  const ConeGeometry& cone = h.front().cone();
  const ChebyshevBasis& basis = h.front().basis();
  const std::size_t m = h.size() - 1;
  const auto n = static_cast<Eigen::Index>(basis.size());
  const ThetaProfile zero(cone, basis.size());
  std::vector<ThetaProfile> w(m + 2, zero);

  const auto res = detail::resonance(gamma, cone);
  if (!res.exact && !res.near) {
    const auto lu = detail::helmholtz_matrix(basis, gamma).partialPivLu();
    for (std::size_t jj = m + 1; jj-- > 0;) {
      ThetaProfile g = jj <= m ? h[jj] : zero;
      if (jj + 1 <= m + 1) g += (2.0 * (jj + 1) * gamma) * w[jj + 1];
      if (jj + 2 <= m + 1) g -= static_cast<double>((jj + 2) * (jj + 1)) * w[jj + 2];
      w[jj] = detail::to_profile(cone, lu.solve(detail::interior_rhs(g)));
    }
    return w;
  }

  // Resonant (or numerically near-resonant) case: work with the exact I1
  // frequency so the kernel is sin(gamma0 theta).
  const double g0 = res.mode * cone.leading_exponent();
  const ThetaProfile s = ThetaProfile::from_function_zero_ends(
      cone, [&](double th) { return std::sin(g0 * th); }, basis.size());
  const double ss = s.inner(s);

  Eigen::MatrixXd bordered = Eigen::MatrixXd::Zero(n + 1, n + 1);
  bordered.topLeftCorner(n, n) = detail::helmholtz_matrix(basis, g0);
  const auto& qw = basis.quadrature_weights();
  for (Eigen::Index k = 0; k < n; ++k) {
    if (k > 0 && k < n - 1) bordered(k, n) = s[static_cast<std::size_t>(k)];
    bordered(n, k) = qw[static_cast<std::size_t>(k)] * s[static_cast<std::size_t>(k)];
  }
  const auto lu = bordered.fullPivLu();
  auto particular = [&](const ThetaProfile& g) {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
    rhs.head(n) = detail::interior_rhs(g);
    const Eigen::VectorXd sol = lu.solve(rhs);
    return detail::to_profile(cone, sol.head(n));
  };

  // w[j] holds the particular part until its kernel coefficient is known.
  for (std::size_t jj = m + 1; jj-- > 0;) {
    ThetaProfile g = jj <= m ? h[jj] : zero;
    if (jj + 2 <= m + 1) g -= static_cast<double>((jj + 2) * (jj + 1)) * w[jj + 2];
    if (jj + 1 <= m + 1) {
      const double c = 2.0 * (jj + 1) * g0;
      g += c * w[jj + 1];
      const double a = -g.inner(s) / (c * ss);
      w[jj + 1] += a * s;
      g += (c * a) * s;
    }
    w[jj] = particular(g);
  }

  // Check the matched-power system.
  double worst = 0.0;
  double scale = 1.0;
  for (std::size_t jj = 0; jj <= m + 1; ++jj) {
    ThetaProfile r = w[jj].second_derivative() + (g0 * g0) * w[jj];
    if (jj + 1 <= m + 1) r -= (2.0 * (jj + 1) * g0) * w[jj + 1];
    if (jj + 2 <= m + 1) r += static_cast<double>((jj + 2) * (jj + 1)) * w[jj + 2];
    if (jj <= m) {
      r -= h[jj];
      scale = std::max(scale, h[jj].sup_norm());
    }
    for (std::size_t k = 1; k + 1 < r.size(); ++k) worst = std::max(worst, std::abs(r[k]));
  }
  if (worst > 1e-7 * scale)
    throw ConvergenceError("resonant_lift: unresolved resonant component", worst);
  return w;
}

}  // namespace corner_ma
