#pragma once

#include <boost/math/special_functions/sin_pi.hpp>

#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <istream>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "corner_ma/error.hpp"
#include "corner_ma/grid.hpp"

namespace corner_ma {

enum class Regime { Sharp, Wide };

inline const char* to_string(Regime r) { return r == Regime::Sharp ? "sharp" : "wide"; }

/// Exact rational opening fraction p/q in lowest terms.
struct Rational {
  long p = 0;
  long q = 1;
  double value() const { return static_cast<double>(p) / static_cast<double>(q); }
  friend bool operator==(const Rational&, const Rational&) = default;
};

/// Planar sector {0 < theta < mu*pi} with vertex at the origin.
class ConeGeometry {
 public:
  static ConeGeometry from_float(double mu) { return ConeGeometry(mu, std::nullopt); }

  static ConeGeometry from_rational(long p, long q) {
    if (q <= 0 || p <= 0 || p >= q)
      throw InvalidArgument("ConeGeometry: rational opening p/q must lie in (0,1)");
    const long g = std::gcd(p, q);
    Rational r{p / g, q / g};
    return ConeGeometry(r.value(), r);
  }

  double mu() const { return mu_; }
  const std::optional<Rational>& mu_rational() const { return rational_; }
  Regime regime() const { return mu_ < 0.5 ? Regime::Sharp : Regime::Wide; }
  double angle() const { return mu_ * std::numbers::pi; }
  /// Leading harmonic exponent 1/mu.
  double leading_exponent() const {
    if (rational_) return static_cast<double>(rational_->q) / static_cast<double>(rational_->p);
    return 1.0 / mu_;
  }

 private:
  ConeGeometry(double mu, std::optional<Rational> r) : mu_(mu), rational_(r) {
    if (!(mu > 0.0 && mu < 1.0)) throw InvalidArgument("ConeGeometry: mu must lie in (0,1)");
  }

  double mu_;
  std::optional<Rational> rational_;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Invertible linear map of the plane.
class AffineMap2 {
 public:
  using Mat = std::array<std::array<double, 2>, 2>;

  explicit AffineMap2(const Mat& m) : m_(m) {
    det_ = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if (det_ == 0.0 || !std::isfinite(det_)) throw InvalidArgument("AffineMap2: singular matrix");
    inv_ = {{{m[1][1] / det_, -m[0][1] / det_}, {-m[1][0] / det_, m[0][0] / det_}}};
  }
  AffineMap2(const Mat& m, const Mat& inverse) : m_(m), inv_(inverse) {
    det_ = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if (det_ == 0.0 || !std::isfinite(det_)) throw InvalidArgument("AffineMap2: singular matrix");
  }

  static AffineMap2 identity() { return AffineMap2(Mat{{{1.0, 0.0}, {0.0, 1.0}}}); }

  const Mat& matrix() const { return m_; }
  const Mat& inverse() const { return inv_; }
  double determinant() const { return det_; }

  Point2 apply(Point2 p) const {
    return {m_[0][0] * p.x + m_[0][1] * p.y, m_[1][0] * p.x + m_[1][1] * p.y};
  }
  Point2 apply_inverse(Point2 p) const {
    return {inv_[0][0] * p.x + inv_[0][1] * p.y, inv_[1][0] * p.x + inv_[1][1] * p.y};
  }

 private:
  Mat m_;
  Mat inv_;
  double det_ = 0.0;
};

struct StripWindow {
  double t0 = 0.0;
  double t1 = 0.0;
  double length() const { return t1 - t0; }
};

/// Samples of a function of the strip variables (t, theta) on a uniform
/// grid over [t0,t1] x [0, mu*pi]. Row-major in t: index = it * ntheta + ith.
class StripField {
 public:
  StripField(ConeGeometry cone, StripWindow window, std::size_t nt, std::size_t ntheta)
      : cone_(cone), window_(window), nt_(nt), ntheta_(ntheta), values_(nt * ntheta, 0.0) {
    if (nt < 3 || ntheta < 3) throw InvalidArgument("StripField: need at least 3x3 samples");
    if (window.t0 < 0.0) throw InvalidArgument("StripField: t0 must be nonnegative");
    if (!(window.t1 > window.t0)) throw InvalidArgument("StripField: empty t-window");
  }

  const ConeGeometry& cone() const { return cone_; }
  const StripWindow& window() const { return window_; }
  std::size_t nt() const { return nt_; }
  std::size_t ntheta() const { return ntheta_; }
  double h_t() const { return window_.length() / static_cast<double>(nt_ - 1); }
  double h_theta() const { return cone_.angle() / static_cast<double>(ntheta_ - 1); }

  double t(std::size_t it) const {
    return it + 1 == nt_ ? window_.t1 : window_.t0 + static_cast<double>(it) * h_t();
  }
  double theta(std::size_t ith) const {
    return ith + 1 == ntheta_ ? cone_.angle() : static_cast<double>(ith) * h_theta();
  }

  double& operator()(std::size_t it, std::size_t ith) { return values_[it * ntheta_ + ith]; }
  double operator()(std::size_t it, std::size_t ith) const { return values_[it * ntheta_ + ith]; }
  const std::vector<double>& values() const { return values_; }

  template <class F>
  static StripField tabulate(ConeGeometry cone, StripWindow window, std::size_t nt,
                             std::size_t ntheta, F&& f) {
    StripField s(cone, window, nt, ntheta);
    for (std::size_t i = 0; i < nt; ++i)
      for (std::size_t j = 0; j < ntheta; ++j) s(i, j) = f(s.t(i), s.theta(j));
    return s;
  }

  StripField operator-(const StripField& other) const {
    if (other.nt_ != nt_ || other.ntheta_ != ntheta_)
      throw InvalidArgument("StripField: shape mismatch");
    StripField out = *this;
    for (std::size_t k = 0; k < values_.size(); ++k) out.values_[k] -= other.values_[k];
    return out;
  }

  /// CSV with header `t,theta,value`, 17 significant digits.
  void write_csv(std::ostream& os) const {
    os << "t,theta,value\n" << std::setprecision(17);
    for (std::size_t i = 0; i < nt_; ++i)
      for (std::size_t j = 0; j < ntheta_; ++j)
        os << t(i) << ',' << theta(j) << ',' << (*this)(i, j) << '\n';
  }

  /// Reads the CSV written by write_csv; the grid shape is inferred.
  static StripField read_csv(std::istream& is, ConeGeometry cone) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("t,theta,value", 0) != 0)
      throw InvalidArgument("StripField CSV: missing header");
    std::vector<std::array<double, 3>> rows;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::array<double, 3> r{};
      std::istringstream ls(line);
      char c1 = 0, c2 = 0;
      if (!(ls >> r[0] >> c1 >> r[1] >> c2 >> r[2]) || c1 != ',' || c2 != ',')
        throw InvalidArgument("StripField CSV: malformed row '" + line + "'");
      rows.push_back(r);
    }
    std::size_t ntheta = 0;
    while (ntheta < rows.size() && rows[ntheta][0] == rows[0][0]) ++ntheta;
    if (ntheta == 0 || rows.size() % ntheta != 0)
      throw InvalidArgument("StripField CSV: rows do not form a grid");
    const std::size_t nt = rows.size() / ntheta;
    if (std::abs(rows[ntheta - 1][1] - cone.angle()) > 1e-9)
      throw InvalidArgument("StripField CSV: theta range does not match the cone");
    StripField s(cone, {rows.front()[0], rows.back()[0]}, nt, ntheta);
    for (std::size_t k = 0; k < rows.size(); ++k) s.values_[k] = rows[k][2];
    return s;
  }

 private:
  ConeGeometry cone_;
  StripWindow window_;
  std::size_t nt_;
  std::size_t ntheta_;
  std::vector<double> values_;
};

/// Point evaluation in Cartesian coordinates; may throw CoverageError.
using CartesianSampler = std::function<double(double, double)>;

/// Transports a Cartesian function near the vertex into strip coordinates
/// t = -ln|x|. Rows theta = 0 and theta = mu*pi take the lateral boundary
/// value instead of interpolated data.
inline StripField to_strip(const CartesianSampler& v, const ConeGeometry& cone,
                           StripWindow window, std::size_t nt, std::size_t ntheta,
                           double lateral_value = 0.0) {
  if (window.t0 < 0.0) throw InvalidArgument("to_strip: negative t (radius above 1) rejected");
  StripField s(cone, window, nt, ntheta);
  for (std::size_t i = 0; i < nt; ++i) {
    const double r = std::exp(-s.t(i));
    for (std::size_t j = 0; j < ntheta; ++j) {
      if (j == 0 || j + 1 == ntheta) {
        s(i, j) = lateral_value;
        continue;
      }
      const double th = s.theta(j);
      try {
        s(i, j) = v(r * std::cos(th), r * std::sin(th));
      } catch (const CoverageError&) {
        throw CoverageError("to_strip: insufficient coverage of the annular sector");
      }
    }
  }
  return s;
}

inline StripField to_strip(const GridField& samples, const ConeGeometry& cone, StripWindow window,
                           std::size_t nt, std::size_t ntheta, double lateral_value = 0.0) {
  // The annular sector must lie inside the sampled box; a box is convex, so
  // checking both arcs (plus the axis crossing) suffices.
  const double rmax = std::exp(-window.t0);
  const double rmin = std::exp(-window.t1);
  const double a = cone.angle();
  std::vector<double> angles;
  for (int k = 0; k <= 64; ++k) angles.push_back(a * k / 64.0);
  if (a > std::numbers::pi / 2) angles.push_back(std::numbers::pi / 2);
  for (double th : angles)
    for (double r : {rmin, rmax})
      if (!samples.covers(r * std::cos(th), r * std::sin(th)))
        throw CoverageError("to_strip: insufficient coverage of the annular sector");
  return to_strip(CartesianSampler([&samples](double x, double y) { return samples(x, y); }), cone,
                  window, nt, ntheta, lateral_value);
}

/// det D^2 v expressed through strip derivatives of v~(t, theta).
inline double strip_det_hessian(double vt, double vth, double vtt, double vtth, double vthth,
                                double t) {
  const double bracket = (vtt + vt) * (vthth - vt) - (vtth + vth) * (vtth + vth);
  return std::exp(4.0 * t) * bracket;
}

/// Harmonic function |x|^{i/mu} sin(i theta/mu), vanishing on both edges.
class HarmonicMode {
 public:
  HarmonicMode(int i, ConeGeometry cone) : i_(i), cone_(cone) {
    if (i <= 0) throw InvalidArgument("harmonic_mode: mode index must be positive");
  }

  int index() const { return i_; }
  double exponent() const { return i_ * cone_.leading_exponent(); }

  double polar(double r, double theta) const {
    if (r < 0.0) throw InvalidArgument("harmonic_mode: negative radius");
    // sin_pi returns exact zeros at integer arguments, i.e. on both edges.
    return std::pow(r, exponent()) * boost::math::sin_pi(i_ * theta / cone_.angle());
  }
  double operator()(double x, double y) const {
    return polar(std::hypot(x, y), std::atan2(y, x));
  }

 private:
  int i_;
  ConeGeometry cone_;
};

inline HarmonicMode harmonic_mode(int i, const ConeGeometry& cone) { return HarmonicMode(i, cone); }

/// Result of normalizing the model quadratic P_c^+ = |x|^2/2 + sqrt(1-c) x1 x2.
struct AffineNormalization {
  AffineMap2 map;
  ConeGeometry cone;
};

/// Maps the cone of opening arccos(sqrt(1-c)) onto the quarter plane so that
/// P_c^+ composed with the map equals |x|^2/2.
inline AffineNormalization affine_normalizer(double c) {
  if (!(c > 0.0 && c < 1.0)) throw InvalidArgument("affine_normalizer: c must lie in (0,1)");
  const double sc = std::sqrt(c);
  const double s1c = std::sqrt(1.0 - c);
  AffineMap2 a(AffineMap2::Mat{{{1.0, -s1c / sc}, {0.0, 1.0 / sc}}},
               AffineMap2::Mat{{{1.0, s1c}, {0.0, sc}}});
  return {a, ConeGeometry::from_float(std::acos(s1c) / std::numbers::pi)};
}

/// P_c^+ (sign = +1) or P_c^- (sign = -1).
inline double model_quadratic(double c, double x, double y, int sign = 1) {
  return 0.5 * (x * x + y * y) + sign * std::sqrt(1.0 - c) * x * y;
}

}  // namespace corner_ma
