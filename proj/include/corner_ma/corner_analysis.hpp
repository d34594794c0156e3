#pragma once

#include <boost/math/tools/minima.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "corner_ma/cone.hpp"
#include "corner_ma/error.hpp"
#include "corner_ma/expansion.hpp"
#include "corner_ma/ledger.hpp"
#include "corner_ma/profile.hpp"

namespace corner_ma {

inline constexpr double kNoiseFloor = 1e-12;

/// One value per t-row of a strip field.
struct ModeSamples {
  std::vector<double> t;
  std::vector<double> value;

  std::size_t size() const { return t.size(); }

  void write_csv(std::ostream& os) const {
    os << "t,value\n" << std::setprecision(17);
    for (std::size_t k = 0; k < t.size(); ++k) os << t[k] << ',' << value[k] << '\n';
  }
};

/// w_i(t) = int field(t, theta) phi_i(theta) dtheta, trapezoid rule per row.
/// The rule is exact for products of sine modes below the Nyquist index.
inline ModeSamples mode_projection(const StripField& field, int i) {
  if (i < 1) throw InvalidArgument("mode_projection: mode index must be >= 1");
  ModeSamples out;
  const std::size_t nth = field.ntheta();
  std::vector<double> w(nth);
  for (std::size_t j = 0; j < nth; ++j)
    w[j] = field.h_theta() * ((j == 0 || j + 1 == nth) ? 0.5 : 1.0) *
           sine_basis(i, field.cone(), field.theta(j));
  for (std::size_t it = 0; it < field.nt(); ++it) {
    double s = 0.0;
    for (std::size_t j = 0; j < nth; ++j) s += w[j] * field(it, j);
    out.t.push_back(field.t(it));
    out.value.push_back(s);
  }
  return out;
}

/// sup over theta of |field| per t-row.
inline ModeSamples sup_over_theta(const StripField& field) {
  ModeSamples out;
  for (std::size_t it = 0; it < field.nt(); ++it) {
    double m = 0.0;
    for (std::size_t j = 0; j < field.ntheta(); ++j) m = std::max(m, std::abs(field(it, j)));
    out.t.push_back(field.t(it));
    out.value.push_back(m);
  }
  return out;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double intercept_stderr = 0.0;
  std::size_t points = 0;
};

/// Ordinary least squares y = intercept + slope x with standard errors.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 3 || y.size() != n) throw FitError("fit_line: need at least 3 points");
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < n; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < n; ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  if (sxx <= 0) throw FitError("fit_line: degenerate abscissae");
  LineFit f;
  f.points = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double r = y[k] - f.intercept - f.slope * x[k];
    rss += r * r;
  }
  const double s2 = rss / static_cast<double>(n - 2);
  f.slope_stderr = std::sqrt(s2 / sxx);
  f.intercept_stderr = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  return f;
}

namespace detail {

inline void check_window(const StripField& field, StripWindow window) {
  if (!(window.length() >= 1.0 - 1e-12))
    throw InvalidArgument("fit window must have length >= 1 in t");
  const double slack = 1e-9;
  if (window.t0 < field.window().t0 - slack || window.t1 > field.window().t1 + slack)
    throw CoverageError("fit window lies outside the field's t-range");
}

inline ModeSamples restrict(const ModeSamples& s, StripWindow window) {
  ModeSamples out;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (s.t[k] >= window.t0 - 1e-9 && s.t[k] <= window.t1 + 1e-9) {
      out.t.push_back(s.t[k]);
      out.value.push_back(s.value[k]);
    }
  return out;
}

/// Fitted decay rate of |s| over the samples; throws below the floor.
inline LineFit log_linear_decay(const ModeSamples& s, double noise_floor, bool require_sign) {
  if (s.size() < 3) throw FitError("too few samples in the fit window");
  std::vector<double> y;
  const bool negative = s.value.front() < 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (!(std::abs(s.value[k]) > noise_floor)) throw FitError("window below noise floor");
    if (require_sign && (s.value[k] < 0.0) != negative) throw FitError("no stable sign");
    y.push_back(std::log(std::abs(s.value[k])));
  }
  LineFit f = fit_line(s.t, y);
  // ln|w| = intercept - rate t
  f.slope = -f.slope;
  return f;
}

}  // namespace detail

enum class Sign { Negative, Zero, Positive };
inline const char* to_string(Sign s) {
  return s == Sign::Negative ? "negative" : (s == Sign::Zero ? "zero" : "positive");
}

struct FitReport {
  int mode = 1;
  StripWindow window;
  double exponent_hat = 0.0;
  double exponent_stderr = 0.0;
  double amplitude_hat = 0.0;
  double amplitude_stderr = 0.0;
  double predicted_exponent = 0.0;
  double relative_gap = 0.0;
  Sign c10_sign = Sign::Zero;
  std::optional<HolderLabel> holder;
  double log_intercept = 0.0;  // ln|w_1| = log_intercept - exponent_hat t
  std::size_t points = 0;
};

inline nlohmann::json to_json(const FitReport& r) {
  nlohmann::json j;
  j["mode"] = r.mode;
  j["window"] = {r.window.t0, r.window.t1};
  j["exponent_hat"] = r.exponent_hat;
  j["exponent_stderr"] = r.exponent_stderr;
  j["amplitude_hat"] = r.amplitude_hat;
  j["amplitude_stderr"] = r.amplitude_stderr;
  j["predicted_exponent"] = r.predicted_exponent;
  j["relative_gap"] = r.relative_gap;
  j["c10_sign"] = to_string(r.c10_sign);
  j["points"] = r.points;
  if (r.holder)
    j["holder"] = {{"k", r.holder->k}, {"alpha", r.holder->alpha},
                   {"integer_warning", r.holder->integer_warning}};
  else
    j["holder"] = nullptr;
  return j;
}

/// Log-linear fit of the mode-1 projection: exponent, amplitude of
/// c sin(theta/mu) and its sign.
inline FitReport fit_leading(const StripField& field, const ExponentLedger& ledger,
                             StripWindow window, double noise_floor = kNoiseFloor) {
  detail::check_window(field, window);
  const auto samples = detail::restrict(mode_projection(field, 1), window);
  const LineFit f = detail::log_linear_decay(samples, noise_floor, true);
  const ConeGeometry& cone = field.cone();
  // <c sin(theta/mu), phi_1> = c sqrt(mu pi / 2)
  const double norm = std::sqrt(cone.angle() / 2.0);
  FitReport r;
  r.mode = 1;
  r.window = window;
  r.points = f.points;
  r.exponent_hat = f.slope;
  r.exponent_stderr = f.slope_stderr;
  r.log_intercept = f.intercept;
  const double sign = samples.value.front() < 0.0 ? -1.0 : 1.0;
  r.c10_sign = sign < 0 ? Sign::Negative : Sign::Positive;
  r.amplitude_hat = sign * std::exp(f.intercept) / norm;
  r.amplitude_stderr = std::abs(r.amplitude_hat) * f.intercept_stderr;
  r.predicted_exponent = ledger[0].value;
  r.relative_gap = std::abs(r.exponent_hat - r.predicted_exponent) / r.predicted_exponent;
  if (cone.regime() == Regime::Sharp) r.holder = holder_label(cone);
  return r;
}

struct AmplitudeFit {
  double amplitude = 0.0;  // coefficient of e^{-gamma t} in the projection
  double stderr = 0.0;
};

/// Linear least squares w(t) = A e^{-gamma t} with the exponent held fixed.
inline AmplitudeFit fit_fixed_exponent(const ModeSamples& s, double gamma) {
  if (s.size() < 2) throw FitError("fit_fixed_exponent: need at least 2 samples");
  double bb = 0, by = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double b = std::exp(-gamma * s.t[k]);
    bb += b * b;
    by += b * s.value[k];
  }
  AmplitudeFit a;
  a.amplitude = by / bb;
  double rss = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double r = s.value[k] - a.amplitude * std::exp(-gamma * s.t[k]);
    rss += r * r;
  }
  a.stderr = std::sqrt(rss / static_cast<double>(s.size() - 1) / bb);
  return a;
}

struct LeadingRefinement {
  double c1 = 0.0;
  double relative_rms = 0.0;
  Expansion expansion;
};

/// Refines c in c sin(theta/mu) by matching the mode-1 projection against
/// the expansion generated from c alone (free resonant coefficients zero).
/// Each term is homogeneous in c; its degree is read off a second engine run
/// at 2c (lattices do not carry it where an I1 and an I2 exponent collide).
inline LeadingRefinement refine_leading(const StripField& field, const ExponentLedger& ledger,
                                        StripWindow window, double initial, double cutoff) {
  detail::check_window(field, window);
  if (initial == 0.0) throw InvalidArgument("refine_leading: initial amplitude must be nonzero");
  const ConeGeometry& cone = ledger.cone();
  FreeCoefficients zero;
  for (const auto& e : ledger.entries())
    if (e.resonant && e.position > 1) zero.set(e.value, 0.0);
  const Expansion unit = extend_to(ledger, Expansion::leading(ledger, 1.0), cutoff, zero);
  const Expansion twice = extend_to(ledger, Expansion::leading(ledger, 2.0), cutoff, zero);
  if (twice.terms().size() != unit.terms().size())
    throw FitError("refine_leading: expansion structure depends on the amplitude");
  const auto samples = detail::restrict(mode_projection(field, 1), window);

  struct Part {
    long k;
    double proj;
    ExpansionTerm term;
  };
  std::vector<Part> parts;
  for (std::size_t n = 0; n < unit.terms().size(); ++n) {
    const auto& term = unit.terms()[n];
    const double ratio = twice.terms()[n].profile.sup_norm() / term.profile.sup_norm();
    const long k = std::lround(std::log2(ratio));
    if (!(k >= 1) || std::abs(ratio / std::ldexp(1.0, static_cast<int>(k)) - 1.0) > 1e-6)
      throw FitError("refine_leading: term at exponent " + std::to_string(term.exponent.value) +
                     " is not homogeneous in the leading amplitude");
    const auto phi = ThetaProfile::from_function(
        cone, [&](double th) { return sine_basis(1, cone, th); }, term.profile.size());
    parts.push_back({k, term.profile.inner(phi), term});
  }
  auto model = [&](double c, double t) {
    double s = 0.0;
    for (const auto& p : parts)
      s += std::pow(c, static_cast<double>(p.k)) * p.proj *
           std::pow(t, static_cast<double>(p.term.log_power)) * std::exp(-p.term.exponent.value * t);
    return s;
  };
  auto misfit = [&](double c) {
    double s = 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const double r = (samples.value[k] - model(c, samples.t[k])) / samples.value[k];
      s += r * r;
    }
    return s;
  };
  // The model is a polynomial in c; scan a wide bracket, then polish.
  const double span_lo = 0.25 * initial, span_hi = 4.0 * initial;
  const int scan = 400;
  double best_c = initial, best_v = misfit(initial);
  for (int k = 0; k <= scan; ++k) {
    const double c = span_lo + (span_hi - span_lo) * k / scan;
    const double v = misfit(c);
    if (v < best_v) {
      best_v = v;
      best_c = c;
    }
  }
  const double step = std::abs(span_hi - span_lo) / scan;
  const auto best = boost::math::tools::brent_find_minima(misfit, best_c - step, best_c + step, 52);
  const double c1 = best.first;
  Expansion scaled(cone);
  for (const auto& p : parts) {
    ExpansionTerm t = p.term;
    t.profile *= std::pow(c1, static_cast<double>(p.k));
    scaled.add(std::move(t));
  }
  scaled.set_truncation(unit.truncation());
  return {c1, std::sqrt(best.second / static_cast<double>(samples.size())), std::move(scaled)};
}

struct CascadeStage {
  int stage = 0;          // number of exponent groups subtracted
  double exponent = 0.0;  // largest exponent subtracted
  double slope = 0.0;
  double slope_stderr = 0.0;
  bool floor = false;     // residual at the noise floor, no slope
};

struct CascadeReport {
  std::vector<CascadeStage> stages;
  bool nondecreasing = true;
};

/// Decay slopes of sup_theta |field - expansion truncated to m groups|, for
/// m = 1 .. number of exponent groups of the expansion.
inline CascadeReport residual_cascade(const StripField& field, const Expansion& expansion,
                                      StripWindow window, double noise_floor = kNoiseFloor,
                                      std::optional<std::size_t> max_stages = std::nullopt) {
  detail::check_window(field, window);
  CascadeReport rep;
  const auto exps = expansion.distinct_exponents();
  std::size_t n = exps.size();
  if (max_stages) n = std::min(n, *max_stages);
  double last = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 1; m <= n; ++m) {
    const Expansion part = expansion.truncated_to_groups(m);
    const StripField model =
        evaluate(part, field.window(), field.nt(), field.ntheta());
    const auto res = detail::restrict(sup_over_theta(field - model), window);
    CascadeStage st;
    st.stage = static_cast<int>(m);
    st.exponent = exps[m - 1];
    bool above = true;
    for (double v : res.value)
      if (!(v > noise_floor)) above = false;
    if (!above) {
      st.floor = true;
    } else {
      const LineFit f = detail::log_linear_decay(res, noise_floor, false);
      st.slope = f.slope;
      st.slope_stderr = f.slope_stderr;
      if (st.slope < last) rep.nondecreasing = false;
      last = st.slope;
    }
    rep.stages.push_back(st);
  }
  return rep;
}

inline nlohmann::json to_json(const CascadeReport& r) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : r.stages) {
    nlohmann::json e{{"stage", s.stage}, {"exponent", s.exponent}};
    if (s.floor)
      e["slope"] = "floor";
    else {
      e["slope"] = s.slope;
      e["slope_stderr"] = s.slope_stderr;
    }
    j.push_back(e);
  }
  return {{"stages", j}, {"nondecreasing", r.nondecreasing}};
}

struct BarrierReport {
  bool pass = false;
  double epsilon = 0.0;
  double max_violation = 0.0;  // max of v + eps h over the region
  double epsilon_max = 0.0;    // largest eps for which the check passes
  std::size_t nodes = 0;
};

namespace detail {

struct BarrierSample {
  double v, h;
  bool boundary;
};

inline BarrierReport barrier_from_samples(const std::vector<BarrierSample>& s, double eps,
                                          double tol) {
  BarrierReport r;
  r.epsilon = eps;
  r.nodes = s.size();
  r.max_violation = -std::numeric_limits<double>::infinity();
  r.epsilon_max = std::numeric_limits<double>::infinity();
  for (const auto& p : s) {
    if (p.boundary && p.v > tol)
      throw InvalidArgument("barrier_check: v must be nonpositive on the region boundary");
    r.max_violation = std::max(r.max_violation, p.v + eps * p.h);
    // v + e h <= tol  <=>  e <= (tol - v) / h for h > 0
    if (p.h > 0.0) r.epsilon_max = std::min(r.epsilon_max, (tol - p.v) / p.h);
  }
  r.epsilon_max = std::max(r.epsilon_max, 0.0);
  r.pass = r.max_violation <= tol;
  return r;
}

}  // namespace detail

/// Checks v + eps h <= tol on the strip region with h = e^{-t/mu} sin(theta/mu).
inline BarrierReport barrier_check(const StripField& v, double eps, StripWindow region,
                                   double tol = 0.0) {
  const double slack = 1e-9;
  if (region.t0 < v.window().t0 - slack || region.t1 > v.window().t1 + slack ||
      !(region.t1 > region.t0))
    throw CoverageError("barrier_check: region not contained in the sampled set");
  const HarmonicMode h(1, v.cone());
  std::vector<detail::BarrierSample> s;
  std::size_t first = v.nt(), last = 0;
  for (std::size_t i = 0; i < v.nt(); ++i)
    if (v.t(i) >= region.t0 - slack && v.t(i) <= region.t1 + slack) {
      first = std::min(first, i);
      last = i;
    }
  for (std::size_t i = first; i <= last && first < v.nt(); ++i)
    for (std::size_t j = 0; j < v.ntheta(); ++j) {
      const bool bd = i == first || i == last || j == 0 || j + 1 == v.ntheta();
      s.push_back({v(i, j), h.polar(std::exp(-v.t(i)), v.theta(j)), bd});
    }
  return detail::barrier_from_samples(s, eps, tol);
}

/// Cartesian overload: samples v on an (nr x ntheta) polar grid of the region.
inline BarrierReport barrier_check(const CartesianSampler& v, const ConeGeometry& cone, double eps,
                                   StripWindow region, std::size_t nr = 65,
                                   std::size_t ntheta = 65, double tol = 0.0) {
  StripField f = [&] {
    try {
      return to_strip(v, cone, region, nr, ntheta);
    } catch (const CoverageError&) {
      throw CoverageError("barrier_check: region not contained in the sampled set");
    }
  }();
  // Interpolated data on the lateral edges is replaced by the exact zero trace.
  return barrier_check(f, eps, region, tol);
}

inline nlohmann::json to_json(const BarrierReport& r) {
  return {{"pass", r.pass},
          {"epsilon", r.epsilon},
          {"max_violation", r.max_violation},
          {"epsilon_max", r.epsilon_max},
          {"nodes", r.nodes}};
}

/// Gnuplot script plotting ln|w_1| from a `t,value` CSV with the fitted line.
inline void write_fit_gnuplot(std::ostream& os, const FitReport& r, const std::string& csv,
                              const std::string& png) {
  os << std::setprecision(17);
  os << "# ln|w_1(t)| against t with the fitted exponent\n"
     << "set datafile separator ','\n"
     << "set terminal pngcairo size 900,600\n"
     << "set output '" << png << "'\n"
     << "set xlabel 't = -ln|x|'\n"
     << "set ylabel 'ln|w_1|'\n"
     << "intercept = " << r.log_intercept << "\n"
     << "rate = " << r.exponent_hat << "\n"
     << "predicted = " << r.predicted_exponent << "\n"
     << "set arrow from " << r.window.t0 << ", graph 0 to " << r.window.t0
     << ", graph 1 nohead dt 2\n"
     << "set arrow from " << r.window.t1 << ", graph 0 to " << r.window.t1
     << ", graph 1 nohead dt 2\n"
     << "plot '" << csv << "' skip 1 using 1:(log(abs($2))) with points pt 7 ps 0.5 title 'ln|w_1|', \\\n"
     << "     intercept - rate * x with lines lw 2 title sprintf('fit, rate %.4f', rate), \\\n"
     << "     intercept - predicted * (x - " << 0.5 * (r.window.t0 + r.window.t1)
     << ") - rate * " << 0.5 * (r.window.t0 + r.window.t1)
     << " with lines dt 3 title sprintf('slope %.4f', predicted)\n";
}

}  // namespace corner_ma
