#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "corner_ma/cone.hpp"
#include "corner_ma/error.hpp"
#include "corner_ma/ledger.hpp"
#include "corner_ma/ode_bvp.hpp"
#include "corner_ma/profile.hpp"

namespace corner_ma {

/// One term c(theta) t^j e^{-gamma t}, i.e. c(theta) |x|^gamma (-ln|x|)^j.
struct ExpansionTerm {
  ExponentEntry exponent;
  int log_power = 0;
  ThetaProfile profile;

  double operator()(double t, double theta) const {
    return profile(theta) * std::pow(t, log_power) * std::exp(-exponent.value * t);
  }
};

/// Finite sum of terms, sorted by (exponent, log power); every exponent up to
/// `truncation` has been processed.
class Expansion {
 public:
  explicit Expansion(ConeGeometry cone) : cone_(cone) {}

  const ConeGeometry& cone() const { return cone_; }
  const std::vector<ExpansionTerm>& terms() const { return terms_; }
  double truncation() const { return truncation_; }
  bool empty() const { return terms_.empty(); }

  void set_truncation(double t) { truncation_ = t; }

  void add(ExpansionTerm term) {
    if (std::abs(term.profile[0]) > 0.0 || std::abs(term.profile[term.profile.size() - 1]) > 0.0)
      throw InvalidArgument("Expansion: term profiles must vanish at both edges");
    if (term.log_power < 0 || term.log_power > term.exponent.max_log_power)
      throw InvalidArgument("Expansion: log power exceeds the bound for this exponent");
    for (auto& t : terms_) {
      if (same_exponent(cone_, t.exponent.lattice, term.exponent.lattice) &&
          t.log_power == term.log_power)
        throw InvalidArgument("Expansion: duplicate (exponent, log power) term");
    }
    terms_.push_back(std::move(term));
    std::stable_sort(terms_.begin(), terms_.end(), [](const auto& a, const auto& b) {
      if (a.exponent.value != b.exponent.value) return a.exponent.value < b.exponent.value;
      return a.log_power < b.log_power;
    });
    truncation_ = std::max(truncation_, terms_.back().exponent.value);
  }

  /// Leading term c sin(theta/mu) e^{-t/mu}.
  static Expansion leading(const ExponentLedger& ledger, double c,
                           std::size_t nodes = kDefaultThetaNodes) {
    const ConeGeometry& cone = ledger.cone();
    Expansion e(cone);
    const ExponentEntry& first = ledger[0];
    if (first.coefficient_forced_zero) {
      e.truncation_ = first.value;
      return e;
    }
    const double a = first.value;
    e.add({first, 0,
           ThetaProfile::from_function_zero_ends(
               cone, [&](double th) { return c * std::sin(a * th); }, nodes)});
    return e;
  }

  /// Terms whose exponent is among the first `groups` distinct exponents.
  Expansion truncated_to_groups(std::size_t groups) const {
    Expansion out(cone_);
    std::size_t seen = 0;
    double last = -1.0;
    for (const auto& t : terms_) {
      if (t.exponent.value != last) {
        ++seen;
        last = t.exponent.value;
      }
      if (seen > groups) break;
      out.terms_.push_back(t);
      out.truncation_ = t.exponent.value;
    }
    return out;
  }

  std::vector<double> distinct_exponents() const {
    std::vector<double> v;
    for (const auto& t : terms_)
      if (v.empty() || v.back() != t.exponent.value) v.push_back(t.exponent.value);
    return v;
  }

  double operator()(double t, double theta) const {
    double s = 0.0;
    for (const auto& term : terms_) s += term(t, theta);
    return s;
  }

 private:
  ConeGeometry cone_;
  std::vector<ExpansionTerm> terms_;
  double truncation_ = 0.0;
};

/// Part of e^{-2t} F0(v) at one order: t^log_power e^{-value t} profile(theta).
struct SourceTerm {
  Lattice lattice;
  double value = 0.0;
  int log_power = 0;
  ThetaProfile profile;
};

namespace detail {

// Polynomial in t with profile coefficients: sum_p coeff[p] t^p.
using ProfilePoly = std::vector<std::optional<ThetaProfile>>;

inline void poly_add(ProfilePoly& poly, std::size_t power, const ThetaProfile& p) {
  if (poly.size() <= power) poly.resize(power + 1);
  if (poly[power])
    *poly[power] += p;
  else
    poly[power] = p;
}

inline ProfilePoly poly_mul(const ProfilePoly& a, const ProfilePoly& b) {
  ProfilePoly out;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      if (a[i] && b[j]) poly_add(out, i + j, *a[i] * *b[j]);
  return out;
}

// Strip derivative combinations of c(theta) t^j e^{-gamma t}, divided by e^{-gamma t}:
//   A = v_tt + v_t,  B = v_thth - v_t,  C = v_tth + v_th.
struct TermDerivatives {
  ProfilePoly a, b, c;
};

inline TermDerivatives term_derivatives(const ExpansionTerm& term) {
  const double g = term.exponent.value;
  const auto j = static_cast<std::size_t>(term.log_power);
  const double jd = static_cast<double>(j);
  const ThetaProfile& c = term.profile;
  const ThetaProfile dc = c.derivative();
  const ThetaProfile ddc = c.second_derivative();
  TermDerivatives d;
  poly_add(d.a, j, (g * g - g) * c);
  poly_add(d.b, j, ddc + g * c);
  poly_add(d.c, j, (1.0 - g) * dc);
  if (j >= 1) {
    poly_add(d.a, j - 1, (jd - 2.0 * g * jd) * c);
    poly_add(d.b, j - 1, (-jd) * c);
    poly_add(d.c, j - 1, jd * dc);
  }
  if (j >= 2) poly_add(d.a, j - 2, (jd * (jd - 1.0)) * c);
  return d;
}

}  // namespace detail

/// Quadratic source e^{-2t} F0(v) = -e^{2t} det D^2 v of the expansion,
/// expanded bilinearly over term pairs; orders above `cutoff` are dropped.
/// One entry per (exponent, log power).
inline std::vector<SourceTerm> quadratic_source(const Expansion& e, double cutoff) {
  const ConeGeometry& cone = e.cone();
  const auto& terms = e.terms();
  std::vector<detail::TermDerivatives> der;
  der.reserve(terms.size());
  for (const auto& t : terms) der.push_back(detail::term_derivatives(t));

  std::vector<SourceTerm> out;
  auto accumulate = [&](Lattice lat, double value, std::size_t power, const ThetaProfile& p) {
    for (auto& s : out) {
      if (s.log_power == static_cast<int>(power) && same_exponent(cone, s.lattice, lat)) {
        s.profile += p;
        return;
      }
    }
    out.push_back({lat, value, static_cast<int>(power), p});
  };

  for (std::size_t a = 0; a < terms.size(); ++a) {
    for (std::size_t b = a; b < terms.size(); ++b) {
      const double value = terms[a].exponent.value + terms[b].exponent.value - 2.0;
      if (value > cutoff + kExponentTolerance) continue;
      const Lattice lat = combine(terms[a].exponent.lattice, terms[b].exponent.lattice);
      // Polarized bracket: (A_a B_b + A_b B_a)/2 - C_a C_b; off-diagonal pairs count twice.
      detail::ProfilePoly ab = detail::poly_mul(der[a].a, der[b].b);
      const detail::ProfilePoly ba = detail::poly_mul(der[b].a, der[a].b);
      const detail::ProfilePoly cc = detail::poly_mul(der[a].c, der[b].c);
      const double pair = a == b ? 1.0 : 2.0;
      const std::size_t len = std::max({ab.size(), ba.size(), cc.size()});
      for (std::size_t p = 0; p < len; ++p) {
        std::optional<ThetaProfile> acc;
        auto add = [&](const detail::ProfilePoly& poly, double w) {
          if (p < poly.size() && poly[p]) {
            if (acc)
              *acc += w * *poly[p];
            else
              acc = w * *poly[p];
          }
        };
        add(ab, 0.5);
        add(ba, 0.5);
        add(cc, -1.0);
        // source = -e^{2t} * bracket
        if (acc) accumulate(lat, lattice_value(cone, lat), p, (-pair) * *acc);
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const SourceTerm& x, const SourceTerm& y) {
    if (x.value != y.value) return x.value < y.value;
    return x.log_power < y.log_power;
  });
  return out;
}

/// Free coefficients of the homogeneous terms sin(gamma theta) at resonant
/// exponents; they are fixed by global data, not by the local recursion.
class FreeCoefficients {
 public:
  FreeCoefficients() = default;
  FreeCoefficients(std::initializer_list<std::pair<double, double>> items) : items_(items) {}

  void set(double exponent, double value) {
    for (auto& [e, v] : items_)
      if (std::abs(e - exponent) < kExponentTolerance) {
        v = value;
        return;
      }
    items_.emplace_back(exponent, value);
  }
  std::optional<double> get(double exponent) const {
    for (const auto& [e, v] : items_)
      if (std::abs(e - exponent) < kExponentTolerance) return v;
    return std::nullopt;
  }
  const std::vector<std::pair<double, double>>& items() const { return items_; }

 private:
  std::vector<std::pair<double, double>> items_;
};

/// Relative size below which a computed profile counts as absent.
inline constexpr double kNegligibleProfile = 1e-11;

/// Appends every term at the next ledger exponent after e.truncation().
inline Expansion extend(const ExponentLedger& ledger, const Expansion& e,
                        const FreeCoefficients& free = {}) {
  const ConeGeometry& cone = ledger.cone();
  const ExponentEntry* next = e.truncation() <= 0.0 ? &ledger[0] : ledger.next_after(e.truncation());
  if (!next) throw InvalidArgument("extend: ledger cutoff reached");
  const double gamma = next->value;
  const std::size_t nodes = e.empty() ? kDefaultThetaNodes : e.terms().front().profile.size();

  const auto sources = quadratic_source(e, gamma);
  std::vector<ThetaProfile> h;
  for (const auto& s : sources) {
    const ExponentEntry* entry = ledger.find(s.lattice);
    if (!entry)
      throw Error("extend: source at exponent " + std::to_string(s.value) +
                  " is absent from the ledger");
    if (entry->value < gamma - kExponentTolerance) {
      // Orders already processed must have been absorbed by earlier steps.
      if (entry->value > e.truncation() + kExponentTolerance)
        throw Error("extend: source below the next exponent was skipped");
      continue;
    }
    const auto p = static_cast<std::size_t>(s.log_power);
    if (h.size() <= p) h.resize(p + 1, ThetaProfile(cone, nodes));
    h[p] += s.profile;
  }

  Expansion out = e;
  out.set_truncation(gamma);
  if (next->coefficient_forced_zero && h.empty()) return out;

  std::vector<ThetaProfile> w;
  if (!h.empty()) w = resonant_lift(gamma, h);
  if (next->resonant) {
    const auto c = free.get(gamma);
    if (!c)
      throw InvalidArgument("extend: missing free coefficient at resonant exponent " +
                            std::to_string(gamma));
    const ThetaProfile homogeneous = ThetaProfile::from_function_zero_ends(
        cone, [&](double th) { return *c * std::sin(gamma * th); }, nodes);
    if (w.empty())
      w.push_back(homogeneous);
    else
      w[0] += homogeneous;
  }

  double scale = 0.0;
  for (const auto& p : w) scale = std::max(scale, p.sup_norm());
  for (const auto& hp : h) scale = std::max(scale, hp.sup_norm() / (gamma * gamma));
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (w[j].sup_norm() <= kNegligibleProfile * scale || w[j].sup_norm() == 0.0) continue;
    if (static_cast<int>(j) > next->max_log_power)
      throw Error("extend: log power above the theoretical bound");
    out.add({*next, static_cast<int>(j), w[j]});
  }
  out.set_truncation(gamma);
  return out;
}

/// Extends until every ledger exponent <= target has been processed.
inline Expansion extend_to(const ExponentLedger& ledger, Expansion e, double target,
                           const FreeCoefficients& free = {}) {
  while (true) {
    const ExponentEntry* next =
        e.truncation() <= 0.0 ? &ledger[0] : ledger.next_after(e.truncation());
    if (!next || next->value > target + kExponentTolerance) return e;
    e = extend(ledger, e, free);
  }
}

/// Pointwise sum of the terms on a uniform strip grid.
inline StripField evaluate(const Expansion& e, StripWindow window, std::size_t nt,
                           std::size_t ntheta) {
  StripField s(e.cone(), window, nt, ntheta);
  std::vector<double> th(ntheta);
  for (std::size_t j = 0; j < ntheta; ++j) th[j] = s.theta(j);
  for (const auto& term : e.terms()) {
    std::vector<double> prof(ntheta);
    for (std::size_t j = 0; j < ntheta; ++j)
      prof[j] = (j == 0 || j + 1 == ntheta) ? 0.0 : term.profile(th[j]);
    for (std::size_t i = 0; i < nt; ++i) {
      const double t = s.t(i);
      const double f = std::pow(t, term.log_power) * std::exp(-term.exponent.value * t);
      for (std::size_t j = 0; j < ntheta; ++j) s(i, j) += f * prof[j];
    }
  }
  return s;
}

inline constexpr int kExpansionSchemaVersion = 1;

inline nlohmann::json to_json(const Expansion& e) {
  nlohmann::json j;
  j["schema_version"] = kExpansionSchemaVersion;
  j["cone"]["mu"] = e.cone().mu();
  if (const auto& r = e.cone().mu_rational()) j["cone"]["mu_rational"] = {r->p, r->q};
  j["cone"]["regime"] = to_string(e.cone().regime());
  j["truncation"] = e.truncation();
  j["terms"] = nlohmann::json::array();
  for (const auto& t : e.terms()) {
    nlohmann::json tj;
    tj["exponent_value"] = t.exponent.value;
    tj["lattice"] = {t.exponent.lattice.k, t.exponent.lattice.m};
    tj["log_power"] = t.log_power;
    tj["profile_nodes"] = {{"theta", t.profile.nodes()}, {"value", t.profile.values()}};
    j["terms"].push_back(std::move(tj));
  }
  return j;
}

/// Rebuilds an expansion against a ledger of the same cone.
inline Expansion expansion_from_json(const nlohmann::json& j, const ExponentLedger& ledger) {
  if (j.at("schema_version").get<int>() != kExpansionSchemaVersion)
    throw InvalidArgument("Expansion JSON: unsupported schema version");
  Expansion e(ledger.cone());
  for (const auto& tj : j.at("terms")) {
    const Lattice lat{tj.at("lattice").at(0).get<long>(), tj.at("lattice").at(1).get<long>()};
    const ExponentEntry* entry = ledger.find(lat);
    if (!entry) throw InvalidArgument("Expansion JSON: exponent not in ledger");
    e.add({*entry, tj.at("log_power").get<int>(),
           ThetaProfile(ledger.cone(), tj.at("profile_nodes").at("value").get<std::vector<double>>())});
  }
  e.set_truncation(j.at("truncation").get<double>());
  return e;
}

}  // namespace corner_ma
