#include <gtest/gtest.h>

#include <cmath>
#include <tuple>

#include "corner_ma/expansion.hpp"

using namespace corner_ma;

namespace {

double sup_error(const ThetaProfile& p, const std::function<double(double)>& f) {
  double m = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) m = std::max(m, std::abs(p[k] - f(p.nodes()[k])));
  return m;
}

const ExpansionTerm* find_term(const Expansion& e, double exponent, int log_power) {
  for (const auto& t : e.terms())
    if (std::abs(t.exponent.value - exponent) < 1e-9 && t.log_power == log_power) return &t;
  return nullptr;
}

// det D^2 of sum_k t^j e^{-g t} w(theta) by strip finite differences, times e^{2t}.
double fd_source(const std::function<double(double, double)>& v, double t, double th) {
  const double h = 1e-3;
  const double c = v(t, th);
  const double vt = (v(t + h, th) - v(t - h, th)) / (2 * h);
  const double vth = (v(t, th + h) - v(t, th - h)) / (2 * h);
  const double vtt = (v(t + h, th) - 2 * c + v(t - h, th)) / (h * h);
  const double vthth = (v(t, th + h) - 2 * c + v(t, th - h)) / (h * h);
  const double vtth = (v(t + h, th + h) - v(t + h, th - h) - v(t - h, th + h) + v(t - h, th - h)) / (4 * h * h);
  const double bracket = (vtt + vt) * (vthth - vt) - (vtth + vth) * (vtth + vth);
  return -std::exp(2 * t) * bracket;
}

}  // namespace

TEST(QuadraticSource, EmptyExpansion) {
  const Expansion e(ConeGeometry::from_float(0.4));
  EXPECT_TRUE(quadratic_source(e, 10.0).empty());
}

TEST(QuadraticSource, SingleLeadingTerm) {
  const auto ledger = build_ledger(ConeGeometry::from_rational(2, 5), 5.1);
  const double c1 = -0.3, a = 2.5;
  const auto s = quadratic_source(Expansion::leading(ledger, c1), 10.0);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(s[0].value, 2 * a - 2, 1e-15);
  EXPECT_EQ(s[0].log_power, 0);
  EXPECT_EQ(s[0].lattice, (Lattice{2, 1}));
  const double k = c1 * c1 * a * a * (a - 1) * (a - 1);
  for (std::size_t n = 1; n + 1 < s[0].profile.size(); ++n) EXPECT_NEAR(s[0].profile[n], k, 1e-10);
}

TEST(QuadraticSource, TwoTermsGiveSquaresAndCross) {
  const auto cone = ConeGeometry::from_float(0.3);
  const auto ledger = build_ledger(cone, 20.0);
  Expansion e = Expansion::leading(ledger, 0.7);
  const ExponentEntry& second = ledger[1];
  const double g2 = second.value;
  e.add({second, 0, ThetaProfile::from_function_zero_ends(cone, [&](double th) {
           return std::sin(th / 0.3) * std::cos(th);
         })});
  const auto s = quadratic_source(e, 100.0);
  ASSERT_EQ(s.size(), 3u);
  const auto l1 = ledger[0].lattice, l2 = second.lattice;
  EXPECT_EQ(s[0].lattice, combine(l1, l1));
  EXPECT_EQ(s[1].lattice, combine(l1, l2));
  EXPECT_EQ(s[2].lattice, combine(l2, l2));
  const double a = 1.0 / 0.3;
  EXPECT_NEAR(s[1].value, a + g2 - 2, 1e-12);
  // The summed source matches the FD determinant of the two-term field.
  auto v = [&](double t, double th) { return e(t, th); };
  for (double t : {0.8, 1.5})
    for (double th : {0.3, 0.5}) {
      double model = 0.0;
      for (const auto& st : s) model += std::pow(t, st.log_power) * std::exp(-st.value * t) * st.profile(th);
      EXPECT_NEAR(model, fd_source(v, t, th), 1e-4 * std::max(1.0, std::abs(model)));
    }
}

TEST(Extend, ClosedFormSecondProfile) {
  const auto cone = ConeGeometry::from_float(0.4);
  const auto ledger = build_ledger(cone, 5.1);
  const double c1 = -0.3, a = 2.5, g = 3.0, L = cone.angle();
  const Expansion e = extend(ledger, Expansion::leading(ledger, c1));
  const ExpansionTerm* t = find_term(e, g, 0);
  ASSERT_NE(t, nullptr);
  const double k = c1 * c1 * a * a * (a - 1) * (a - 1);
  EXPECT_NEAR(k, 1.265625, 1e-15);
  auto closed = [&](double th) {
    return k / (g * g) * (1 - std::cos(g * th) - (1 - std::cos(g * L)) / std::sin(g * L) * std::sin(g * th));
  };
  EXPECT_LT(sup_error(t->profile, closed), 1e-10);
}

TEST(Extend, SecondProfileScalesQuadratically) {
  const auto ledger = build_ledger(ConeGeometry::from_float(0.4), 5.1);
  const Expansion e1 = extend(ledger, Expansion::leading(ledger, -0.3));
  const Expansion e2 = extend(ledger, Expansion::leading(ledger, -0.9));
  const auto* a = find_term(e1, 3.0, 0);
  const auto* b = find_term(e2, 3.0, 0);
  ASSERT_TRUE(a && b);
  for (std::size_t n = 0; n < a->profile.size(); ++n)
    EXPECT_NEAR(b->profile[n], 9.0 * a->profile[n], 1e-12 * std::max(1.0, std::abs(b->profile[n])));
}

TEST(Extend, WideRegimeStartsAtSecondExponent) {
  const auto ledger = build_ledger(ConeGeometry::from_rational(2, 3), 5.6);
  const Expansion lead = Expansion::leading(ledger, 1.0);
  EXPECT_TRUE(lead.empty());
  FreeCoefficients free;
  for (const auto& en : ledger.entries())
    if (en.resonant && !en.coefficient_forced_zero) free.set(en.value, 0.0);
  const Expansion e = extend_to(ledger, lead, 5.6, free);
  EXPECT_TRUE(e.empty());
  FreeCoefficients seeded{{3.0, 0.5}};
  for (const auto& en : ledger.entries())
    if (en.resonant && en.value > 3.5) seeded.set(en.value, 0.0);
  const Expansion f = extend_to(ledger, lead, 5.6, seeded);
  ASSERT_FALSE(f.empty());
  EXPECT_NEAR(f.terms().front().exponent.value, 3.0, 1e-12);
}

TEST(Extend, GeneratedExpansionHasNoKernelSourceAtCollisions) {
  // Seeded by the leading term alone, the source at an exponent in both index
  // sets turns out orthogonal to the resonant kernel, so no log term appears.
  for (auto [p, q, top] : {std::tuple{2L, 5L, 5.0}, std::tuple{1L, 3L, 9.0}}) {
    const auto ledger = build_ledger(ConeGeometry::from_rational(p, q), top + 0.1);
    FreeCoefficients free;
    for (const auto& en : ledger.entries())
      if (en.resonant && en.position > 1) free.set(en.value, 0.0);
    const Expansion e = extend_to(ledger, Expansion::leading(ledger, -0.3), top, free);
    EXPECT_EQ(find_term(e, top, 1), nullptr) << p << "/" << q;
    double scale = 0.0, proj = 0.0;
    for (const auto& s : quadratic_source(e, top))
      if (std::abs(s.value - top) < 1e-9) {
        const auto k = ThetaProfile::from_function_zero_ends(
            ledger.cone(), [&](double th) { return std::sin(top * th); }, s.profile.size());
        proj += s.profile.inner(k);
        scale = std::max(scale, s.profile.sup_norm());
      }
    EXPECT_LT(std::abs(proj), 1e-10 * scale);
  }
}

TEST(Extend, KernelSourceAtCollisionProducesLogTerm) {
  // A second-order profile off the recursion breaks the orthogonality; the
  // lift then carries a t-power at 5.0.
  const auto cone = ConeGeometry::from_rational(2, 5);
  const auto ledger = build_ledger(cone, 5.1);
  Expansion e = Expansion::leading(ledger, -0.3);
  e.add({ledger[1], 0, ThetaProfile::from_function_zero_ends(cone, [](double th) {
           return std::sin(2.5 * th) * (1.0 + th);
         })});
  e = extend_to(ledger, e, 5.0, FreeCoefficients{{5.0, 0.0}});
  const ExpansionTerm* log_term = find_term(e, 5.0, 1);
  ASSERT_NE(log_term, nullptr);
  EXPECT_GT(log_term->profile.sup_norm(), 1e-3);
  const double ratio = log_term->profile(0.3) / std::sin(5.0 * 0.3);
  EXPECT_LT(sup_error(log_term->profile, [&](double th) { return ratio * std::sin(5.0 * th); }),
            1e-9 * std::max(1.0, std::abs(ratio)));
  // the matched-power system at 5.0
  std::vector<ThetaProfile> h;
  for (const auto& s : quadratic_source(e, 5.0))
    if (std::abs(s.value - 5.0) < 1e-9) {
      if (h.size() <= static_cast<std::size_t>(s.log_power))
        h.resize(s.log_power + 1, ThetaProfile(cone, s.profile.size()));
      h[s.log_power] += s.profile;
    }
  ASSERT_EQ(h.size(), 1u);
  const ExpansionTerm* w0 = find_term(e, 5.0, 0);
  ASSERT_NE(w0, nullptr);
  const ThetaProfile r =
      w0->profile.second_derivative() + 25.0 * w0->profile - 10.0 * log_term->profile - h[0];
  double worst = 0.0;
  for (std::size_t k = 1; k + 1 < r.size(); ++k) worst = std::max(worst, std::abs(r[k]));
  EXPECT_LT(worst, 1e-8 * std::max(1.0, h[0].sup_norm()));
}

TEST(Extend, MissingFreeCoefficientThrows) {
  const auto ledger = build_ledger(ConeGeometry::from_rational(2, 5), 5.1);
  EXPECT_THROW(extend_to(ledger, Expansion::leading(ledger, -0.3), 5.0), InvalidArgument);
}

TEST(Evaluate, EmptyAndSingleTerm) {
  const auto cone = ConeGeometry::from_float(0.4);
  const auto ledger = build_ledger(cone, 5.1);
  const auto zero = evaluate(Expansion(cone), {1.0, 3.0}, 11, 9);
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
  const auto s = evaluate(Expansion::leading(ledger, -0.3), {1.0, 3.0}, 11, 9);
  for (std::size_t i = 0; i < s.nt(); ++i)
    for (std::size_t j = 1; j + 1 < s.ntheta(); ++j)
      EXPECT_NEAR(s(i, j), -0.3 * std::exp(-2.5 * s.t(i)) * std::sin(2.5 * s.theta(j)), 1e-14);
}

TEST(ExpansionJson, RoundTrip) {
  const auto ledger = build_ledger(ConeGeometry::from_rational(2, 5), 5.1);
  const Expansion e = extend_to(ledger, Expansion::leading(ledger, -0.3), 5.0, FreeCoefficients{{5.0, 0.1}});
  const Expansion back = expansion_from_json(to_json(e), ledger);
  ASSERT_EQ(back.terms().size(), e.terms().size());
  for (std::size_t k = 0; k < e.terms().size(); ++k) {
    EXPECT_EQ(back.terms()[k].log_power, e.terms()[k].log_power);
    EXPECT_EQ(back.terms()[k].profile.values(), e.terms()[k].profile.values());
  }
  EXPECT_EQ(to_json(back).dump(), to_json(e).dump());
}

TEST(ExpansionAdd, RejectsInvalidTerms) {
  const auto cone = ConeGeometry::from_float(0.4);
  const auto ledger = build_ledger(cone, 5.1);
  Expansion e(cone);
  EXPECT_THROW(e.add({ledger[0], 0, ThetaProfile::from_function(cone, [](double) { return 1.0; })}),
               InvalidArgument);
  const auto p = ThetaProfile::from_function_zero_ends(cone, [](double th) { return th; });
  EXPECT_THROW(e.add({ledger[0], 1, p}), InvalidArgument);
  e.add({ledger[0], 0, p});
  EXPECT_THROW(e.add({ledger[0], 0, p}), InvalidArgument);
}
