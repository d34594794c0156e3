#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "corner_ma/cone.hpp"
#include "corner_ma/grid.hpp"

using namespace corner_ma;

namespace {
constexpr double kPi = std::numbers::pi;
}

TEST(ConeGeometry, RejectsMuOutsideUnitInterval) {
  EXPECT_THROW(ConeGeometry::from_float(0.0), InvalidArgument);
  EXPECT_THROW(ConeGeometry::from_float(1.0), InvalidArgument);
  EXPECT_THROW(ConeGeometry::from_rational(5, 5), InvalidArgument);
  EXPECT_EQ(ConeGeometry::from_float(0.4).regime(), Regime::Sharp);
  EXPECT_EQ(ConeGeometry::from_float(0.5).regime(), Regime::Wide);
}

TEST(ToStrip, ZeroMapsToZero) {
  const auto cone = ConeGeometry::from_float(0.4);
  const auto s = to_strip([](double, double) { return 0.0; }, cone, {1.0, 3.0}, 21, 17);
  for (double v : s.values()) EXPECT_EQ(v, 0.0);
}

TEST(ToStrip, RadialFunctionIsThetaIndependent) {
  const auto cone = ConeGeometry::from_float(0.4);
  const auto s = to_strip([](double x, double y) { return x * x + y * y; }, cone, {1.0, 3.0}, 21,
                          17, std::nan(""));
  for (std::size_t i = 0; i < s.nt(); ++i)
    for (std::size_t j = 1; j + 1 < s.ntheta(); ++j)
      EXPECT_NEAR(s(i, j), std::exp(-2.0 * s.t(i)), 1e-15);
}

TEST(ToStrip, InterpolatedSamplesReproduceLeadingTerm) {
  const auto cone = ConeGeometry::from_float(0.4);
  auto v = [](double x, double y) {
    const double r = std::hypot(x, y), th = std::atan2(y, x);
    return -0.3 * std::pow(r, 2.5) * std::sin(2.5 * th);
  };
  const TensorGrid grid{graded_nodes(1024, 1.0), graded_nodes(1024, 1.0)};
  const GridField g = GridField::sample(grid, v);
  // v vanishes on theta = mu pi only as a function; sample the sector inside [0,1]^2
  const auto cone_q = cone;
  const auto s = to_strip(g, cone_q, {1.0, 3.0}, 41, 33);
  double worst = 0.0;
  for (std::size_t i = 0; i < s.nt(); ++i)
    for (std::size_t j = 0; j < s.ntheta(); ++j)
      worst = std::max(worst, std::abs(s(i, j) + 0.3 * std::exp(-2.5 * s.t(i)) *
                                                     std::sin(2.5 * s.theta(j))));
  EXPECT_LT(worst, 1e-6);
}

TEST(ToStrip, RejectsNegativeTAndMissingCoverage) {
  const auto cone = ConeGeometry::from_float(0.4);
  EXPECT_THROW(to_strip([](double, double) { return 0.0; }, cone, {-0.5, 1.0}, 5, 5),
               InvalidArgument);
  const TensorGrid small{graded_nodes(33, 0.1), graded_nodes(33, 0.1)};
  const GridField g = GridField::sample(small, [](double, double) { return 0.0; });
  EXPECT_THROW(to_strip(g, cone, {1.0, 3.0}, 5, 5), CoverageError);
}

TEST(ToStrip, CsvRoundTrip) {
  const auto cone = ConeGeometry::from_rational(3, 10);
  const auto s = to_strip([](double x, double y) { return x * y + 0.1 * x; }, cone, {1.0, 2.0}, 9,
                          7);
  std::stringstream io;
  s.write_csv(io);
  const auto back = StripField::read_csv(io, cone);
  ASSERT_EQ(back.nt(), s.nt());
  ASSERT_EQ(back.ntheta(), s.ntheta());
  for (std::size_t k = 0; k < s.values().size(); ++k) EXPECT_EQ(back.values()[k], s.values()[k]);
}

TEST(StripDetHessian, HalfNormSquaredGivesOne) {
  // v~ = e^{-2t}/2
  for (double t : {0.0, 0.7, 2.0}) {
    const double e = std::exp(-2.0 * t);
    EXPECT_NEAR(strip_det_hessian(-e, 0.0, 2.0 * e, 0.0, 0.0, t), 1.0, 1e-14);
  }
}

TEST(StripDetHessian, LeadingTermMatchesPolarFormula) {
  // Oracle: det D^2 (r^a sin a th) from the polar Hessian
  // det = (v_rr)(v_r/r + v_thth/r^2) - (v_rth/r - v_th/r^2)^2.
  const double a = 2.5;
  for (double t : {0.5, 1.3}) {
    for (double th : {0.2, 0.7, 1.1}) {
      const double r = std::exp(-t);
      const double s = std::sin(a * th), c = std::cos(a * th);
      const double vrr = a * (a - 1) * std::pow(r, a - 2) * s;
      const double vr = a * std::pow(r, a - 1) * s;
      const double vthth = -a * a * std::pow(r, a) * s;
      const double vrth = a * a * std::pow(r, a - 1) * c;
      const double vth = a * std::pow(r, a) * c;
      const double oracle =
          vrr * (vr / r + vthth / (r * r)) - std::pow(vrth / r - vth / (r * r), 2);
      // strip derivatives of e^{-a t} sin(a th)
      const double e = std::exp(-a * t);
      const double got =
          strip_det_hessian(-a * e * s, a * e * c, a * a * e * s, -a * a * e * c, -a * a * e * s, t);
      EXPECT_NEAR(got, oracle, 1e-10 * std::max(1.0, std::abs(oracle)));
      EXPECT_NEAR(got, -a * a * (a - 1) * (a - 1) * std::exp(-(2 * a - 4) * t) * s * s -
                           a * a * (a - 1) * (a - 1) * std::exp(-(2 * a - 4) * t) * c * c,
                  1e-10);
    }
  }
}

TEST(StripDetHessian, PolynomialAgreesWithCartesianFd) {
  // v = x^3 + 2 x^2 y - y^3 + x y; strip derivatives by central differences in (t, theta)
  auto v = [](double x, double y) { return x * x * x + 2 * x * x * y - y * y * y + x * y; };
  auto vs = [&](double t, double th) { return v(std::exp(-t) * std::cos(th), std::exp(-t) * std::sin(th)); };
  auto exact = [](double x, double y) {
    const double vxx = 6 * x + 4 * y, vyy = -6 * y, vxy = 4 * x + 1;
    return vxx * vyy - vxy * vxy;
  };
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> tu(0.2, 1.5), thu(0.1, 1.4);
  std::vector<double> err(2, 0.0);
  for (int n = 0; n < 100; ++n) {
    const double t = tu(rng), th = thu(rng);
    const double x = std::exp(-t) * std::cos(th), y = std::exp(-t) * std::sin(th);
    for (int level = 0; level < 2; ++level) {
      const double h = level == 0 ? 1e-2 : 5e-3;
      const double c = vs(t, th);
      const double vt = (vs(t + h, th) - vs(t - h, th)) / (2 * h);
      const double vth = (vs(t, th + h) - vs(t, th - h)) / (2 * h);
      const double vtt = (vs(t + h, th) - 2 * c + vs(t - h, th)) / (h * h);
      const double vthth = (vs(t, th + h) - 2 * c + vs(t, th - h)) / (h * h);
      const double vtth = (vs(t + h, th + h) - vs(t + h, th - h) - vs(t - h, th + h) + vs(t - h, th - h)) / (4 * h * h);
      err[level] = std::max(err[level], std::abs(strip_det_hessian(vt, vth, vtt, vtth, vthth, t) - exact(x, y)));
    }
  }
  const double ratio = err[0] / err[1];
  EXPECT_GT(ratio, 3.2);
  EXPECT_LT(ratio, 4.8);
}

TEST(HarmonicMode, HalfConeIsTwiceXY) {
  const auto h = harmonic_mode(1, ConeGeometry::from_float(0.5));
  for (double x : {0.1, 0.4, 0.9})
    for (double y : {0.2, 0.5}) EXPECT_NEAR(h(x, y), 2.0 * x * y, 1e-14);
}

TEST(HarmonicMode, DiscreteLaplacianIsSecondOrder) {
  const auto cone = ConeGeometry::from_float(0.4);
  const auto h = harmonic_mode(1, cone);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ru(0.3, 0.9), tu(0.2, cone.angle() - 0.2);
  double e1 = 0.0, e2 = 0.0;
  for (int n = 0; n < 100; ++n) {
    const double r = ru(rng), th = tu(rng);
    const double x = r * std::cos(th), y = r * std::sin(th);
    auto lap = [&](double s) {
      return (h(x + s, y) + h(x - s, y) + h(x, y + s) + h(x, y - s) - 4 * h(x, y)) / (s * s);
    };
    e1 = std::max(e1, std::abs(lap(0.02)));
    e2 = std::max(e2, std::abs(lap(0.01)));
  }
  EXPECT_GT(e1 / e2, 3.2);
  EXPECT_LT(e1 / e2, 4.8);
}

TEST(HarmonicMode, VanishesOnTheEdge) {
  const auto cone = ConeGeometry::from_float(0.4);
  const auto h = harmonic_mode(1, cone);
  EXPECT_EQ(h.polar(0.7, cone.angle()), 0.0);
  EXPECT_EQ(h.polar(0.7, 0.0), 0.0);
  EXPECT_THROW(harmonic_mode(0, cone), InvalidArgument);
}

TEST(AffineNormalizer, KnownAngles) {
  const auto half = affine_normalizer(0.5);
  EXPECT_NEAR(half.cone.mu(), 0.25, 1e-14);
  const auto& m = half.map.matrix();
  EXPECT_NEAR(m[0][0], 1.0, 1e-15);
  EXPECT_NEAR(m[0][1], -1.0, 1e-15);
  EXPECT_NEAR(m[1][0], 0.0, 1e-15);
  EXPECT_NEAR(m[1][1], std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(affine_normalizer(0.75).cone.mu(), 1.0 / 3.0, 1e-14);
  EXPECT_NEAR(affine_normalizer(std::pow(std::sin(0.3 * kPi), 2)).cone.mu(), 0.3, 1e-14);
  EXPECT_THROW(affine_normalizer(1.0), InvalidArgument);
}

TEST(AffineNormalizer, PullsModelQuadraticBackToHalfNorm) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double c : {0.25, 0.5, 0.75, std::pow(std::sin(0.3 * kPi), 2)}) {
    const auto nz = affine_normalizer(c);
    for (int k = 0; k < 1000; ++k) {
      const Point2 y{u(rng), u(rng)};
      const Point2 x = nz.map.apply(y);
      EXPECT_NEAR(model_quadratic(c, x.x, x.y), 0.5 * (y.x * y.x + y.y * y.y), 1e-12);
    }
  }
}

TEST(AffineNormalizer, MapsQuarterPlaneEdgesToCone) {
  // A sends the cone edges onto the coordinate half-axes.
  const double c = 0.75;
  const auto nz = affine_normalizer(c);
  const double a = nz.cone.angle();
  const Point2 e = nz.map.apply({std::cos(a), std::sin(a)});
  EXPECT_NEAR(e.x, 0.0, 1e-14);
  EXPECT_GT(e.y, 0.0);
  const Point2 b = nz.map.apply({1.0, 0.0});
  EXPECT_EQ(b.y, 0.0);
  EXPECT_GT(b.x, 0.0);
}
