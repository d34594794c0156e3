#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "corner_ma/ode_bvp.hpp"

using namespace corner_ma;

namespace {

const ConeGeometry kCone = ConeGeometry::from_float(0.4);

double sup_error(const ThetaProfile& p, const std::function<double(double)>& f) {
  double m = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) m = std::max(m, std::abs(p[k] - f(p.nodes()[k])));
  return m;
}

// Least-squares fits of ln|psi| = c + p ln t - r t with either p or r held fixed.
double fit_rate(const DecayingModeSolution& psi, double t0, double t1, double p) {
  const int n = 41;
  Eigen::MatrixXd a(n, 2);
  Eigen::VectorXd b(n);
  for (int k = 0; k < n; ++k) {
    const double t = t0 + (t1 - t0) * k / (n - 1);
    a(k, 0) = 1.0;
    a(k, 1) = -t;
    b(k) = std::log(std::abs(psi(t))) - p * std::log(t);
  }
  return a.colPivHouseholderQr().solve(b)(1);
}

double fit_power(const DecayingModeSolution& psi, double t0, double t1, double r) {
  const int n = 41;
  Eigen::MatrixXd a(n, 2);
  Eigen::VectorXd b(n);
  for (int k = 0; k < n; ++k) {
    const double t = t0 + (t1 - t0) * k / (n - 1);
    a(k, 0) = 1.0;
    a(k, 1) = std::log(t);
    b(k) = std::log(std::abs(psi(t))) + r * t;
  }
  return a.colPivHouseholderQr().solve(b)(1);
}

}  // namespace

TEST(DecayingMode, ZeroSource) {
  const auto psi = solve_decaying_mode(ModeOperator(1, kCone), {[](double) { return 0.0; }, 2.0, 0}, 1.0);
  for (double t : {1.0, 2.0, 7.5}) EXPECT_EQ(psi(t), 0.0);
}

TEST(DecayingMode, NonResonantExponential) {
  const double k = 2.5;
  for (double g : {2.0, 3.0, 4.0}) {
    const auto psi = solve_decaying_mode(ModeOperator(1, kCone),
                                         {[g](double t) { return std::exp(-g * t); }, g, 0}, 1.0);
    for (double t : {3.0, 6.0, 10.0}) {
      const double particular = std::exp(-g * t) / (g * g - k * k);
      if (g > k) {
        EXPECT_NEAR(psi(t) / particular, 1.0, 1e-9) << g << " " << t;
      } else {
        // the homogeneous remainder is O(e^{-k t}), negligible relative to e^{-g t}
        EXPECT_NEAR(psi(t) / particular, 1.0, 2.0 * std::exp(-(k - g) * (t - 1.0))) << g;
      }
    }
  }
}

TEST(DecayingMode, SatisfiesTheOde) {
  const double g = 2.2;
  const ModeOperator op(1, kCone);
  const auto psi = solve_decaying_mode(op, {[g](double t) { return t * std::exp(-g * t); }, g, 1}, 1.0);
  for (double t : {2.0, 4.0}) {
    const double h = 1e-3;
    const double d2 = (psi(t + h) - 2 * psi(t) + psi(t - h)) / (h * h);
    EXPECT_NEAR(d2 - 6.25 * psi(t), t * std::exp(-g * t), 1e-6 * std::exp(-g * t));
  }
}

TEST(DecayingMode, ResonantGainsOnePowerOfT) {
  const double g = 2.5;
  const auto psi = solve_decaying_mode(ModeOperator(1, kCone),
                                       {[g](double t) { return std::exp(-g * t); }, g, 0}, 1.0);
  // psi = -(t - T) e^{-g t} / (2g) - e^{-g t} / (4 g^2) for T = 1
  for (double t : {1.0, 2.0, 5.0, 12.0}) {
    const double exact = -(t - 1.0) * std::exp(-g * t) / (2 * g) - std::exp(-g * t) / (4 * g * g);
    EXPECT_NEAR(psi(t) / exact, 1.0, 1e-9);
  }
}

TEST(DecayingMode, FittedRatesAndPowers) {
  for (int m : {0, 1})
    for (double g : {2.0, 2.5, 3.0}) {
      const auto psi = solve_decaying_mode(
          ModeOperator(1, kCone), {[g, m](double t) { return std::pow(t, m) * std::exp(-g * t); }, g, m},
          1.0);
      const bool resonant = g == 2.5;
      // Rate with the predicted polynomial power; lower powers perturb the
      // local slope by O(1/t^2), hence the far window.
      EXPECT_NEAR(fit_rate(psi, 101.0, 151.0, m + (resonant ? 1 : 0)), g, 1e-3)
          << "m=" << m << " gamma=" << g;
      if (resonant) {
        EXPECT_NEAR(fit_power(psi, 11.0, 21.0, g) - m, 1.0, 0.1) << "m=" << m;
      }
    }
}

TEST(DecayingMode, RejectsBadInput) {
  EXPECT_THROW(solve_decaying_mode(ModeOperator(1, kCone), {[](double) { return 0.0; }, -1.0, 0}, 1.0),
               InvalidArgument);
  EXPECT_THROW(ModeOperator(0, kCone), InvalidArgument);
  const auto psi = solve_decaying_mode(ModeOperator(1, kCone), {[](double) { return 0.0; }, 1.0, 0}, 1.0);
  EXPECT_THROW(psi(0.5), InvalidArgument);
}

TEST(ThetaBvp, SineSource) {
  const double gamma = 3.0;
  const double w = 2.0 / 0.4;  // k/mu, k = 2
  const auto h = ThetaProfile::from_function(kCone, [w](double th) { return std::sin(w * th); });
  const auto r = theta_bvp(gamma, h);
  EXPECT_LT(sup_error(r.w, [&](double th) { return std::sin(w * th) / (gamma * gamma - w * w); }), 1e-12);
  EXPECT_LT(r.residual, 1e-8);
}

TEST(ThetaBvp, ConstantSource) {
  const double g = 3.0, L = kCone.angle();
  const auto h = ThetaProfile::from_function(kCone, [](double) { return 1.0; });
  const auto r = theta_bvp(g, h);
  const auto exact = [&](double th) {
    return (1.0 - std::cos(g * th) - (1.0 - std::cos(g * L)) / std::sin(g * L) * std::sin(g * th)) /
           (g * g);
  };
  EXPECT_LT(sup_error(r.w, exact), 1e-12);
}

TEST(ThetaBvp, ResonantGammaThrows) {
  const auto h = ThetaProfile::from_function(kCone, [](double) { return 1.0; });
  EXPECT_THROW(theta_bvp(2.5, h), ResonanceError);
  EXPECT_THROW(theta_bvp(5.0, h), ResonanceError);
}

TEST(ResonantLift, NonResonantReducesToThetaBvp) {
  const auto h0 = ThetaProfile::from_function(kCone, [](double th) { return th * th - 1.0; });
  const auto w = resonant_lift(3.0, {h0});
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[1].sup_norm(), 0.0);
  const auto direct = theta_bvp(3.0, h0);
  EXPECT_LT(sup_error(w[0], [&](double th) { return direct.w(th); }), 1e-12);
}

TEST(ResonantLift, MatchedPowerSystemForLinearSource) {
  // Few nodes: the residual is evaluated through the collocation second
  // derivative, whose roundoff grows like n^4.
  const double g = 3.3;
  const std::size_t n = 24;
  const auto h0 = ThetaProfile::from_function(kCone, [](double th) { return std::cos(th); }, n);
  const auto h1 = ThetaProfile::from_function(kCone, [](double th) { return th; }, n);
  const auto w = resonant_lift(g, {h0, h1});
  ASSERT_EQ(w.size(), 3u);
  const std::vector<ThetaProfile> h{h0, h1};
  for (std::size_t j = 0; j < 2; ++j) {
    ThetaProfile r = w[j].second_derivative() + (g * g) * w[j] - (2.0 * (j + 1) * g) * w[j + 1] - h[j];
    if (j + 2 < w.size()) r += static_cast<double>((j + 2) * (j + 1)) * w[j + 2];
    for (std::size_t k = 1; k + 1 < r.size(); ++k) EXPECT_LT(std::abs(r[k]), 1e-10);
  }
}

TEST(ResonantLift, ResonantStripResidual) {
  // Laplacian of (t w1 + w0) e^{-g t} against e^{-g t} h0 with h0 = sin(theta/mu).
  const double g = 2.5;
  const auto h0 = ThetaProfile::from_function(kCone, [g](double th) { return std::sin(g * th); });
  const auto w = resonant_lift(g, {h0});
  ASSERT_EQ(w.size(), 2u);
  // w1 carries the kernel: w1 = -<h0, s>/(2 g <s, s>) s = -1/(2g) sin(g theta)
  EXPECT_LT(sup_error(w[1], [g](double th) { return -std::sin(g * th) / (2 * g); }), 1e-12);
  const ThetaProfile w0pp = w[0].second_derivative(), w1pp = w[1].second_derivative();
  double worst = 0.0;
  for (double t : {0.5, 1.0, 2.0, 4.0}) {
    const double e = std::exp(-g * t);
    for (std::size_t k = 1; k + 1 < h0.size(); ++k) {
      // d_tt (t e^{-gt}) = (g^2 t - 2 g) e^{-gt}
      const double vtt = (g * g * t - 2 * g) * e * w[1][k] + g * g * e * w[0][k];
      const double vthth = t * e * w1pp[k] + e * w0pp[k];
      worst = std::max(worst, std::abs(vtt + vthth - e * h0[k]) / e);
    }
  }
  EXPECT_LT(worst, 1e-8);
}
