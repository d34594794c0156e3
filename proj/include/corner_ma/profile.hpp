#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <memory>
#include <mutex>
#include <numbers>
#include <ostream>
#include <utility>
#include <vector>

#include "corner_ma/cone.hpp"
#include "corner_ma/error.hpp"

namespace corner_ma {

inline constexpr std::size_t kDefaultThetaNodes = 64;

/// Chebyshev-Lobatto collocation on [0, L]: nodes in increasing order,
/// barycentric weights, differentiation matrices and Clenshaw-Curtis weights.
class ChebyshevBasis {
 public:
  ChebyshevBasis(std::size_t n, double length) : n_(n), length_(length) {
    if (n < 3) throw InvalidArgument("ChebyshevBasis: need at least 3 nodes");
    const std::size_t deg = n - 1;
    nodes_.resize(n);
    bary_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      // 0.5 L (1 - cos(k pi / deg)) written with sin^2 for accuracy near 0.
      const double s = std::sin(0.5 * std::numbers::pi * static_cast<double>(k) / deg);
      nodes_[k] = length * s * s;
      bary_[k] = (k % 2 == 0 ? 1.0 : -1.0) * ((k == 0 || k == deg) ? 0.5 : 1.0);
    }
    nodes_[deg] = length;

    d1_ = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      double diag = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        d1_(i, j) = (bary_[j] / bary_[i]) / (nodes_[i] - nodes_[j]);
        diag -= d1_(i, j);
      }
      d1_(i, i) = diag;
    }
    d2_ = d1_ * d1_;

    // Clenshaw-Curtis weights on [-1,1], scaled to [0,L].
    weights_.assign(n, 0.0);
    const double N = static_cast<double>(deg);
    for (std::size_t k = 0; k < n; ++k) {
      const double th = std::numbers::pi * static_cast<double>(k) / N;
      double w;
      if (k == 0 || k == deg) {
        w = (deg % 2 == 0) ? 1.0 / (N * N - 1.0) : 1.0 / (N * N);
      } else {
        double v = 1.0;
        if (deg % 2 == 0) {
          for (std::size_t m = 1; m < deg / 2; ++m)
            v -= 2.0 * std::cos(2.0 * m * th) / (4.0 * m * m - 1.0);
          v -= std::cos(N * th) / (N * N - 1.0);
        } else {
          for (std::size_t m = 1; m <= (deg - 1) / 2; ++m)
            v -= 2.0 * std::cos(2.0 * m * th) / (4.0 * m * m - 1.0);
        }
        w = 2.0 * v / N;
      }
      weights_[k] = 0.5 * length * w;
    }
  }

  /// Shared instance per (n, length); bases are immutable.
  static std::shared_ptr<const ChebyshevBasis> get(std::size_t n, double length) {
    static std::mutex mutex;
    static std::vector<std::shared_ptr<const ChebyshevBasis>> cache;
    std::lock_guard lock(mutex);
    for (const auto& b : cache)
      if (b->size() == n && b->length() == length) return b;
    cache.push_back(std::make_shared<const ChebyshevBasis>(n, length));
    return cache.back();
  }

  std::size_t size() const { return n_; }
  double length() const { return length_; }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& quadrature_weights() const { return weights_; }
  const Eigen::MatrixXd& d1() const { return d1_; }
  const Eigen::MatrixXd& d2() const { return d2_; }

  /// Barycentric interpolation of nodal values at x.
  double interpolate(const std::vector<double>& values, double x) const {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < n_; ++k) {
      const double dx = x - nodes_[k];
      if (dx == 0.0) return values[k];
      const double w = bary_[k] / dx;
      num += w * values[k];
      den += w;
    }
    return num / den;
  }

 private:
  std::size_t n_;
  double length_;
  std::vector<double> nodes_;
  std::vector<double> bary_;
  std::vector<double> weights_;
  Eigen::MatrixXd d1_;
  Eigen::MatrixXd d2_;
};

/// Angular coefficient function c(theta) on [0, mu*pi], stored at
/// Chebyshev-Lobatto nodes.
class ThetaProfile {
 public:
  explicit ThetaProfile(ConeGeometry cone, std::size_t n = kDefaultThetaNodes)
      : cone_(cone), basis_(ChebyshevBasis::get(n, cone.angle())), values_(n, 0.0) {}

  ThetaProfile(ConeGeometry cone, std::vector<double> values)
      : cone_(cone),
        basis_(ChebyshevBasis::get(values.size(), cone.angle())),
        values_(std::move(values)) {}

  template <class F>
  static ThetaProfile from_function(ConeGeometry cone, F&& f,
                                    std::size_t n = kDefaultThetaNodes) {
    ThetaProfile p(cone, n);
    for (std::size_t k = 0; k < n; ++k) p.values_[k] = f(p.basis_->nodes()[k]);
    return p;
  }

  /// Profile with the given samples but the endpoint values forced to zero.
  template <class F>
  static ThetaProfile from_function_zero_ends(ConeGeometry cone, F&& f,
                                              std::size_t n = kDefaultThetaNodes) {
    ThetaProfile p = from_function(cone, std::forward<F>(f), n);
    p.values_.front() = 0.0;
    p.values_.back() = 0.0;
    return p;
  }

  const ConeGeometry& cone() const { return cone_; }
  const ChebyshevBasis& basis() const { return *basis_; }
  std::size_t size() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& nodes() const { return basis_->nodes(); }
  double operator[](std::size_t k) const { return values_[k]; }

  double operator()(double theta) const { return basis_->interpolate(values_, theta); }

  ThetaProfile derivative() const { return apply(basis_->d1()); }
  ThetaProfile second_derivative() const { return apply(basis_->d2()); }

  /// Clenshaw-Curtis integral of this * other over [0, mu*pi].
  double inner(const ThetaProfile& other) const {
    check_compatible(other);
    double s = 0.0;
    const auto& w = basis_->quadrature_weights();
    for (std::size_t k = 0; k < size(); ++k) s += w[k] * values_[k] * other.values_[k];
    return s;
  }

  double sup_norm() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  ThetaProfile& operator+=(const ThetaProfile& o) {
    check_compatible(o);
    for (std::size_t k = 0; k < size(); ++k) values_[k] += o.values_[k];
    return *this;
  }
  ThetaProfile& operator-=(const ThetaProfile& o) {
    check_compatible(o);
    for (std::size_t k = 0; k < size(); ++k) values_[k] -= o.values_[k];
    return *this;
  }
  ThetaProfile& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }
  friend ThetaProfile operator+(ThetaProfile a, const ThetaProfile& b) { return a += b; }
  friend ThetaProfile operator-(ThetaProfile a, const ThetaProfile& b) { return a -= b; }
  friend ThetaProfile operator*(double s, ThetaProfile a) { return a *= s; }
  /// Pointwise product at the collocation nodes.
  friend ThetaProfile operator*(const ThetaProfile& a, const ThetaProfile& b) {
    a.check_compatible(b);
    ThetaProfile out = a;
    for (std::size_t k = 0; k < a.size(); ++k) out.values_[k] *= b.values_[k];
    return out;
  }

  /// CSV `theta,value` at the collocation nodes.
  void write_csv(std::ostream& os) const {
    os << "theta,value\n" << std::setprecision(17);
    for (std::size_t k = 0; k < size(); ++k) os << nodes()[k] << ',' << values_[k] << '\n';
  }

 private:
  ThetaProfile apply(const Eigen::MatrixXd& m) const {
    const Eigen::Map<const Eigen::VectorXd> v(values_.data(), static_cast<Eigen::Index>(size()));
    const Eigen::VectorXd r = m * v;
    return ThetaProfile(cone_, std::vector<double>(r.data(), r.data() + r.size()));
  }
  void check_compatible(const ThetaProfile& o) const {
    if (o.basis_ != basis_) throw InvalidArgument("ThetaProfile: profiles on different grids");
  }

  ConeGeometry cone_;
  std::shared_ptr<const ChebyshevBasis> basis_;
  std::vector<double> values_;
};

/// Orthonormal sine basis sqrt(2/(mu pi)) sin(i theta / mu).
inline double sine_basis(int i, const ConeGeometry& cone, double theta) {
  return std::sqrt(2.0 / cone.angle()) * std::sin(i * theta / cone.mu());
}

}  // namespace corner_ma
