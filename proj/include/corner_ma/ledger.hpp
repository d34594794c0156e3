#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "corner_ma/cone.hpp"
#include "corner_ma/error.hpp"

namespace corner_ma {

/// Exponent k/mu - 2m on the integer lattice generated by 1/mu and 2.
struct Lattice {
  long k = 0;
  long m = 0;
  friend bool operator==(const Lattice&, const Lattice&) = default;
};

/// Lattice of value_a + value_b - 2, the order of a quadratic interaction.
inline Lattice combine(Lattice a, Lattice b) { return {a.k + b.k, a.m + b.m + 1}; }

/// Float tolerance on exponent comparisons when mu is not rational.
inline constexpr double kExponentTolerance = 1e-9;

inline double lattice_value(const ConeGeometry& cone, Lattice l) {
  if (const auto& r = cone.mu_rational()) {
    // (k q - 2 m p) / p
    return static_cast<double>(l.k * r->q - 2 * l.m * r->p) / static_cast<double>(r->p);
  }
  return static_cast<double>(l.k) / cone.mu() - 2.0 * static_cast<double>(l.m);
}

/// Decides value(a) == value(b): exactly for rational mu, to 1e-9 otherwise.
inline bool same_exponent(const ConeGeometry& cone, Lattice a, Lattice b) {
  if (const auto& r = cone.mu_rational())
    return a.k * r->q - 2 * a.m * r->p == b.k * r->q - 2 * b.m * r->p;
  return std::abs(lattice_value(cone, a) - lattice_value(cone, b)) < kExponentTolerance;
}

struct I2Witness {
  int i = 0;
  int j = 0;
  friend bool operator==(const I2Witness&, const I2Witness&) = default;
};

struct ExponentEntry {
  Lattice lattice;
  double value = 0.0;
  std::optional<int> in_i1;  // value = i/mu
  std::vector<I2Witness> in_i2;
  int position = 0;  // 1-based index in the arrangement
  int max_log_power = 0;
  bool resonant = false;
  /// The i = 1 coefficient vanishes for wide cones.
  bool coefficient_forced_zero = false;
};

/// Membership of value in I1 = {i/mu : i >= 1}.
inline bool is_resonant(const ExponentEntry& entry, const ConeGeometry& cone) {
  if (const auto& r = cone.mu_rational()) {
    const long num = entry.lattice.k * r->q - 2 * entry.lattice.m * r->p;
    return num > 0 && num % r->q == 0;
  }
  const double i = std::round(entry.value * cone.mu());
  return i >= 1.0 && std::abs(entry.value - i / cone.mu()) < kExponentTolerance;
}

class ExponentLedger {
 public:
  ExponentLedger(ConeGeometry cone, double cutoff, std::vector<ExponentEntry> entries)
      : cone_(cone), cutoff_(cutoff), entries_(std::move(entries)) {}

  const ConeGeometry& cone() const { return cone_; }
  double cutoff() const { return cutoff_; }
  const std::vector<ExponentEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const ExponentEntry& operator[](std::size_t k) const { return entries_[k]; }

  /// Entry whose value equals `value` within the float tolerance.
  const ExponentEntry* find(double value) const {
    for (const auto& e : entries_)
      if (std::abs(e.value - value) < kExponentTolerance) return &e;
    return nullptr;
  }
  const ExponentEntry* find(Lattice l) const {
    for (const auto& e : entries_)
      if (same_exponent(cone_, e.lattice, l)) return &e;
    return nullptr;
  }
  /// First entry strictly above `value`.
  const ExponentEntry* next_after(double value) const {
    for (const auto& e : entries_)
      if (e.value > value + kExponentTolerance) return &e;
    return nullptr;
  }

  void write_table(std::ostream& os) const;
  void write_csv(std::ostream& os) const;

 private:
  ConeGeometry cone_;
  double cutoff_;
  std::vector<ExponentEntry> entries_;
};

/// Enumerates I1 and I2 up to the cutoff, merges coincident values and
/// orders them increasingly.
inline ExponentLedger build_ledger(const ConeGeometry& cone, double cutoff) {
  const double lead = cone.leading_exponent();
  if (!(cutoff > lead + kExponentTolerance))
    throw InvalidArgument("build_ledger: empty ledger (cutoff must exceed 1/mu)");
  const bool sharp = cone.regime() == Regime::Sharp;
  const double slack = kExponentTolerance;

  struct Raw {
    Lattice lattice;
    double value;
    std::optional<int> i1;
    std::optional<I2Witness> i2;
  };
  std::vector<Raw> raw;
  for (int i = 1;; ++i) {
    const Lattice l{i, 0};
    const double v = lattice_value(cone, l);
    if (v > cutoff + slack) break;
    raw.push_back({l, v, i, std::nullopt});
  }
  // Sharp: (1/mu - 2) j + i/mu, i,j >= 1.  Wide: 2(1/mu - 1) j + i/mu, i >= 2, j >= 1.
  const int i_min = sharp ? 1 : 2;
  for (int j = 1;; ++j) {
    bool any = false;
    for (int i = i_min;; ++i) {
      const Lattice l = sharp ? Lattice{i + j, j} : Lattice{i + 2 * j, j};
      const double v = lattice_value(cone, l);
      if (v > cutoff + slack) break;
      raw.push_back({l, v, std::nullopt, I2Witness{i, j}});
      any = true;
    }
    if (!any) break;
  }
  std::stable_sort(raw.begin(), raw.end(),
                   [](const Raw& a, const Raw& b) { return a.value < b.value; });

  std::vector<ExponentEntry> entries;
  for (const Raw& r : raw) {
    if (!entries.empty() && same_exponent(cone, entries.back().lattice, r.lattice)) {
      auto& e = entries.back();
      if (r.i1) {
        e.in_i1 = r.i1;
        e.lattice = r.lattice;
        e.value = r.value;
      }
      if (r.i2) e.in_i2.push_back(*r.i2);
      continue;
    }
    ExponentEntry e;
    e.lattice = r.lattice;
    e.value = r.value;
    e.in_i1 = r.i1;
    if (r.i2) e.in_i2.push_back(*r.i2);
    entries.push_back(std::move(e));
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& e = entries[k];
    e.position = static_cast<int>(k) + 1;
    e.max_log_power = std::max(0, sharp ? e.position - 1 : e.position - 2);
    e.resonant = is_resonant(e, cone);
    e.coefficient_forced_zero = !sharp && e.in_i1 == 1;
  }
  return ExponentLedger(cone, cutoff, std::move(entries));
}

namespace detail {

inline std::string witness_list(const ExponentEntry& e) {
  std::ostringstream os;
  for (std::size_t k = 0; k < e.in_i2.size(); ++k) {
    if (k) os << ' ';
    os << '(' << e.in_i2[k].i << ';' << e.in_i2[k].j << ')';
  }
  return os.str();
}

}  // namespace detail

inline void ExponentLedger::write_table(std::ostream& os) const {
  os << "mu = " << std::setprecision(17) << cone_.mu() << " (" << to_string(cone_.regime())
     << "), cutoff = " << cutoff_ << "\n";
  os << std::left << std::setw(5) << "pos" << std::setw(22) << "value" << std::setw(12)
     << "lattice" << std::setw(6) << "I1" << std::setw(28) << "I2 witnesses (i;j)" << std::setw(10)
     << "resonant" << "max_log_power\n";
  for (const auto& e : entries_) {
    std::ostringstream lat;
    lat << '(' << e.lattice.k << ',' << e.lattice.m << ')';
    os << std::setw(5) << e.position << std::setw(22) << std::setprecision(15) << e.value
       << std::setw(12) << lat.str() << std::setw(6)
       << (e.in_i1 ? std::to_string(*e.in_i1) : std::string("-")) << std::setw(28)
       << (e.in_i2.empty() ? std::string("-") : detail::witness_list(e)) << std::setw(10)
       << (e.resonant ? "yes" : "no") << e.max_log_power
       << (e.coefficient_forced_zero ? "  [coefficient forced zero]" : "") << "\n";
  }
}

inline void ExponentLedger::write_csv(std::ostream& os) const {
  os << "position,value,lattice_k,lattice_m,i1,i2_witnesses,resonant,max_log_power\n"
     << std::setprecision(17);
  for (const auto& e : entries_) {
    os << e.position << ',' << e.value << ',' << e.lattice.k << ',' << e.lattice.m << ','
       << (e.in_i1 ? std::to_string(*e.in_i1) : std::string()) << ',' << detail::witness_list(e)
       << ',' << (e.resonant ? 1 : 0) << ',' << e.max_log_power << '\n';
  }
}

struct HolderLabel {
  int k = 0;
  double alpha = 0.0;
  /// 1/mu is an integer; the label is degenerate.
  bool integer_warning = false;
};

/// Optimal regularity class C^{k,alpha} at the vertex of a sharp cone.
inline HolderLabel holder_label(const ConeGeometry& cone) {
  if (cone.regime() != Regime::Sharp)
    throw InvalidArgument("holder_label: not applicable to cones with mu >= 1/2");
  HolderLabel h;
  if (const auto& r = cone.mu_rational()) {
    h.k = static_cast<int>(r->q / r->p);
    h.alpha = static_cast<double>(r->q % r->p) / static_cast<double>(r->p);
  } else {
    const double inv = 1.0 / cone.mu();
    h.k = static_cast<int>(std::floor(inv));
    h.alpha = inv - h.k;
    if (h.alpha > 1.0 - 1e-12) {
      h.k += 1;
      h.alpha = 0.0;
    } else if (h.alpha < 1e-12) {
      h.alpha = 0.0;
    }
  }
  h.integer_warning = h.alpha == 0.0;
  return h;
}

}  // namespace corner_ma
