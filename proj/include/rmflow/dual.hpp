#pragma once

#include <cmath>

namespace rmflow {

/// Forward-mode scalar: value plus one directional derivative.
/// Arithmetic follows (a + eps a')(b + eps b') = ab + eps(ab' + a'b).
struct Dual {
  double v = 0.0;
  double d = 0.0;

  Dual() = default;
  Dual(double value) : v(value), d(0.0) {}  // NOLINT: implicit by design
  Dual(double value, double deriv) : v(value), d(deriv) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) {
  return {a.v * b.v, a.v * b.d + a.d * b.v};
}
inline Dual operator/(Dual a, Dual b) {
  const double q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}

inline Dual& operator+=(Dual& a, Dual b) { a = a + b; return a; }
inline Dual& operator-=(Dual& a, Dual b) { a = a - b; return a; }
inline Dual& operator*=(Dual& a, Dual b) { a = a * b; return a; }
inline Dual& operator/=(Dual& a, Dual b) { a = a / b; return a; }

inline bool operator<(Dual a, Dual b) { return a.v < b.v; }
inline bool operator>(Dual a, Dual b) { return a.v > b.v; }
inline bool operator<=(Dual a, Dual b) { return a.v <= b.v; }
inline bool operator>=(Dual a, Dual b) { return a.v >= b.v; }
inline bool operator==(Dual a, Dual b) { return a.v == b.v; }

inline Dual sqrt(Dual a) {
  const double s = std::sqrt(a.v);
  // Subgradient 0 at the kink; hit only on measure-zero inputs.
  return {s, s > 0.0 ? a.d / (2.0 * s) : 0.0};
}
inline Dual sin(Dual a) { return {std::sin(a.v), std::cos(a.v) * a.d}; }
inline Dual cos(Dual a) { return {std::cos(a.v), -std::sin(a.v) * a.d}; }
inline Dual tan(Dual a) {
  const double c = std::cos(a.v);
  return {std::tan(a.v), a.d / (c * c)};
}
inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, e * a.d};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual tanh(Dual a) {
  const double t = std::tanh(a.v);
  return {t, (1.0 - t * t) * a.d};
}
inline Dual atan2(Dual y, Dual x) {
  const double den = x.v * x.v + y.v * y.v;
  return {std::atan2(y.v, x.v), (x.v * y.d - y.v * x.d) / den};
}
inline Dual acos(Dual a) {
  const double s = std::sqrt(1.0 - a.v * a.v);
  return {std::acos(a.v), s > 0.0 ? -a.d / s : 0.0};
}
inline Dual abs(Dual a) {
  if (a.v > 0.0) return a;
  if (a.v < 0.0) return -a;
  return {0.0, 0.0};
}
inline Dual min(Dual a, Dual b) {
  if (a.v < b.v) return a;
  if (b.v < a.v) return b;
  return {a.v, 0.0};
}
inline Dual max(Dual a, Dual b) {
  if (a.v > b.v) return a;
  if (b.v > a.v) return b;
  return {a.v, 0.0};
}

/// Generic accessors so numeric code can be written once for double/Dual.
inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }

// Exact double overloads so unqualified calls in templated code pick the
// plain math functions instead of converting through Dual.
inline double sqrt(double x) { return std::sqrt(x); }
inline double sin(double x) { return std::sin(x); }
inline double cos(double x) { return std::cos(x); }
inline double tan(double x) { return std::tan(x); }
inline double exp(double x) { return std::exp(x); }
inline double log(double x) { return std::log(x); }
inline double tanh(double x) { return std::tanh(x); }
inline double atan2(double y, double x) { return std::atan2(y, x); }
inline double acos(double x) { return std::acos(x); }
inline double abs(double x) { return std::abs(x); }
inline double min(double a, double b) { return a < b ? a : b; }
inline double max(double a, double b) { return a > b ? a : b; }

}  // namespace rmflow
