#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rmflow/dual.hpp"

namespace rmflow {

enum class ManifoldKind : std::uint8_t { Euclidean, Sphere, SO3, Product };

/// Geometry descriptor: Euclidean(d), unit sphere S^{n-1} in R^n, SO(3)
/// embedded as row-major 3x3 matrices in R^9, or a product of factors.
/// Immutable; all coordinates are ambient.
class Manifold {
 public:
  static Manifold euclidean(int dim);
  static Manifold sphere(int ambient_dim);
  static Manifold so3();
  static Manifold product(std::vector<Manifold> factors);

  ManifoldKind kind() const { return kind_; }
  int ambient_dim() const { return ambient_; }
  int intrinsic_dim() const { return intrinsic_; }
  const std::vector<Manifold>& factors() const { return factors_; }

  /// Largest tangent-norm (ambient metric) below which exp is invertible.
  double injectivity_radius() const;

  bool operator==(const Manifold& o) const;
  std::string describe() const;

 private:
  Manifold() = default;
  ManifoldKind kind_ = ManifoldKind::Euclidean;
  int ambient_ = 0;
  int intrinsic_ = 0;
  std::vector<Manifold> factors_;
};

enum class GeoResult : std::uint8_t { Ok = 0, CutLocus, Degenerate };

namespace geo {

// Angle below which sphere/SO3 trig ratios switch to 4th-order series.
inline constexpr double kSmallAngle = 1e-6;
// Expressed on cos(theta): theta < 1e-6  <=>  1 - cos(theta) < ~5e-13.
inline constexpr double kSmallOneMinusCos = 5e-13;
// Sphere cut-locus guard: require <x,y> > -1 + kCutLocusTol.
inline constexpr double kCutLocusTol = 1e-6;

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s = T(0.0);
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <class T>
T norm2(std::span<const T> a) {
  return dot(a, a);
}

// ---------------------------------------------------------------------
// Sphere S^{n-1}: exp/log per the closed forms
//   exp_x(v) = cos(|v|) x + sin(|v|) v/|v|
//   log_x(y) = theta/sin(theta) (y - cos(theta) x),  theta = acos(<x,y>)
// with series fallbacks near theta = 0 so dual evaluation stays finite.
// ---------------------------------------------------------------------

template <class T>
void sphere_proj(std::span<const T> x, std::span<const T> v, std::span<T> out) {
  const T c = dot(x, v);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = v[i] - c * x[i];
}

template <class T>
void sphere_exp(std::span<const T> x, std::span<const T> v, std::span<T> out) {
  const T q = norm2(v);  // theta^2
  T ct, sc;              // cos(theta), sin(theta)/theta
  if (value_of(q) < kSmallAngle * kSmallAngle) {
    ct = T(1.0) - q * T(0.5) + q * q * (T(1.0) / T(24.0));
    sc = T(1.0) - q * (T(1.0) / T(6.0)) + q * q * (T(1.0) / T(120.0));
  } else {
    const T th = sqrt(q);
    ct = cos(th);
    sc = sin(th) / th;
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = ct * x[i] + sc * v[i];
}

template <class T>
GeoResult sphere_log(std::span<const T> x, std::span<const T> y,
                     std::span<T> out) {
  const T c = dot(x, y);
  if (value_of(c) <= -1.0 + kCutLocusTol) return GeoResult::CutLocus;
  const T u = T(1.0) - c;  // ~ theta^2/2
  T f;                     // theta / sin(theta)
  if (value_of(u) < kSmallOneMinusCos) {
    f = T(1.0) + u * (T(1.0) / T(3.0)) + u * u * (T(2.0) / T(15.0));
  } else {
    const T cc = min(max(c, T(-1.0)), T(1.0));
    f = acos(cc) / sqrt(T(1.0) - cc * cc);
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f * (y[i] - c * x[i]);
  return GeoResult::Ok;
}

template <class T>
T sphere_distance(std::span<const T> x, std::span<const T> y) {
  const T c = min(max(dot(x, y), T(-1.0)), T(1.0));
  return acos(c);
}

// theta^2 as a smooth function of u = 1 - cos(theta); the series branch
// keeps derivatives finite at coincident points.
template <class T>
T angle_sq_from_one_minus_cos(T u) {
  if (value_of(u) < 16.0 * kSmallOneMinusCos)
    return T(2.0) * u + u * u * (T(1.0) / T(3.0));
  const T c = min(max(T(1.0) - u, T(-1.0)), T(1.0));
  const T th = acos(c);
  return th * th;
}

template <class T>
T sphere_distance_sq(std::span<const T> x, std::span<const T> y) {
  return angle_sq_from_one_minus_cos(T(1.0) - dot(x, y));
}

template <class T>
GeoResult sphere_transport(std::span<const T> x, std::span<const T> y,
                           std::span<const T> v, std::span<T> out) {
  std::vector<T> u(x.size());
  const GeoResult st = sphere_log(x, y, std::span<T>(u));
  if (st != GeoResult::Ok) return st;
  const T q = norm2(std::span<const T>(u));
  if (value_of(q) < kSmallAngle * kSmallAngle) {
    sphere_proj(y, v, out);
    return GeoResult::Ok;
  }
  const T th = sqrt(q);
  const T a = dot(std::span<const T>(u), v) / th;  // component along geodesic
  const T ct = cos(th), st_ = sin(th);
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = v[i] + a * ((ct - T(1.0)) * (u[i] / th) - st_ * x[i]);
  return GeoResult::Ok;
}

// ---------------------------------------------------------------------
// SO(3), row-major 3x3 in R^9. Tangents at R are R*skew. exp/log via the
// Rodrigues formula on the body frame Omega = R^T V; the theta -> pi
// branch of log is rejected as a cut-locus error.
// ---------------------------------------------------------------------

template <class T>
void mat3_mul(std::span<const T> a, std::span<const T> b, std::span<T> out) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      T s = T(0.0);
      for (int k = 0; k < 3; ++k) s += a[3 * i + k] * b[3 * k + j];
      out[3 * i + j] = s;
    }
}

template <class T>
void mat3_transpose_mul(std::span<const T> a, std::span<const T> b,
                        std::span<T> out) {  // a^T * b
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      T s = T(0.0);
      for (int k = 0; k < 3; ++k) s += a[3 * k + i] * b[3 * k + j];
      out[3 * i + j] = s;
    }
}

template <class T>
T mat3_det(std::span<const T> a) {
  return a[0] * (a[4] * a[8] - a[5] * a[7]) -
         a[1] * (a[3] * a[8] - a[5] * a[6]) +
         a[2] * (a[3] * a[7] - a[4] * a[6]);
}

/// Adjugate-based inverse; false when the determinant is numerically zero.
template <class T>
bool mat3_inverse(std::span<const T> a, std::span<T> out) {
  const T det = mat3_det(a);
  if (std::abs(value_of(det)) < 1e-300) return false;
  const T inv = T(1.0) / det;
  out[0] = (a[4] * a[8] - a[5] * a[7]) * inv;
  out[1] = (a[2] * a[7] - a[1] * a[8]) * inv;
  out[2] = (a[1] * a[5] - a[2] * a[4]) * inv;
  out[3] = (a[5] * a[6] - a[3] * a[8]) * inv;
  out[4] = (a[0] * a[8] - a[2] * a[6]) * inv;
  out[5] = (a[2] * a[3] - a[0] * a[5]) * inv;
  out[6] = (a[3] * a[7] - a[4] * a[6]) * inv;
  out[7] = (a[1] * a[6] - a[0] * a[7]) * inv;
  out[8] = (a[0] * a[4] - a[1] * a[3]) * inv;
  return true;
}

template <class T>
void mat3_skew_part(std::span<const T> a, std::span<T> out) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out[3 * i + j] = (a[3 * i + j] - a[3 * j + i]) * T(0.5);
}

// expm of a skew matrix S (Rodrigues), series near zero.
template <class T>
void so3_expm_skew(std::span<const T> s, std::span<T> out) {
  const T a = s[7], b = s[2], c = s[3];  // vee: (S21, S02, S10)
  const T q = a * a + b * b + c * c;     // theta^2
  T A, B;                                // sin(t)/t, (1-cos(t))/t^2
  if (value_of(q) < kSmallAngle * kSmallAngle) {
    A = T(1.0) - q * (T(1.0) / T(6.0)) + q * q * (T(1.0) / T(120.0));
    B = T(0.5) - q * (T(1.0) / T(24.0)) + q * q * (T(1.0) / T(720.0));
  } else {
    const T th = sqrt(q);
    A = sin(th) / th;
    B = (T(1.0) - cos(th)) / q;
  }
  std::vector<T> s2(9);
  mat3_mul(s, s, std::span<T>(s2));
  for (int i = 0; i < 9; ++i) out[i] = A * s[i] + B * s2[i];
  out[0] += T(1.0);
  out[4] += T(1.0);
  out[8] += T(1.0);
}

// logm of a rotation matrix Q; fails near trace(Q) = -1 (angle pi).
template <class T>
GeoResult so3_logm(std::span<const T> qm, std::span<T> out) {
  const T c = (qm[0] + qm[4] + qm[8] - T(1.0)) * T(0.5);
  const double cv = value_of(c);
  if (cv <= std::cos(3.14159265358979323846 - kCutLocusTol) )
    return GeoResult::CutLocus;
  const T u = T(1.0) - c;
  T f;  // theta / (2 sin(theta))
  if (value_of(u) < kSmallOneMinusCos) {
    f = (T(1.0) + u * (T(1.0) / T(3.0)) + u * u * (T(2.0) / T(15.0))) * T(0.5);
  } else {
    const T cc = min(max(c, T(-1.0)), T(1.0));
    f = acos(cc) / (T(2.0) * sqrt(T(1.0) - cc * cc));
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out[3 * i + j] = f * (qm[3 * i + j] - qm[3 * j + i]);
  return GeoResult::Ok;
}

template <class T>
void so3_proj(std::span<const T> x, std::span<const T> v, std::span<T> out) {
  std::vector<T> a(9), s(9);
  mat3_transpose_mul(x, v, std::span<T>(a));
  mat3_skew_part(std::span<const T>(a), std::span<T>(s));
  mat3_mul(x, std::span<const T>(s), out);
}

template <class T>
void so3_exp(std::span<const T> x, std::span<const T> v, std::span<T> out) {
  std::vector<T> om(9), sk(9), e(9);
  mat3_transpose_mul(x, v, std::span<T>(om));
  mat3_skew_part(std::span<const T>(om), std::span<T>(sk));
  so3_expm_skew(std::span<const T>(sk), std::span<T>(e));
  mat3_mul(x, std::span<const T>(e), out);
}

template <class T>
GeoResult so3_log(std::span<const T> x, std::span<const T> y, std::span<T> out) {
  std::vector<T> qm(9), om(9);
  mat3_transpose_mul(x, y, std::span<T>(qm));
  const GeoResult st = so3_logm(std::span<const T>(qm), std::span<T>(om));
  if (st != GeoResult::Ok) return st;
  mat3_mul(x, std::span<const T>(om), out);
  return GeoResult::Ok;
}

template <class T>
T so3_distance(std::span<const T> x, std::span<const T> y) {
  std::vector<T> qm(9);
  mat3_transpose_mul(x, y, std::span<T>(qm));
  const T c =
      min(max((qm[0] + qm[4] + qm[8] - T(1.0)) * T(0.5), T(-1.0)), T(1.0));
  // Frobenius metric on the embedding: |log| = sqrt(2) * angle.
  return sqrt(T(2.0)) * acos(c);
}

template <class T>
T so3_distance_sq(std::span<const T> x, std::span<const T> y) {
  std::vector<T> qm(9);
  mat3_transpose_mul(x, y, std::span<T>(qm));
  const T u = T(1.0) - (qm[0] + qm[4] + qm[8] - T(1.0)) * T(0.5);
  return T(2.0) * angle_sq_from_one_minus_cos(u);
}

// Bi-invariant-metric transport along the geodesic R -> R expm(Om):
// body-frame tangent A conjugates by the half-step rotation.
template <class T>
GeoResult so3_transport(std::span<const T> x, std::span<const T> y,
                        std::span<const T> v, std::span<T> out) {
  std::vector<T> qm(9), om(9), eh(9), a(9), t1(9), t2(9);
  mat3_transpose_mul(x, y, std::span<T>(qm));
  const GeoResult st = so3_logm(std::span<const T>(qm), std::span<T>(om));
  if (st != GeoResult::Ok) return st;
  for (auto& e : om) e = e * T(0.5);
  so3_expm_skew(std::span<const T>(om), std::span<T>(eh));
  mat3_transpose_mul(x, v, std::span<T>(a));
  mat3_mul(std::span<const T>(eh), std::span<const T>(a), std::span<T>(t1));
  mat3_mul(std::span<const T>(t1), std::span<const T>(eh), std::span<T>(t2));
  mat3_mul(x, std::span<const T>(t2), out);
  return GeoResult::Ok;
}

// ---------------------------------------------------------------------
// Dispatch over manifold kinds. Product manifolds apply factor kernels on
// coordinate slices; the product metric is the ambient dot product, so
// norms and distances compose as root-sum-squares automatically.
// ---------------------------------------------------------------------

template <class T>
void proj(const Manifold& m, std::span<const T> x, std::span<const T> v,
          std::span<T> out) {
  switch (m.kind()) {
    case ManifoldKind::Euclidean:
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i];
      return;
    case ManifoldKind::Sphere:
      sphere_proj(x, v, out);
      return;
    case ManifoldKind::SO3:
      so3_proj(x, v, out);
      return;
    case ManifoldKind::Product: {
      std::size_t off = 0;
      for (const Manifold& f : m.factors()) {
        const std::size_t d = static_cast<std::size_t>(f.ambient_dim());
        proj(f, x.subspan(off, d), v.subspan(off, d), out.subspan(off, d));
        off += d;
      }
      return;
    }
  }
}

template <class T>
void exp_map(const Manifold& m, std::span<const T> x, std::span<const T> v,
             std::span<T> out) {
  switch (m.kind()) {
    case ManifoldKind::Euclidean:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + v[i];
      return;
    case ManifoldKind::Sphere:
      sphere_exp(x, v, out);
      return;
    case ManifoldKind::SO3:
      so3_exp(x, v, out);
      return;
    case ManifoldKind::Product: {
      std::size_t off = 0;
      for (const Manifold& f : m.factors()) {
        const std::size_t d = static_cast<std::size_t>(f.ambient_dim());
        exp_map(f, x.subspan(off, d), v.subspan(off, d), out.subspan(off, d));
        off += d;
      }
      return;
    }
  }
}

template <class T>
GeoResult log_map(const Manifold& m, std::span<const T> x, std::span<const T> y,
                  std::span<T> out) {
  switch (m.kind()) {
    case ManifoldKind::Euclidean:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = y[i] - x[i];
      return GeoResult::Ok;
    case ManifoldKind::Sphere:
      return sphere_log(x, y, out);
    case ManifoldKind::SO3:
      return so3_log(x, y, out);
    case ManifoldKind::Product: {
      std::size_t off = 0;
      for (const Manifold& f : m.factors()) {
        const std::size_t d = static_cast<std::size_t>(f.ambient_dim());
        const GeoResult st =
            log_map(f, x.subspan(off, d), y.subspan(off, d), out.subspan(off, d));
        if (st != GeoResult::Ok) return st;
        off += d;
      }
      return GeoResult::Ok;
    }
  }
  return GeoResult::Ok;
}

template <class T>
T distance(const Manifold& m, std::span<const T> x, std::span<const T> y) {
  switch (m.kind()) {
    case ManifoldKind::Euclidean: {
      T s = T(0.0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const T d = y[i] - x[i];
        s += d * d;
      }
      return sqrt(s);
    }
    case ManifoldKind::Sphere:
      return sphere_distance(x, y);
    case ManifoldKind::SO3:
      return so3_distance(x, y);
    case ManifoldKind::Product: {
      T s = T(0.0);
      std::size_t off = 0;
      for (const Manifold& f : m.factors()) {
        const std::size_t d = static_cast<std::size_t>(f.ambient_dim());
        const T di = distance(f, x.subspan(off, d), y.subspan(off, d));
        s += di * di;
        off += d;
      }
      return sqrt(s);
    }
  }
  return T(0.0);
}

template <class T>
T distance_sq(const Manifold& m, std::span<const T> x, std::span<const T> y) {
  switch (m.kind()) {
    case ManifoldKind::Euclidean: {
      T s = T(0.0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const T d = y[i] - x[i];
        s += d * d;
      }
      return s;
    }
    case ManifoldKind::Sphere:
      return sphere_distance_sq(x, y);
    case ManifoldKind::SO3:
      return so3_distance_sq(x, y);
    case ManifoldKind::Product: {
      T s = T(0.0);
      std::size_t off = 0;
      for (const Manifold& f : m.factors()) {
        const std::size_t d = static_cast<std::size_t>(f.ambient_dim());
        s += distance_sq(f, x.subspan(off, d), y.subspan(off, d));
        off += d;
      }
      return s;
    }
  }
  return T(0.0);
}

template <class T>
GeoResult transport(const Manifold& m, std::span<const T> x,
                    std::span<const T> y, std::span<const T> v,
                    std::span<T> out) {
  switch (m.kind()) {
    case ManifoldKind::Euclidean:
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i];
      return GeoResult::Ok;
    case ManifoldKind::Sphere:
      return sphere_transport(x, y, v, out);
    case ManifoldKind::SO3:
      return so3_transport(x, y, v, out);
    case ManifoldKind::Product: {
      std::size_t off = 0;
      for (const Manifold& f : m.factors()) {
        const std::size_t d = static_cast<std::size_t>(f.ambient_dim());
        const GeoResult st = transport(f, x.subspan(off, d), y.subspan(off, d),
                                       v.subspan(off, d), out.subspan(off, d));
        if (st != GeoResult::Ok) return st;
        off += d;
      }
      return GeoResult::Ok;
    }
  }
  return GeoResult::Ok;
}

/// x_t = exp_{x0}(t log_{x0}(x1)).
template <class T>
GeoResult interpolate(const Manifold& m, std::span<const T> x0,
                      std::span<const T> x1, T t, std::span<T> out) {
  std::vector<T> lg(x0.size());
  const GeoResult st = log_map(m, x0, x1, std::span<T>(lg));
  if (st != GeoResult::Ok) return st;
  for (auto& e : lg) e = e * t;
  exp_map(m, x0, std::span<const T>(lg), out);
  return GeoResult::Ok;
}

}  // namespace geo
}  // namespace rmflow
