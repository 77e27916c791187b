#include "rmflow/geometry.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace rmflow {

Manifold Manifold::euclidean(int dim) {
  if (dim < 1) throw std::invalid_argument("euclidean: dim must be >= 1");
  Manifold m;
  m.kind_ = ManifoldKind::Euclidean;
  m.ambient_ = dim;
  m.intrinsic_ = dim;
  return m;
}

Manifold Manifold::sphere(int ambient_dim) {
  if (ambient_dim < 2)
    throw std::invalid_argument("sphere: ambient_dim must be >= 2");
  Manifold m;
  m.kind_ = ManifoldKind::Sphere;
  m.ambient_ = ambient_dim;
  m.intrinsic_ = ambient_dim - 1;
  return m;
}

Manifold Manifold::so3() {
  Manifold m;
  m.kind_ = ManifoldKind::SO3;
  m.ambient_ = 9;
  m.intrinsic_ = 3;
  return m;
}

Manifold Manifold::product(std::vector<Manifold> factors) {
  if (factors.empty())
    throw std::invalid_argument("product: needs at least one factor");
  Manifold m;
  m.kind_ = ManifoldKind::Product;
  for (const Manifold& f : factors) {
    m.ambient_ += f.ambient_dim();
    m.intrinsic_ += f.intrinsic_dim();
  }
  m.factors_ = std::move(factors);
  return m;
}

double Manifold::injectivity_radius() const {
  constexpr double kPi = 3.14159265358979323846;
  switch (kind_) {
    case ManifoldKind::Euclidean:
      return std::numeric_limits<double>::infinity();
    case ManifoldKind::Sphere:
      return kPi;
    case ManifoldKind::SO3:
      return std::sqrt(2.0) * kPi;  // Frobenius norm of a pi-angle tangent
    case ManifoldKind::Product: {
      double r = std::numeric_limits<double>::infinity();
      for (const Manifold& f : factors_) r = std::min(r, f.injectivity_radius());
      return r;
    }
  }
  return 0.0;
}

bool Manifold::operator==(const Manifold& o) const {
  if (kind_ != o.kind_ || ambient_ != o.ambient_) return false;
  if (kind_ == ManifoldKind::Product) {
    if (factors_.size() != o.factors_.size()) return false;
    for (std::size_t i = 0; i < factors_.size(); ++i)
      if (!(factors_[i] == o.factors_[i])) return false;
  }
  return true;
}

std::string Manifold::describe() const {
  switch (kind_) {
    case ManifoldKind::Euclidean:
      return "Euclidean(" + std::to_string(ambient_) + ")";
    case ManifoldKind::Sphere:
      return "Sphere(" + std::to_string(ambient_) + ")";
    case ManifoldKind::SO3:
      return "SO3";
    case ManifoldKind::Product: {
      std::string s = "Product(";
      for (std::size_t i = 0; i < factors_.size(); ++i) {
        if (i) s += ",";
        s += factors_[i].describe();
      }
      return s + ")";
    }
  }
  return "?";
}

namespace {

void check_dim(const Manifold& m, std::size_t n, const char* what) {
  if (n != static_cast<std::size_t>(m.ambient_dim()))
    throw std::invalid_argument(std::string(what) + ": expected dimension " +
                                std::to_string(m.ambient_dim()) + ", got " +
                                std::to_string(n));
}

[[noreturn]] void throw_geo(GeoResult st, const Manifold& m, const char* op) {
  if (st == GeoResult::CutLocus)
    throw std::domain_error(std::string(op) + " on " + m.describe() +
                            ": points at or near the cut locus");
  throw std::domain_error(std::string(op) + " on " + m.describe() +
                          ": degenerate input");
}

bool so3_valid_point(std::span<const double> x, double tol) {
  double g[9];
  geo::mat3_transpose_mul(x, x, std::span<double>(g));  // R^T R
  double det = x[0] * (x[4] * x[8] - x[5] * x[7]) -
               x[1] * (x[3] * x[8] - x[5] * x[6]) +
               x[2] * (x[3] * x[7] - x[4] * x[6]);
  if (std::abs(det - 1.0) > tol) return false;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (std::abs(g[3 * i + j] - (i == j ? 1.0 : 0.0)) > tol) return false;
  return true;
}

}  // namespace

bool is_valid_point(const Manifold& m, std::span<const double> x, double tol) {
  if (x.size() != static_cast<std::size_t>(m.ambient_dim())) return false;
  switch (m.kind()) {
    case ManifoldKind::Euclidean:
      return true;
    case ManifoldKind::Sphere:
      return std::abs(std::sqrt(geo::norm2(x)) - 1.0) <= tol;
    case ManifoldKind::SO3:
      return so3_valid_point(x, tol);
    case ManifoldKind::Product: {
      std::size_t off = 0;
      for (const Manifold& f : m.factors()) {
        const std::size_t d = static_cast<std::size_t>(f.ambient_dim());
        if (!is_valid_point(f, x.subspan(off, d), tol)) return false;
        off += d;
      }
      return true;
    }
  }
  return false;
}

bool is_valid_tangent(const Manifold& m, std::span<const double> x,
                      std::span<const double> v, double tol) {
  if (v.size() != static_cast<std::size_t>(m.ambient_dim())) return false;
  switch (m.kind()) {
    case ManifoldKind::Euclidean:
      return true;
    case ManifoldKind::Sphere:
      return std::abs(geo::dot(x, v)) <= tol;
    case ManifoldKind::SO3: {
      double a[9];
      geo::mat3_transpose_mul(x, v, std::span<double>(a));
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          if (std::abs(a[3 * i + j] + a[3 * j + i]) > tol) return false;
      return true;
    }
    case ManifoldKind::Product: {
      std::size_t off = 0;
      for (const Manifold& f : m.factors()) {
        const std::size_t d = static_cast<std::size_t>(f.ambient_dim());
        if (!is_valid_tangent(f, x.subspan(off, d), v.subspan(off, d), tol))
          return false;
        off += d;
      }
      return true;
    }
  }
  return false;
}

Tangent proj_tangent(const Manifold& m, const Point& x,
                     std::span<const double> v_ambient) {
  check_dim(m, x.coords.size(), "proj_tangent point");
  check_dim(m, v_ambient.size(), "proj_tangent vector");
  Tangent t{x, std::vector<double>(v_ambient.size())};
  geo::proj<double>(m, x.coords, v_ambient, t.coords);
  return t;
}

Tangent covariant_deriv_projection(const Manifold& m, const Point& x,
                                   std::span<const double> dv_ambient) {
  return proj_tangent(m, x, dv_ambient);
}

Point exp_map(const Manifold& m, const Point& x, const Tangent& v) {
  check_dim(m, x.coords.size(), "exp point");
  check_dim(m, v.coords.size(), "exp tangent");
  Point y{m, std::vector<double>(x.coords.size())};
  geo::exp_map<double>(m, x.coords, v.coords, y.coords);
  return y;
}

Tangent log_map(const Manifold& m, const Point& x, const Point& y) {
  check_dim(m, x.coords.size(), "log point");
  check_dim(m, y.coords.size(), "log target");
  Tangent t{x, std::vector<double>(x.coords.size())};
  const GeoResult st = geo::log_map<double>(m, x.coords, y.coords, t.coords);
  if (st != GeoResult::Ok) throw_geo(st, m, "log");
  return t;
}

double geodesic_distance(const Manifold& m, const Point& x, const Point& y) {
  check_dim(m, x.coords.size(), "distance point");
  check_dim(m, y.coords.size(), "distance target");
  return geo::distance<double>(m, x.coords, y.coords);
}

Point geodesic_interpolate(const Manifold& m, const Point& x0, const Point& x1,
                           double t) {
  Point out{m, std::vector<double>(x0.coords.size())};
  const GeoResult st =
      geo::interpolate<double>(m, x0.coords, x1.coords, t, out.coords);
  if (st != GeoResult::Ok) throw_geo(st, m, "geodesic_interpolate");
  return out;
}

Tangent parallel_transport(const Manifold& m, const Point& x, const Point& y,
                           const Tangent& v) {
  Tangent out{y, std::vector<double>(v.coords.size())};
  const GeoResult st =
      geo::transport<double>(m, x.coords, y.coords, v.coords, out.coords);
  if (st != GeoResult::Ok) throw_geo(st, m, "parallel_transport");
  return out;
}

GeoResult dlog_second_arg_raw(const Manifold& m, std::span<const double> x,
                              std::span<const double> y,
                              std::span<const double> w,
                              std::span<double> out) {
  const std::size_t n = x.size();
  std::vector<Dual> xd(n), yd(n), ld(n);
  for (std::size_t i = 0; i < n; ++i) {
    xd[i] = Dual(x[i]);
    yd[i] = Dual(y[i], w[i]);
  }
  const GeoResult st = geo::log_map<Dual>(m, xd, yd, ld);
  if (st != GeoResult::Ok) return st;
  std::vector<double> deriv(n);
  for (std::size_t i = 0; i < n; ++i) deriv[i] = ld[i].d;
  geo::proj<double>(m, x, deriv, out);
  return GeoResult::Ok;
}

GeoResult dlog_first_arg_raw(const Manifold& m, std::span<const double> x,
                             std::span<const double> y,
                             std::span<const double> v, std::span<double> out) {
  const std::size_t n = x.size();
  std::vector<Dual> xd(n), yd(n), ld(n);
  for (std::size_t i = 0; i < n; ++i) {
    xd[i] = Dual(x[i], v[i]);  // d/de exp_x(e v) at 0 is v
    yd[i] = Dual(y[i]);
  }
  const GeoResult st = geo::log_map<Dual>(m, xd, yd, ld);
  if (st != GeoResult::Ok) return st;
  std::vector<double> deriv(n);
  for (std::size_t i = 0; i < n; ++i) deriv[i] = ld[i].d;
  geo::proj<double>(m, x, deriv, out);
  return GeoResult::Ok;
}

Tangent dlog_second_arg(const Manifold& m, const Point& x, const Point& y,
                        const Tangent& w) {
  Tangent out{x, std::vector<double>(x.coords.size())};
  const GeoResult st =
      dlog_second_arg_raw(m, x.coords, y.coords, w.coords, out.coords);
  if (st != GeoResult::Ok) throw_geo(st, m, "dlog_second_arg");
  return out;
}

Tangent dlog_first_arg(const Manifold& m, const Point& x, const Point& y,
                       const Tangent& v) {
  Tangent out{x, std::vector<double>(x.coords.size())};
  const GeoResult st =
      dlog_first_arg_raw(m, x.coords, y.coords, v.coords, out.coords);
  if (st != GeoResult::Ok) throw_geo(st, m, "dlog_first_arg");
  return out;
}

namespace {

// Gram-Schmidt on the columns of a 3x3 with positive-diagonal convention,
// then a determinant sign fix: Haar on SO(3).
void haar_so3(Rng& rng, std::span<double> out) {
  double col[3][3];
  for (auto& c : col)
    for (auto& e : c) e = rng.normal();
  for (int j = 0; j < 3; ++j) {
    for (int k = 0; k < j; ++k) {
      double d = 0;
      for (int i = 0; i < 3; ++i) d += col[j][i] * col[k][i];
      for (int i = 0; i < 3; ++i) col[j][i] -= d * col[k][i];
    }
    double n = 0;
    for (int i = 0; i < 3; ++i) n += col[j][i] * col[j][i];
    n = std::sqrt(n);
    for (int i = 0; i < 3; ++i) col[j][i] /= n;
  }
  double det = col[0][0] * (col[1][1] * col[2][2] - col[1][2] * col[2][1]) -
               col[1][0] * (col[0][1] * col[2][2] - col[0][2] * col[2][1]) +
               col[2][0] * (col[0][1] * col[1][2] - col[0][2] * col[1][1]);
  if (det < 0)
    for (int i = 0; i < 3; ++i) col[2][i] = -col[2][i];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[3 * i + j] = col[j][i];
}

}  // namespace

void random_point(const Manifold& m, Rng& rng, std::span<double> out) {
  switch (m.kind()) {
    case ManifoldKind::Euclidean:
      rng.fill_normal(out);
      return;
    case ManifoldKind::Sphere: {
      double n2 = 0.0;
      do {
        rng.fill_normal(out);
        n2 = geo::norm2(std::span<const double>(out));
      } while (n2 < 1e-24);
      const double inv = 1.0 / std::sqrt(n2);
      for (auto& e : out) e *= inv;
      return;
    }
    case ManifoldKind::SO3:
      haar_so3(rng, out);
      return;
    case ManifoldKind::Product: {
      std::size_t off = 0;
      for (const Manifold& f : m.factors()) {
        const std::size_t d = static_cast<std::size_t>(f.ambient_dim());
        random_point(f, rng, out.subspan(off, d));
        off += d;
      }
      return;
    }
  }
}

Point random_point(const Manifold& m, Rng& rng) {
  Point p{m, std::vector<double>(static_cast<std::size_t>(m.ambient_dim()))};
  random_point(m, rng, p.coords);
  return p;
}

Tangent random_tangent(const Manifold& m, const Point& x, Rng& rng) {
  std::vector<double> v(x.coords.size());
  rng.fill_normal(v);
  return proj_tangent(m, x, v);
}

}  // namespace rmflow
