#pragma once

#include <span>
#include <vector>

#include "rmflow/geometry_kernels.hpp"
#include "rmflow/rng.hpp"

namespace rmflow {

/// A manifold point in ambient coordinates.
struct Point {
  Manifold manifold;
  std::vector<double> coords;
};

/// A tangent vector in ambient coordinates, attached to its base point.
struct Tangent {
  Point base;
  std::vector<double> coords;
};

/// Point/tangent validity at the stated tolerance (unit norm for spheres,
/// R^T R = I and det = +1 for SO3, orthogonality/skewness for tangents).
bool is_valid_point(const Manifold& m, std::span<const double> x,
                    double tol = 1e-9);
bool is_valid_tangent(const Manifold& m, std::span<const double> x,
                      std::span<const double> v, double tol = 1e-9);

/// Orthogonal projection of an ambient vector onto T_x M. Idempotent.
Tangent proj_tangent(const Manifold& m, const Point& x,
                     std::span<const double> v_ambient);

/// Alias for proj_tangent so objective code reads as a covariant
/// derivative D_t V = Proj_x(dV/dt).
Tangent covariant_deriv_projection(const Manifold& m, const Point& x,
                                   std::span<const double> dv_ambient);

Point exp_map(const Manifold& m, const Point& x, const Tangent& v);

/// Throws std::domain_error when y lies at/near the cut locus of x.
Tangent log_map(const Manifold& m, const Point& x, const Point& y);

double geodesic_distance(const Manifold& m, const Point& x, const Point& y);

Point geodesic_interpolate(const Manifold& m, const Point& x0, const Point& x1,
                           double t);

/// Transports v in T_x M along the geodesic from x to y. Isometric.
Tangent parallel_transport(const Manifold& m, const Point& x, const Point& y,
                           const Tangent& v);

/// Raw-buffer dlog variants for hot paths; status instead of throwing.
GeoResult dlog_second_arg_raw(const Manifold& m, std::span<const double> x,
                              std::span<const double> y,
                              std::span<const double> w, std::span<double> out);
GeoResult dlog_first_arg_raw(const Manifold& m, std::span<const double> x,
                             std::span<const double> y,
                             std::span<const double> v, std::span<double> out);

/// d(log_x)_y[w]: differential of log in its second argument, computed by
/// a forward dual pass through the ambient log formula and projected at x.
Tangent dlog_second_arg(const Manifold& m, const Point& x, const Point& y,
                        const Tangent& w);

/// nabla^1_v log_x(y): covariant derivative of log in its base point,
/// Proj_x(d/de log_{exp_x(e v)}(y) at e=0), same dual-pass mechanism.
Tangent dlog_first_arg(const Manifold& m, const Point& x, const Point& y,
                       const Tangent& v);

/// Prior draw: uniform on spheres, Haar on SO3, standard normal on
/// Euclidean space, factor-wise on products.
Point random_point(const Manifold& m, Rng& rng);
void random_point(const Manifold& m, Rng& rng, std::span<double> out);

/// Standard normal in the ambient space projected onto T_x M.
Tangent random_tangent(const Manifold& m, const Point& x, Rng& rng);

}  // namespace rmflow
