#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rmflow/training.hpp"

namespace rmflow {

// ---------------------------------------------------------------------
// Spherical helix dataset: base curve on S^2 embedded into S^{D-1} by a
// fixed column-orthogonal U (QR of a seeded Gaussian).
// ---------------------------------------------------------------------

struct HelixDataset {
  int ambient_dim = 3;  // D
  long n = 0;
  int turns = 3;
  double jitter_std = 0.01;
  std::uint64_t seed = 0;
  std::vector<double> embed;    // U, row-major D x 3, U^T U = I
  std::vector<double> samples;  // n rows of dimension D, unit norm
  Manifold manifold = Manifold::sphere(3);

  DataView view() const {
    return DataView{samples.data(), ambient_dim, n};
  }
};

HelixDataset make_helix(int D, long n, int turns = 3, double jitter_std = 0.01,
                        std::uint64_t seed = 0);

/// x = U^T y / |U^T y|; throws on a degenerate projection.
std::vector<double> project_back(const HelixDataset& ds,
                                 std::span<const double> y);

/// Projects every row of a high-D batch back to S^2.
std::vector<double> project_back_batch(const HelixDataset& ds,
                                       const DataView& batch);

/// Uniform prior samples as a dataset (n rows).
std::vector<double> uniform_sphere_dataset(int ambient_dim, long n,
                                           std::uint64_t seed);

/// Mixture of wrapped-Gaussian blobs on the sphere.
std::vector<double> sphere_mixture_dataset(int ambient_dim, long n, int modes,
                                           double spread, std::uint64_t seed);

// ---------------------------------------------------------------------
// MMD with the geodesic RBF kernel k(x,y) = exp(-d_g(x,y)^2 / (2 kappa^2)).
// ---------------------------------------------------------------------

/// Unbiased MMD^2 estimate (within-batch diagonals excluded).
double mmd_sq_unbiased(const Manifold& m, const DataView& a, const DataView& b,
                       double kappa);

/// Headline value: sqrt(max(0, unbiased MMD^2)).
double mmd(const Manifold& m, const DataView& a, const DataView& b,
           double kappa = 1.0);

/// MMD between the two halves of a dataset: the resolution floor any
/// model comparison should be read against.
double dataset_noise_floor(const Manifold& m, const DataView& ds,
                           double kappa = 1.0);

// ---------------------------------------------------------------------
// Analytic rotation flow on S^2: closed-form integral curves, average
// velocity, and instantaneous velocity. Validates the identities.
// ---------------------------------------------------------------------

struct RotationFlowOracle {
  std::array<double, 3> axis = {0.0, 0.0, 1.0};
  double omega = 1.0;  // angular speed (radians per unit time)
};

/// Exact flow point: rotation of x by omega (t - s) about the axis.
void oracle_flow(const RotationFlowOracle& o, std::span<const double> x,
                 double s, double t, std::span<double> out);

/// Instantaneous velocity omega (axis cross x).
void oracle_velocity(const RotationFlowOracle& o, std::span<const double> x,
                     double t, std::span<double> v);

/// Average velocity log_x(flow(x))/(t-s); the t = s branch returns the
/// instantaneous velocity. Fails when omega (t-s) reaches pi.
GeoResult oracle_avg_velocity(const RotationFlowOracle& o,
                              std::span<const double> x, double s, double t,
                              std::span<double> u);

// ---------------------------------------------------------------------
// Identity residual certification. Fields are plain callables; the
// differential terms are evaluated by central differences along the
// exact flow, so this tests the identities rather than the sampler.
// ---------------------------------------------------------------------

using AvgVelField = std::function<GeoResult(
    std::span<const double> x, double s, double t, std::span<double> u)>;
using VelField = std::function<void(std::span<const double> x, double t,
                                    std::span<double> v)>;
using FlowFn = std::function<void(std::span<const double> x, double s, double t,
                                  std::span<double> out)>;

struct ResidualStats {
  double mean = 0.0;
  double max = 0.0;
  long count = 0;
};

struct IdentityResiduals {
  ResidualStats eulerian;
  ResidualStats lagrangian;
  ResidualStats semigroup;
};

IdentityResiduals identity_residuals(const Manifold& m, const AvgVelField& u,
                                     const VelField& v, const FlowFn& flow,
                                     int n_draws, Rng& rng,
                                     double fd_step = 1e-6);

// ---------------------------------------------------------------------
// Reference integrator for ground-truth flows.
// ---------------------------------------------------------------------

enum class OdeScheme : std::uint8_t { GeodesicEuler, RK4Tangent };

void ode_reference_flow(const VelField& v, const Manifold& m,
                        std::span<const double> x, double s, double t,
                        int steps, OdeScheme scheme, std::span<double> out);

// ---------------------------------------------------------------------
// Eulerian target-norm variance probe (stabilization diagnostics).
// ---------------------------------------------------------------------

struct VarianceProbe {
  std::vector<double> bucket_var;  // per s-bucket variance of |u_tgt|
  std::vector<long> bucket_count;
  double total_var = 0.0;
  double total_mean = 0.0;
  long used = 0;
  long skipped = 0;
};

VarianceProbe target_variance_probe(const NetParams& net, Parameterization p,
                                    const Manifold& m,
                                    const ObjectiveConfig& cfg,
                                    const DataView& data, int batch,
                                    int buckets, const Rng& rng);

// ---------------------------------------------------------------------
// Self-contained verification battery (geometry round trips, derivative
// checks, the flat-space reduction, oracle identity residuals and the
// corrupted-field converse). Machine-readable result per check.
// ---------------------------------------------------------------------

struct CheckResult {
  std::string name;
  double tolerance = 0.0;
  double measured = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool all_pass = true;
};

VerifyReport run_verification(std::uint64_t seed = 20240001ULL);

}  // namespace rmflow
