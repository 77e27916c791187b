#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmflow/autodiff.hpp"
#include "rmflow/model.hpp"

namespace rmflow {

enum class Objective : std::uint8_t {
  Eulerian = 0,
  Lagrangian = 1,
  Semigroup = 2,
  FlowMatching = 3
};

const char* to_string(Objective o);
Objective objective_from_string(const std::string& s);

/// Time-pair ordering. Default follows the objective: Eulerian and
/// Semigroup sort s <= t, Lagrangian keeps the raw order. The forced
/// variants exist for the ordering ablation.
enum class TimeOrdering : std::uint8_t { Default = 0, ForceOrdered, ForceUnordered };

struct TimeDraw {
  double s = 0.0;
  double t = 0.0;
  double r = 0.0;
  bool is_boundary = false;  // s == t flow-matching draw
  bool has_r = false;        // semigroup intermediate time
};

struct ObjectiveConfig {
  Objective objective = Objective::Semigroup;
  Parameterization parameterization = Parameterization::X1Pred;
  double adaptive_p = 0.5;
  double adaptive_c = 1e-3;
  double x1_eps = 0.1;
  double boundary_fraction = 0.75;
  double time_mu = -0.4;
  double time_sigma = 1.0;
  double cycle_weight = 0.0;
  bool semigroup_interval_weighting = false;  // (t-s)^2 per-sample factor
  double derivative_clip = 100.0;
  TimeOrdering time_ordering = TimeOrdering::Default;
  double learning_rate = 1e-3;
  double grad_clip_norm = 1.0;
  int batch_size = 256;
  long steps = 10000;
  double ema_decay = 0.9999;
};

struct LossStats {
  double loss = 0.0;       // weighted batch loss (main + cycle)
  double main_loss = 0.0;
  double cycle_loss = 0.0;
  double residual_mean = 0.0;  // raw |u - tgt|^2 statistics
  double residual_var = 0.0;
  double residual_max = 0.0;
  double target_norm_mean = 0.0;
  double target_norm_max = 0.0;
  long used = 0;
  long skipped = 0;
  double grad_norm = 0.0;  // after clipping
  bool aborted = false;    // non-finite loss; state unchanged
};

// ---------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------

/// Boundary draws (probability boundary_fraction) emit s = t. Otherwise
/// two logit-normal times sigmoid(N(mu, sigma^2)) are drawn and ordered
/// per objective; Semigroup adds r ~ Uniform[s, t].
TimeDraw sample_times(const ObjectiveConfig& cfg, Rng& rng);

/// Rows of a fixed dataset on the manifold.
struct DataView {
  const double* data = nullptr;
  int dim = 0;
  long count = 0;
  std::span<const double> row(long i) const {
    return {data + static_cast<std::size_t>(i) * static_cast<std::size_t>(dim),
            static_cast<std::size_t>(dim)};
  }
};

/// Independent coupling: x0 from the manifold prior, x1 a dataset row.
void sample_pair(const Manifold& m, const DataView& data, Rng& rng,
                 std::span<double> x0, std::span<double> x1);

/// Geodesic interpolant x_t plus its time derivative (projected at x_t),
/// computed with one dual sweep through the interpolation formula.
GeoResult conditional_velocity(const Manifold& m, std::span<const double> x0,
                               std::span<const double> x1, double t,
                               std::span<double> x_t, std::span<double> v_t);

// ---------------------------------------------------------------------
// Loss weights
// ---------------------------------------------------------------------

/// w = (|Delta|^2 + c)^(-p), applied as a frozen multiplier.
double adaptive_weight(double residual_norm_sq, double c, double p);

/// (1-s)/max(1-s, eps): 1 away from s = 1, linear decay to 0 at s = 1.
double x1_time_weight(double s, double eps);

// ---------------------------------------------------------------------
// Regression targets (all computed frozen; no gradient flows through).
// The typed wrappers throw std::domain_error when the predicted step
// leaves the log/exp domain; training instead skips such samples.
// ---------------------------------------------------------------------

Tangent eulerian_target(const NetParams& net, Parameterization p,
                        const Manifold& m, const Point& x_s, double s, double t,
                        const Tangent& v_s, double derivative_clip = 100.0);

/// Returns (x_hat_s, target at x_hat_s).
std::pair<Point, Tangent> lagrangian_target(const NetParams& net,
                                            Parameterization p,
                                            const Manifold& m, const Point& x_t,
                                            double s, double t,
                                            const Tangent& v_t,
                                            double derivative_clip = 100.0);

Tangent semigroup_target(const NetParams& net, Parameterization p,
                         const Manifold& m, const Point& x_s, double s,
                         double r, double t, const Tangent& v_s);

/// Squared geodesic round-trip defect d(Phi_{s,t}(Phi_{t,s}(x_t)), x_t)^2.
double cycle_loss(const NetParams& net, Parameterization p, const Manifold& m,
                  const Point& x_t, double s, double t);

// ---------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Scales grad in place to the clip norm when it exceeds it; returns the
/// post-clip norm.
double clip_global_norm(std::span<double> grad, double max_norm);

void adam_step(AdamState& st, std::span<double> params,
               std::span<const double> grad, double lr);

// ---------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------

struct TrainState {
  Manifold manifold = Manifold::euclidean(1);
  NetParams params;
  Parameterization param_kind = Parameterization::X1Pred;
  EmaState ema;
  AdamState adam;
  long step = 0;
};

TrainState make_train_state(const Manifold& m, const NetShape& shape,
                            double omega, Parameterization p,
                            double ema_decay, std::uint64_t seed);

/// Mean batch gradient (before clipping) of the configured objective at
/// the current parameters; state is not advanced. This is the exact
/// quantity train_step feeds the optimizer, exposed so the stop-gradient
/// contract can be audited against frozen-target tape gradients.
LossStats compute_batch_gradient(const TrainState& st,
                                 const ObjectiveConfig& cfg,
                                 const DataView& data, const Rng& run_rng,
                                 long step_index, int threads,
                                 std::span<double> grad_out);

/// One optimizer step over a batch. Per-sample randomness is derived from
/// (seed, step, sample index), so results are reproducible for any thread
/// count; gradient reduction order is fixed by the chunk partition.
LossStats train_step(TrainState& st, const ObjectiveConfig& cfg,
                     const DataView& data, const Rng& run_rng, int threads = 1);

struct TrainRunResult {
  bool diverged = false;
  long steps_done = 0;
  double final_loss = 0.0;
  long total_skipped = 0;
};

/// Full run; invokes on_step after every step (for the loss log).
TrainRunResult run_training(
    TrainState& st, const ObjectiveConfig& cfg, const DataView& data,
    const Rng& run_rng, int threads,
    const std::function<void(long, const LossStats&)>& on_step = {});

}  // namespace rmflow
