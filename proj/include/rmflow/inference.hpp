#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rmflow/autodiff.hpp"
#include "rmflow/model.hpp"

namespace rmflow {

enum class GuidanceMode : std::uint8_t { None = 0, NaiveState, X1Lookahead };

const char* to_string(GuidanceMode g);
GuidanceMode guidance_from_string(const std::string& s);

struct SamplerConfig {
  int nfe = 1;           // uniform partition of [0,1] into nfe intervals
  double eta = 0.0;      // low-noise strength; 0 disables
  GuidanceMode guidance = GuidanceMode::None;
  double lambda = 0.0;   // guidance scale
  std::uint64_t seed = 0;
};

/// Differentiable scalar reward of ambient coordinates, evaluated on a
/// tape so its Riemannian gradient is one reverse sweep.
using RewardFn = std::function<Var(std::span<const Var>)>;

/// Phi_{s,t}(x) = exp_x((t-s) u^theta_{s,t}(x)).
GeoResult flow_map_raw(const NetParams& net, Parameterization p,
                       const Manifold& m, std::span<const double> x, double s,
                       double t, std::span<double> out);
Point flow_map(const NetParams& net, Parameterization p, const Manifold& m,
               const Point& x, double s, double t);

/// Proj_x of the ambient reward gradient at x.
Tangent riemannian_reward_grad(const Manifold& m, const Point& x,
                               const RewardFn& reward);

/// One guided step x -> exp_x(dt (u + lambda zeta)). With lambda = 0 or
/// no guidance the result is bit-identical to flow_map.
Point guided_step(const NetParams& net, Parameterization p, const Manifold& m,
                  const Point& x_t, double t, double dt, GuidanceMode mode,
                  double lambda, const RewardFn& reward);

/// One trajectory from the prior through the nfe-step grid. With eta > 0
/// every step at target time t < 1 re-anchors through the x1 estimate and
/// re-injects scaled noise; in Euclidean space this is exactly
/// x_t = t x1_hat + eta (1-t) eps.
GeoResult sample_one(const NetParams& net, Parameterization p,
                     const Manifold& m, const SamplerConfig& cfg, Rng& rng,
                     std::span<double> out,
                     const RewardFn* reward = nullptr);

/// Batch sampler; trajectory i uses the child stream (seed, i), so output
/// is identical for any thread count.
std::vector<double> sample_batch(const NetParams& net, Parameterization p,
                                 const Manifold& m, const SamplerConfig& cfg,
                                 long count, int threads = 1,
                                 const RewardFn* reward = nullptr,
                                 long* aborted = nullptr);

}  // namespace rmflow
