#include <cmath>

#include "rmflow/evalsuite.hpp"

namespace rmflow {

namespace {

double vec_norm(std::span<const double> v) {
  double s = 0;
  for (double e : v) s += e * e;
  return std::sqrt(s);
}

double diff_norm(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<Manifold> verification_manifolds() {
  return {Manifold::sphere(3), Manifold::sphere(512), Manifold::so3(),
          Manifold::product({Manifold::sphere(3), Manifold::so3(),
                             Manifold::euclidean(2), Manifold::sphere(5)})};
}

// Max round-trip error |log(x, exp(x, v)) - v| over trials.
double roundtrip_error(const Manifold& m, int trials, Rng& rng) {
  const std::size_t d = static_cast<std::size_t>(m.ambient_dim());
  std::vector<double> x(d), v(d), y(d), lg(d), amb(d);
  double worst = 0;
  const double rad = m.injectivity_radius();
  const double cap = std::isfinite(rad) ? 0.9 * rad : 3.0;
  for (int k = 0; k < trials; ++k) {
    random_point(m, rng, std::span<double>(x));
    rng.fill_normal(amb);
    geo::proj<double>(m, x, amb, std::span<double>(v));
    const double n = vec_norm(v);
    if (n < 1e-12) continue;
    const double scale = rng.uniform(0.0, cap) / n;
    for (auto& e : v) e *= scale;
    geo::exp_map<double>(m, x, v, std::span<double>(y));
    if (geo::log_map<double>(m, x, y, std::span<double>(lg)) != GeoResult::Ok)
      continue;
    worst = std::max(worst, diff_norm(lg, v));
  }
  return worst;
}

// Max |  |log(x,y)| - d(x,y) | over trials.
double metric_error(const Manifold& m, int trials, Rng& rng) {
  const std::size_t d = static_cast<std::size_t>(m.ambient_dim());
  std::vector<double> x(d), y(d), lg(d);
  double worst = 0;
  for (int k = 0; k < trials; ++k) {
    random_point(m, rng, std::span<double>(x));
    random_point(m, rng, std::span<double>(y));
    if (geo::log_map<double>(m, x, y, std::span<double>(lg)) != GeoResult::Ok)
      continue;
    worst = std::max(worst,
                     std::abs(vec_norm(lg) - geo::distance<double>(m, x, y)));
  }
  return worst;
}

// Max inner-product drift under transport.
double transport_error(const Manifold& m, int trials, Rng& rng) {
  const std::size_t d = static_cast<std::size_t>(m.ambient_dim());
  std::vector<double> x(d), y(d), v(d), w(d), pv(d), pw(d), amb(d);
  double worst = 0;
  for (int k = 0; k < trials; ++k) {
    random_point(m, rng, std::span<double>(x));
    random_point(m, rng, std::span<double>(y));
    rng.fill_normal(amb);
    geo::proj<double>(m, x, amb, std::span<double>(v));
    rng.fill_normal(amb);
    geo::proj<double>(m, x, amb, std::span<double>(w));
    if (geo::transport<double>(m, x, y, v, std::span<double>(pv)) != GeoResult::Ok)
      continue;
    if (geo::transport<double>(m, x, y, w, std::span<double>(pw)) != GeoResult::Ok)
      continue;
    const double before = geo::dot<double>(v, w);
    const double after = geo::dot<double>(pv, pw);
    worst = std::max(worst, std::abs(after - before));
  }
  return worst;
}

// Relative disagreement of both dlog operators and the conditional
// velocity against central finite differences at step h.
double derivative_fd_error(const Manifold& m, int trials, Rng& rng, double h) {
  const std::size_t d = static_cast<std::size_t>(m.ambient_dim());
  std::vector<double> x(d), y(d), v(d), w(d), amb(d), got(d), fd(d), tp(d),
      tm(d), yp(d), ym(d), lp(d), lm(d);
  double worst = 0;
  auto rel = [&](std::span<const double> a, std::span<const double> b) {
    return diff_norm(a, b) / (vec_norm(a) + 1e-9);
  };
  for (int k = 0; k < trials; ++k) {
    random_point(m, rng, std::span<double>(x));
    random_point(m, rng, std::span<double>(y));
    if (geo::log_map<double>(m, x, y, std::span<double>(got)) != GeoResult::Ok)
      continue;
    // keep y inside a comfortable region of the log domain
    if (vec_norm(got) > 0.8 * std::min(m.injectivity_radius(), 3.0)) continue;

    // second-argument differential
    rng.fill_normal(amb);
    geo::proj<double>(m, y, amb, std::span<double>(w));
    if (dlog_second_arg_raw(m, x, y, w, std::span<double>(got)) != GeoResult::Ok)
      continue;
    for (std::size_t i = 0; i < d; ++i) tp[i] = h * w[i];
    geo::exp_map<double>(m, y, tp, std::span<double>(yp));
    for (std::size_t i = 0; i < d; ++i) tm[i] = -h * w[i];
    geo::exp_map<double>(m, y, tm, std::span<double>(ym));
    if (geo::log_map<double>(m, x, yp, std::span<double>(lp)) != GeoResult::Ok)
      continue;
    if (geo::log_map<double>(m, x, ym, std::span<double>(lm)) != GeoResult::Ok)
      continue;
    for (std::size_t i = 0; i < d; ++i) fd[i] = (lp[i] - lm[i]) / (2.0 * h);
    geo::proj<double>(m, x, fd, std::span<double>(tm));
    worst = std::max(worst, rel(got, tm));

    // first-argument (base point) differential
    rng.fill_normal(amb);
    geo::proj<double>(m, x, amb, std::span<double>(v));
    if (dlog_first_arg_raw(m, x, y, v, std::span<double>(got)) != GeoResult::Ok)
      continue;
    for (std::size_t i = 0; i < d; ++i) tp[i] = h * v[i];
    geo::exp_map<double>(m, x, tp, std::span<double>(yp));
    for (std::size_t i = 0; i < d; ++i) tm[i] = -h * v[i];
    geo::exp_map<double>(m, x, tm, std::span<double>(ym));
    if (geo::log_map<double>(m, yp, y, std::span<double>(lp)) != GeoResult::Ok)
      continue;
    if (geo::log_map<double>(m, ym, y, std::span<double>(lm)) != GeoResult::Ok)
      continue;
    for (std::size_t i = 0; i < d; ++i) fd[i] = (lp[i] - lm[i]) / (2.0 * h);
    geo::proj<double>(m, x, fd, std::span<double>(tm));
    worst = std::max(worst, rel(got, tm));

    // conditional velocity vs finite differences of the interpolant
    const double t = rng.uniform(0.1, 0.9);
    std::vector<double> xt(d), vt(d);
    if (conditional_velocity(m, x, y, t, std::span<double>(xt),
                             std::span<double>(vt)) != GeoResult::Ok)
      continue;
    if (geo::interpolate<double>(m, x, y, t + h, std::span<double>(yp)) != GeoResult::Ok)
      continue;
    if (geo::interpolate<double>(m, x, y, t - h, std::span<double>(ym)) != GeoResult::Ok)
      continue;
    for (std::size_t i = 0; i < d; ++i) fd[i] = (yp[i] - ym[i]) / (2.0 * h);
    geo::proj<double>(m, std::span<const double>(xt.data(), d), fd, std::span<double>(tm));
    worst = std::max(worst, rel(vt, tm));
  }
  return worst;
}

// Flat-space reduction: the Eulerian target must equal
// v + (t - s) d/ds u, with the total derivative from an independent dual
// sweep through the full predictor.
double euclidean_reduction_error(int nets, Rng& rng) {
  const Manifold m = Manifold::euclidean(8);
  double worst = 0;
  for (int k = 0; k < nets; ++k) {
    NetShape sh;
    sh.ambient_dim = 8;
    sh.hidden_width = 16;
    sh.depth = 3;
    sh.embed_dim = 8;
    const NetParams net = init_net(sh, 0.5, rng.next_u64());
    Point x = random_point(m, rng);
    Tangent v = random_tangent(m, x, rng);
    const double s = rng.uniform(0.05, 0.6);
    const double t = rng.uniform(s, 0.95);
    const Tangent tgt = eulerian_target(net, Parameterization::VPred, m, x, s,
                                        t, v, 1e18);
    std::vector<Dual> xd(8), ud(8);
    for (int i = 0; i < 8; ++i) xd[static_cast<std::size_t>(i)] = Dual(x.coords[static_cast<std::size_t>(i)], v.coords[static_cast<std::size_t>(i)]);
    if (predict_u_t<Dual>(net, Parameterization::VPred, m, xd, Dual(s, 1.0),
                          Dual(t, 0.0), std::span<Dual>(ud)) != GeoResult::Ok)
      continue;
    for (int i = 0; i < 8; ++i) {
      const double expect = v.coords[static_cast<std::size_t>(i)] + (t - s) * ud[static_cast<std::size_t>(i)].d;
      worst = std::max(worst, std::abs(expect - tgt.coords[static_cast<std::size_t>(i)]));
    }
  }
  return worst;
}

IdentityResiduals rotation_residuals(int draws, Rng& rng, double corrupt) {
  const Manifold s2 = Manifold::sphere(3);
  RotationFlowOracle o;
  o.axis = {0.0, 0.0, 1.0};
  o.omega = 1.3;
  const double pert[3] = {0.31, -0.22, 0.54};
  AvgVelField u = [o, corrupt, &pert, &s2](std::span<const double> x, double s,
                                           double t, std::span<double> out) {
    const GeoResult st = oracle_avg_velocity(o, x, s, t, out);
    if (st != GeoResult::Ok) return st;
    if (corrupt != 0.0) {
      double tmp[3];
      geo::proj<double>(s2, x, std::span<const double>(pert, 3),
                        std::span<double>(tmp, 3));
      for (int i = 0; i < 3; ++i) out[static_cast<std::size_t>(i)] += corrupt * tmp[i];
    }
    return GeoResult::Ok;
  };
  VelField v = [o](std::span<const double> x, double t, std::span<double> out) {
    oracle_velocity(o, x, t, out);
  };
  FlowFn flow = [o](std::span<const double> x, double s, double t,
                    std::span<double> out) { oracle_flow(o, x, s, t, out); };
  return identity_residuals(s2, u, v, flow, draws, rng);
}

double jvp_grad_consistency(int trials, Rng& rng) {
  double worst = 0;
  for (int k = 0; k < trials; ++k) {
    std::vector<double> x(6), dir(6);
    rng.fill_normal(x);
    rng.fill_normal(dir);
    // scalar test function built from the supported primitive set
    auto fd = [](std::span<const Dual> in) {
      Dual s(0.0);
      for (std::size_t i = 0; i + 1 < in.size(); ++i)
        s += sin(in[i]) * in[i + 1] + exp(in[i] * Dual(0.3));
      s += sqrt(in[0] * in[0] + Dual(1.0)) * tanh(in[3]);
      return std::vector<Dual>{s};
    };
    auto [val, dv] = jvp(fd, x, dir);
    Tape tape;
    std::vector<Var> xv(6);
    for (int i = 0; i < 6; ++i) xv[static_cast<std::size_t>(i)] = make_leaf(tape, x[static_cast<std::size_t>(i)]);
    Var s(0.0);
    for (int i = 0; i + 1 < 6; ++i)
      s += sin(xv[static_cast<std::size_t>(i)]) * xv[static_cast<std::size_t>(i + 1)] + exp(xv[static_cast<std::size_t>(i)] * Var(0.3));
    s += sqrt(xv[0] * xv[0] + Var(1.0)) * tanh(xv[3]);
    const std::vector<double> g = grad(tape, s, xv);
    double dot = 0;
    for (int i = 0; i < 6; ++i) dot += g[static_cast<std::size_t>(i)] * dir[static_cast<std::size_t>(i)];
    worst = std::max(worst, std::abs(dot - dv[0]));
  }
  return worst;
}

}  // namespace

VerifyReport run_verification(std::uint64_t seed) {
  VerifyReport rep;
  Rng rng(seed);
  auto add_below = [&rep](const std::string& name, double tol, double measured) {
    rep.checks.push_back({name, tol, measured, measured < tol});
    rep.all_pass = rep.all_pass && rep.checks.back().pass;
  };
  auto add_above = [&rep](const std::string& name, double tol, double measured) {
    rep.checks.push_back({name, tol, measured, measured > tol});
    rep.all_pass = rep.all_pass && rep.checks.back().pass;
  };

  for (const Manifold& m : verification_manifolds()) {
    const std::string tag = m.describe();
    add_below("roundtrip/" + tag, 1e-8, roundtrip_error(m, 1000, rng));
    add_below("log_norm_vs_distance/" + tag, 1e-9, metric_error(m, 200, rng));
    add_below("transport_isometry/" + tag, 1e-9, transport_error(m, 200, rng));
    add_below("derivative_fd/" + tag, 1e-4, derivative_fd_error(m, 200, rng, 1e-5));
  }
  add_below("flat_space_target_reduction", 1e-10,
            euclidean_reduction_error(100, rng));

  const IdentityResiduals clean = rotation_residuals(100, rng, 0.0);
  add_below("identity_residual_eulerian", 1e-6, clean.eulerian.max);
  add_below("identity_residual_lagrangian", 1e-6, clean.lagrangian.max);
  add_below("identity_residual_semigroup", 1e-6, clean.semigroup.max);

  const IdentityResiduals bad = rotation_residuals(100, rng, 0.1);
  const double worst_mean = std::max(
      bad.eulerian.mean, std::max(bad.lagrangian.mean, bad.semigroup.mean));
  add_above("corrupted_field_detected", 1e-3, worst_mean);

  add_below("jvp_grad_consistency", 1e-7, jvp_grad_consistency(50, rng));
  return rep;
}

}  // namespace rmflow
