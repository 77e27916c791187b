#include "rmflow/training.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

namespace rmflow {

const char* to_string(Objective o) {
  switch (o) {
    case Objective::Eulerian:
      return "eulerian";
    case Objective::Lagrangian:
      return "lagrangian";
    case Objective::Semigroup:
      return "semigroup";
    case Objective::FlowMatching:
      return "flow_matching";
  }
  return "?";
}

Objective objective_from_string(const std::string& s) {
  if (s == "eulerian") return Objective::Eulerian;
  if (s == "lagrangian") return Objective::Lagrangian;
  if (s == "semigroup") return Objective::Semigroup;
  if (s == "flow_matching" || s == "fm") return Objective::FlowMatching;
  throw std::invalid_argument("unknown objective: " + s);
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TimeDraw sample_times(const ObjectiveConfig& cfg, Rng& rng) {
  TimeDraw d;
  if (cfg.objective == Objective::FlowMatching) {
    d.s = d.t = sigmoid(rng.normal(cfg.time_mu, cfg.time_sigma));
    d.is_boundary = true;
    return d;
  }
  if (rng.uniform() < cfg.boundary_fraction) {
    d.s = d.t = sigmoid(rng.normal(cfg.time_mu, cfg.time_sigma));
    d.is_boundary = true;
    if (cfg.objective == Objective::Semigroup) {
      d.r = d.s;  // s = r = t flow-matching case
      d.has_r = true;
    }
    return d;
  }
  double a = sigmoid(rng.normal(cfg.time_mu, cfg.time_sigma));
  double b = sigmoid(rng.normal(cfg.time_mu, cfg.time_sigma));
  bool ordered = cfg.objective == Objective::Eulerian ||
                 cfg.objective == Objective::Semigroup;
  if (cfg.time_ordering == TimeOrdering::ForceOrdered) ordered = true;
  if (cfg.time_ordering == TimeOrdering::ForceUnordered) ordered = false;
  if (ordered && a > b) std::swap(a, b);
  d.s = a;
  d.t = b;
  if (cfg.objective == Objective::Semigroup) {
    d.r = d.s + rng.uniform() * (d.t - d.s);
    d.has_r = true;
  }
  return d;
}

void sample_pair(const Manifold& m, const DataView& data, Rng& rng,
                 std::span<double> x0, std::span<double> x1) {
  if (data.count <= 0) throw std::invalid_argument("sample_pair: empty dataset");
  random_point(m, rng, x0);
  const auto row = data.row(static_cast<long>(rng.below(
      static_cast<std::uint64_t>(data.count))));
  for (std::size_t i = 0; i < row.size(); ++i) x1[i] = row[i];
}

GeoResult conditional_velocity(const Manifold& m, std::span<const double> x0,
                               std::span<const double> x1, double t,
                               std::span<double> x_t, std::span<double> v_t) {
  const std::size_t n = x0.size();
  std::vector<Dual> x0d(n), x1d(n), outd(n);
  for (std::size_t i = 0; i < n; ++i) {
    x0d[i] = Dual(x0[i]);
    x1d[i] = Dual(x1[i]);
  }
  const GeoResult st =
      geo::interpolate<Dual>(m, x0d, x1d, Dual(t, 1.0), std::span<Dual>(outd));
  if (st != GeoResult::Ok) return st;
  std::vector<double> dv(n);
  for (std::size_t i = 0; i < n; ++i) {
    x_t[i] = outd[i].v;
    dv[i] = outd[i].d;
  }
  geo::proj<double>(m, std::span<const double>(x_t.data(), n), dv, v_t);
  return GeoResult::Ok;
}

double adaptive_weight(double residual_norm_sq, double c, double p) {
  if (c <= 0.0) throw std::invalid_argument("adaptive_weight: c must be > 0");
  return std::pow(residual_norm_sq + c, -p);
}

double x1_time_weight(double s, double eps) {
  return (1.0 - s) / std::max(1.0 - s, eps);
}

// ---------------------------------------------------------------------
// Target computation. Everything here is evaluated with plain doubles,
// which realizes the stop-gradient: targets are numeric constants to the
// parameter gradient by construction.
// ---------------------------------------------------------------------

namespace {

struct TargetScratch {
  MlpCache cache;   // regression-path forward
  MlpCache cache2;  // lagrangian t->s hop (kept for the cycle term)
  std::vector<double> net_in, raw, u, tgt, x_in;
  std::vector<double> raw2, u_hop, x_hop, x_hop2, u_hop2;
  std::vector<double> din, draw, du, tmp, tmp2;
  Tape tape;
  bool have_cache2 = false;
};

// Derivative of the network input [x; emb(s); emb(t-s)] along the
// direction (dx, ds, dt).
void build_input_tangent(const NetParams& net, std::span<const double> dx,
                         double s, double t, double ds, double dt,
                         std::vector<double>& din) {
  const int d = net.shape.ambient_dim;
  const int e = net.shape.embed_dim;
  din.assign(static_cast<std::size_t>(net.shape.input_dim()), 0.0);
  if (!dx.empty())
    for (int i = 0; i < d; ++i) din[static_cast<std::size_t>(i)] = dx[static_cast<std::size_t>(i)];
  std::vector<Dual> eb(static_cast<std::size_t>(e));
  time_embed<Dual>(Dual(s, ds), net.omega, e, std::span<Dual>(eb));
  for (int k = 0; k < e; ++k) din[static_cast<std::size_t>(d + k)] = eb[static_cast<std::size_t>(k)].d;
  time_embed<Dual>(Dual(t - s, dt - ds), net.omega, e, std::span<Dual>(eb));
  for (int k = 0; k < e; ++k) din[static_cast<std::size_t>(d + e + k)] = eb[static_cast<std::size_t>(k)].d;
}

// Directional derivative of u through the head mapping, given the raw
// output and its directional derivative. Returns the ambient derivative
// of u (not yet projected).
GeoResult head_jvp(const Manifold& m, Parameterization p,
                   std::span<const double> x, std::span<const double> dx,
                   double s, double ds, double t, double dt,
                   std::span<const double> raw, std::span<const double> draw,
                   std::vector<double>& du) {
  const std::size_t n = x.size();
  std::vector<Dual> xd(n), rd(n), ud(n);
  for (std::size_t i = 0; i < n; ++i) {
    xd[i] = Dual(x[i], dx.empty() ? 0.0 : dx[i]);
    rd[i] = Dual(raw[i], draw[i]);
  }
  const GeoResult st = map_net_out_to_u<Dual>(
      m, p, xd, Dual(s, ds), Dual(t, dt), rd, std::span<Dual>(ud));
  if (st != GeoResult::Ok) return st;
  du.resize(n);
  for (std::size_t i = 0; i < n; ++i) du[i] = ud[i].d;
  return GeoResult::Ok;
}

// dL/draw = (du/draw)^T dL/du via one reverse sweep over the head chain.
GeoResult head_vjp(Tape& tape, const Manifold& m, Parameterization p,
                   std::span<const double> x, double s, double t,
                   std::span<const double> raw, std::span<const double> dl_du,
                   std::vector<double>& dl_draw) {
  if (p == Parameterization::VPred) {
    // projection is self-adjoint
    dl_draw.resize(raw.size());
    geo::proj<double>(m, x, dl_du, std::span<double>(dl_draw));
    return GeoResult::Ok;
  }
  tape.clear();
  const std::size_t n = raw.size();
  std::vector<Var> rv(n), xv(n), uv(n);
  for (std::size_t i = 0; i < n; ++i) {
    rv[i] = make_leaf(tape, raw[i]);
    xv[i] = Var(x[i]);
  }
  const GeoResult st = map_net_out_to_u<Var>(m, p, xv, Var(s), Var(t),
                                             std::span<const Var>(rv),
                                             std::span<Var>(uv));
  if (st != GeoResult::Ok) return st;
  Var inner(0.0);
  for (std::size_t i = 0; i < n; ++i) inner += uv[i] * Var(dl_du[i]);
  const std::vector<double> g = grad(tape, inner, rv);
  dl_draw.assign(g.begin(), g.end());
  return GeoResult::Ok;
}

void clip_ambient_norm(std::vector<double>& v, double clip) {
  double n2 = 0.0;
  for (double e : v) n2 += e * e;
  const double n = std::sqrt(n2);
  if (n > clip) {
    const double f = clip / n;
    for (double& e : v) e *= f;
  }
}

// Cached regression forward at (x_in, s, t); fills ws.raw and ws.u.
GeoResult forward_regression(const NetParams& net, Parameterization p,
                             const Manifold& m, std::span<const double> x_in,
                             double s, double t, TargetScratch& ws) {
  ws.net_in.resize(static_cast<std::size_t>(net.shape.input_dim()));
  build_net_input<double>(net, x_in, s, t, std::span<double>(ws.net_in));
  mlp_forward_cached(net, ws.net_in, ws.cache);
  ws.raw.assign(ws.cache.output().begin(), ws.cache.output().end());
  ws.u.resize(x_in.size());
  return map_net_out_to_u<double>(m, p, x_in, s, t, ws.raw,
                                  std::span<double>(ws.u));
}

// Plain (uncached) predictor used for frozen hops.
GeoResult predict_plain(const NetParams& net, Parameterization p,
                        const Manifold& m, std::span<const double> x, double s,
                        double t, std::vector<double>& net_in,
                        std::vector<double>& raw, std::vector<double>& u) {
  thread_local std::vector<double> scratch;
  net_in.resize(static_cast<std::size_t>(net.shape.input_dim()));
  build_net_input<double>(net, x, s, t, std::span<double>(net_in));
  raw.resize(static_cast<std::size_t>(net.shape.output_dim()));
  mlp_forward_fast(net, net_in, std::span<double>(raw), scratch);
  u.resize(x.size());
  return map_net_out_to_u<double>(m, p, x, s, t, raw, std::span<double>(u));
}

// Computes the frozen regression target plus the (cached) regression
// forward. On return ws.x_in is the regression base point, ws.u the model
// output, ws.tgt the target.
GeoResult compute_target(const NetParams& net, Parameterization p,
                         const Manifold& m, const ObjectiveConfig& cfg,
                         const TimeDraw& dr, std::span<const double> x_pt,
                         std::span<const double> v_pt, TargetScratch& ws,
                         bool want_cache2) {
  const int d = m.ambient_dim();
  const double s = dr.s, t = dr.t;
  ws.have_cache2 = false;
  ws.x_in.assign(x_pt.begin(), x_pt.end());

  if (dr.is_boundary) {  // flow-matching anchor: target is the velocity
    const GeoResult st = forward_regression(net, p, m, ws.x_in, s, s, ws);
    if (st != GeoResult::Ok) return st;
    ws.tgt.assign(v_pt.begin(), v_pt.end());
    return GeoResult::Ok;
  }

  switch (cfg.objective) {
    case Objective::FlowMatching:
      return GeoResult::Degenerate;  // unreachable: FM draws are boundary

    case Objective::Eulerian: {
      GeoResult st = forward_regression(net, p, m, ws.x_in, s, t, ws);
      if (st != GeoResult::Ok) return st;
      // total derivative along the curve: (dx, ds, dt) = (v_s, 1, 0)
      build_input_tangent(net, v_pt, s, t, 1.0, 0.0, ws.din);
      ws.draw.resize(static_cast<std::size_t>(d));
      mlp_jvp_from_cache(net, ws.cache, ws.din, std::span<double>(ws.draw));
      st = head_jvp(m, p, ws.x_in, v_pt, s, 1.0, t, 0.0, ws.raw, ws.draw, ws.du);
      if (st != GeoResult::Ok) return st;
      clip_ambient_norm(ws.du, cfg.derivative_clip);
      ws.tmp.resize(static_cast<std::size_t>(d));
      geo::proj<double>(m, ws.x_in, ws.du, std::span<double>(ws.tmp));  // D_s u
      // y = Phi_{s,t}(x_s) under the current (frozen) model
      ws.tmp2.resize(static_cast<std::size_t>(d));
      for (int i = 0; i < d; ++i)
        ws.tmp2[static_cast<std::size_t>(i)] = (t - s) * ws.u[static_cast<std::size_t>(i)];
      ws.x_hop.resize(static_cast<std::size_t>(d));
      geo::exp_map<double>(m, ws.x_in, ws.tmp2, std::span<double>(ws.x_hop));
      ws.tgt.resize(static_cast<std::size_t>(d));
      st = dlog_first_arg_raw(m, ws.x_in, ws.x_hop, v_pt, std::span<double>(ws.tgt));
      if (st != GeoResult::Ok) return st;
      for (int i = 0; i < d; ++i)
        ws.tgt[static_cast<std::size_t>(i)] =
            (t - s) * ws.tmp[static_cast<std::size_t>(i)] - ws.tgt[static_cast<std::size_t>(i)];
      return GeoResult::Ok;
    }

    case Objective::Lagrangian: {
      // x_pt is x_t here; hop back: x_hat_s = Phi_{t,s}(x_t), frozen
      GeoResult st;
      if (want_cache2) {
        ws.tmp.resize(static_cast<std::size_t>(net.shape.input_dim()));
        build_net_input<double>(net, x_pt, t, s, std::span<double>(ws.tmp));
        mlp_forward_cached(net, ws.tmp, ws.cache2);
        ws.raw2.assign(ws.cache2.output().begin(), ws.cache2.output().end());
        ws.u_hop.resize(static_cast<std::size_t>(d));
        st = map_net_out_to_u<double>(m, p, x_pt, t, s, ws.raw2,
                                      std::span<double>(ws.u_hop));
        ws.have_cache2 = true;
      } else {
        st = predict_plain(net, p, m, x_pt, t, s, ws.tmp, ws.raw2, ws.u_hop);
      }
      if (st != GeoResult::Ok) return st;
      ws.tmp2.resize(static_cast<std::size_t>(d));
      for (int i = 0; i < d; ++i)
        ws.tmp2[static_cast<std::size_t>(i)] = (s - t) * ws.u_hop[static_cast<std::size_t>(i)];
      ws.x_in.resize(static_cast<std::size_t>(d));
      geo::exp_map<double>(m, x_pt, ws.tmp2, std::span<double>(ws.x_in));
      st = forward_regression(net, p, m, ws.x_in, s, t, ws);
      if (st != GeoResult::Ok) return st;
      // explicit time derivative: (dx, ds, dt) = (0, 0, 1)
      build_input_tangent(net, {}, s, t, 0.0, 1.0, ws.din);
      ws.draw.resize(static_cast<std::size_t>(d));
      mlp_jvp_from_cache(net, ws.cache, ws.din, std::span<double>(ws.draw));
      st = head_jvp(m, p, ws.x_in, {}, s, 0.0, t, 1.0, ws.raw, ws.draw, ws.du);
      if (st != GeoResult::Ok) return st;
      clip_ambient_norm(ws.du, cfg.derivative_clip);
      ws.tmp.resize(static_cast<std::size_t>(d));
      geo::proj<double>(m, ws.x_in, ws.du, std::span<double>(ws.tmp));
      ws.tgt.resize(static_cast<std::size_t>(d));
      st = dlog_second_arg_raw(m, ws.x_in, x_pt, v_pt, std::span<double>(ws.tgt));
      if (st != GeoResult::Ok) return st;
      for (int i = 0; i < d; ++i)
        ws.tgt[static_cast<std::size_t>(i)] -= (t - s) * ws.tmp[static_cast<std::size_t>(i)];
      return GeoResult::Ok;
    }

    case Objective::Semigroup: {
      GeoResult st = forward_regression(net, p, m, ws.x_in, s, t, ws);
      if (st != GeoResult::Ok) return st;
      const double r = dr.r;
      st = predict_plain(net, p, m, ws.x_in, s, r, ws.tmp, ws.raw2, ws.u_hop);
      if (st != GeoResult::Ok) return st;
      ws.tmp2.resize(static_cast<std::size_t>(d));
      for (int i = 0; i < d; ++i)
        ws.tmp2[static_cast<std::size_t>(i)] = (r - s) * ws.u_hop[static_cast<std::size_t>(i)];
      ws.x_hop.resize(static_cast<std::size_t>(d));
      geo::exp_map<double>(m, ws.x_in, ws.tmp2, std::span<double>(ws.x_hop));
      st = predict_plain(net, p, m, ws.x_hop, r, t, ws.tmp, ws.raw2, ws.u_hop2);
      if (st != GeoResult::Ok) return st;
      for (int i = 0; i < d; ++i)
        ws.tmp2[static_cast<std::size_t>(i)] = (t - r) * ws.u_hop2[static_cast<std::size_t>(i)];
      ws.x_hop2.resize(static_cast<std::size_t>(d));
      geo::exp_map<double>(m, ws.x_hop, ws.tmp2, std::span<double>(ws.x_hop2));
      ws.tgt.resize(static_cast<std::size_t>(d));
      st = geo::log_map<double>(m, ws.x_in, ws.x_hop2, std::span<double>(ws.tgt));
      if (st != GeoResult::Ok) return st;
      const double inv = 1.0 / (t - s);
      for (int i = 0; i < d; ++i) ws.tgt[static_cast<std::size_t>(i)] *= inv;
      return GeoResult::Ok;
    }
  }
  return GeoResult::Degenerate;
}

// Cycle-consistency value and adjoints with respect to the two raw
// network outputs. The x_hat_s -> network-input path (outside the tape)
// is folded in through the cached input gradient.
double cycle_value_and_adjoints(const NetParams& net, Parameterization p,
                                const Manifold& m, std::span<const double> x_t,
                                double s, double t, TargetScratch& ws,
                                std::vector<double>& dout1,
                                std::vector<double>& dout2) {
  const std::size_t n = static_cast<std::size_t>(m.ambient_dim());
  Tape& tape = ws.tape;
  tape.clear();
  std::vector<Var> out1(n), out2(n), xtv(n), u_ts(n), xhat(n), u1(n), y(n), step(n);
  for (std::size_t i = 0; i < n; ++i) {
    out1[i] = make_leaf(tape, ws.raw[i]);
    out2[i] = make_leaf(tape, ws.raw2[i]);
    xtv[i] = Var(x_t[i]);
  }
  GeoResult st = map_net_out_to_u<Var>(m, p, std::span<const Var>(xtv), Var(t),
                                       Var(s), std::span<const Var>(out2),
                                       std::span<Var>(u_ts));
  if (st != GeoResult::Ok) return -1.0;
  for (std::size_t i = 0; i < n; ++i) step[i] = Var(s - t) * u_ts[i];
  geo::exp_map<Var>(m, std::span<const Var>(xtv), std::span<const Var>(step),
                    std::span<Var>(xhat));
  st = map_net_out_to_u<Var>(m, p, std::span<const Var>(xhat), Var(s), Var(t),
                             std::span<const Var>(out1), std::span<Var>(u1));
  if (st != GeoResult::Ok) return -1.0;
  for (std::size_t i = 0; i < n; ++i) step[i] = Var(t - s) * u1[i];
  geo::exp_map<Var>(m, std::span<const Var>(xhat), std::span<const Var>(step),
                    std::span<Var>(y));
  const Var c = geo::distance_sq<Var>(m, std::span<const Var>(y),
                                      std::span<const Var>(xtv));

  std::vector<double> g1 = grad(tape, c, out1);
  std::vector<double> g2 = grad(tape, c, out2);

  // Path through the regression network input: dL/d(x_hat) via the MLP,
  // then pulled back to out2 on the same tape.
  std::vector<double> din(static_cast<std::size_t>(net.shape.input_dim()));
  mlp_backward(net, ws.cache, g1, {}, std::span<double>(din));
  Var inner(0.0);
  for (std::size_t i = 0; i < n; ++i) inner += xhat[i] * Var(din[i]);
  const std::vector<double> g2x = grad(tape, inner, out2);
  for (std::size_t i = 0; i < n; ++i) g2[i] += g2x[i];

  dout1 = std::move(g1);
  dout2 = std::move(g2);
  return c.v;
}

}  // namespace

// ---------------------------------------------------------------------
// Typed target wrappers (test/oracle surface).
// ---------------------------------------------------------------------

namespace {

[[noreturn]] void throw_target(GeoResult st, const char* what) {
  if (st == GeoResult::CutLocus)
    throw std::domain_error(std::string(what) +
                            ": predicted step left the injectivity domain");
  throw std::domain_error(std::string(what) + ": degenerate configuration");
}

ObjectiveConfig wrapper_cfg(Objective o, double clip) {
  ObjectiveConfig cfg;
  cfg.objective = o;
  cfg.derivative_clip = clip;
  return cfg;
}

}  // namespace

Tangent eulerian_target(const NetParams& net, Parameterization p,
                        const Manifold& m, const Point& x_s, double s, double t,
                        const Tangent& v_s, double derivative_clip) {
  TargetScratch ws;
  TimeDraw dr{s, t, 0.0, s == t, false};
  const GeoResult st =
      compute_target(net, p, m, wrapper_cfg(Objective::Eulerian, derivative_clip),
                     dr, x_s.coords, v_s.coords, ws, false);
  if (st != GeoResult::Ok) throw_target(st, "eulerian_target");
  return Tangent{x_s, ws.tgt};
}

std::pair<Point, Tangent> lagrangian_target(const NetParams& net,
                                            Parameterization p,
                                            const Manifold& m, const Point& x_t,
                                            double s, double t,
                                            const Tangent& v_t,
                                            double derivative_clip) {
  TargetScratch ws;
  TimeDraw dr{s, t, 0.0, s == t, false};
  const GeoResult st = compute_target(
      net, p, m, wrapper_cfg(Objective::Lagrangian, derivative_clip), dr,
      x_t.coords, v_t.coords, ws, false);
  if (st != GeoResult::Ok) throw_target(st, "lagrangian_target");
  Point xhat{m, ws.x_in};
  return {xhat, Tangent{xhat, ws.tgt}};
}

Tangent semigroup_target(const NetParams& net, Parameterization p,
                         const Manifold& m, const Point& x_s, double s,
                         double r, double t, const Tangent& v_s) {
  TargetScratch ws;
  TimeDraw dr{s, t, r, s == t, true};
  const GeoResult st =
      compute_target(net, p, m, wrapper_cfg(Objective::Semigroup, 100.0), dr,
                     x_s.coords, v_s.coords, ws, false);
  if (st != GeoResult::Ok) throw_target(st, "semigroup_target");
  return Tangent{x_s, ws.tgt};
}

double cycle_loss(const NetParams& net, Parameterization p, const Manifold& m,
                  const Point& x_t, double s, double t) {
  const int d = m.ambient_dim();
  if (s == t) return 0.0;
  std::vector<double> net_in, raw, u, step(static_cast<std::size_t>(d)),
      xhat(static_cast<std::size_t>(d)), y(static_cast<std::size_t>(d));
  GeoResult st = predict_plain(net, p, m, x_t.coords, t, s, net_in, raw, u);
  if (st != GeoResult::Ok) throw_target(st, "cycle_loss");
  for (int i = 0; i < d; ++i) step[static_cast<std::size_t>(i)] = (s - t) * u[static_cast<std::size_t>(i)];
  geo::exp_map<double>(m, x_t.coords, step, std::span<double>(xhat));
  st = predict_plain(net, p, m, xhat, s, t, net_in, raw, u);
  if (st != GeoResult::Ok) throw_target(st, "cycle_loss");
  for (int i = 0; i < d; ++i) step[static_cast<std::size_t>(i)] = (t - s) * u[static_cast<std::size_t>(i)];
  geo::exp_map<double>(m, std::span<const double>(xhat), step, std::span<double>(y));
  return geo::distance_sq<double>(m, y, x_t.coords);
}

// ---------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------

double clip_global_norm(std::span<double> grad, double max_norm) {
  double n2 = 0.0;
  for (double g : grad) n2 += g * g;
  double n = std::sqrt(n2);
  if (n > max_norm && n > 0.0) {
    const double f = max_norm / n;
    for (double& g : grad) g *= f;
    n = max_norm;
  }
  return n;
}

void adam_step(AdamState& st, std::span<double> params,
               std::span<const double> grad, double lr) {
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
    st.t = 0;
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
    params[i] -= lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + st.eps);
  }
}

// ---------------------------------------------------------------------
// Training step
// ---------------------------------------------------------------------

TrainState make_train_state(const Manifold& m, const NetShape& shape,
                            double omega, Parameterization p, double ema_decay,
                            std::uint64_t seed) {
  TrainState st;
  st.manifold = m;
  NetShape sh = shape;
  sh.ambient_dim = m.ambient_dim();
  st.params = init_net(sh, omega, seed);
  st.param_kind = p;
  st.ema = make_ema(st.params, ema_decay);
  return st;
}

namespace {

struct WorkerCtx {
  TargetScratch ws;
  std::vector<double> x0, x1, x_pt, v_pt, dl_du, dl_draw, cyc1, cyc2;
  std::vector<double> grad;
  double loss_sum = 0.0, main_sum = 0.0, cyc_sum = 0.0;
  double r2_sum = 0.0, r2_sq_sum = 0.0, r2_max = 0.0;
  double tn_sum = 0.0, tn_max = 0.0;
  long used = 0, skipped = 0;
};

void process_sample(const TrainState& st, const ObjectiveConfig& cfg,
                    const DataView& data, const Rng& run_rng, long step_index,
                    long i, WorkerCtx& c) {
  const Manifold& m = st.manifold;
  const std::size_t d = static_cast<std::size_t>(m.ambient_dim());
  Rng rng = run_rng.child(static_cast<std::uint64_t>(step_index),
                          static_cast<std::uint64_t>(i));
  c.x0.resize(d);
  c.x1.resize(d);
  c.x_pt.resize(d);
  c.v_pt.resize(d);
  sample_pair(m, data, rng, std::span<double>(c.x0), std::span<double>(c.x1));
  const TimeDraw dr = sample_times(cfg, rng);
  // interpolant state at the objective's sampling time
  const double tq = cfg.objective == Objective::Lagrangian ? dr.t : dr.s;
  GeoResult gst = conditional_velocity(m, c.x0, c.x1, tq,
                                       std::span<double>(c.x_pt),
                                       std::span<double>(c.v_pt));
  if (gst != GeoResult::Ok) {
    ++c.skipped;
    return;
  }
  const bool want_cycle = cfg.objective == Objective::Lagrangian &&
                          cfg.cycle_weight > 0.0 && !dr.is_boundary;
  gst = compute_target(st.params, st.param_kind, m, cfg, dr, c.x_pt, c.v_pt,
                       c.ws, want_cycle);
  if (gst != GeoResult::Ok) {
    ++c.skipped;
    return;
  }

  double r2 = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double dj = c.ws.u[j] - c.ws.tgt[j];
    r2 += dj * dj;
  }
  const bool adaptive_off =
      cfg.objective == Objective::Semigroup && dr.is_boundary;
  double w = 1.0;
  if (cfg.adaptive_p > 0.0 && !adaptive_off)
    w *= adaptive_weight(r2, cfg.adaptive_c, cfg.adaptive_p);
  w *= x1_time_weight(dr.s, cfg.x1_eps);
  if (cfg.objective == Objective::Semigroup &&
      cfg.semigroup_interval_weighting && !dr.is_boundary)
    w *= (dr.t - dr.s) * (dr.t - dr.s);

  double sample_loss = w * r2;
  c.dl_du.resize(d);
  for (std::size_t j = 0; j < d; ++j)
    c.dl_du[j] = 2.0 * w * (c.ws.u[j] - c.ws.tgt[j]);
  gst = head_vjp(c.ws.tape, m, st.param_kind, c.ws.x_in, dr.s, dr.t, c.ws.raw,
                 c.dl_du, c.dl_draw);
  if (gst != GeoResult::Ok) {
    ++c.skipped;
    return;
  }

  double cyc = 0.0;
  if (want_cycle && c.ws.have_cache2) {
    cyc = cycle_value_and_adjoints(st.params, st.param_kind, m, c.x_pt, dr.s,
                                   dr.t, c.ws, c.cyc1, c.cyc2);
    if (cyc >= 0.0) {
      sample_loss += cfg.cycle_weight * cyc;
      for (std::size_t j = 0; j < d; ++j)
        c.dl_draw[j] += cfg.cycle_weight * c.cyc1[j];
      for (std::size_t j = 0; j < d; ++j) c.cyc2[j] *= cfg.cycle_weight;
      mlp_backward(st.params, c.ws.cache2, c.cyc2, std::span<double>(c.grad), {});
    } else {
      cyc = 0.0;  // cycle round trip left the domain; drop the term
    }
  }

  mlp_backward(st.params, c.ws.cache, c.dl_draw, std::span<double>(c.grad), {});

  c.loss_sum += sample_loss;
  c.main_sum += w * r2;
  c.cyc_sum += cyc;
  c.r2_sum += r2;
  c.r2_sq_sum += r2 * r2;
  c.r2_max = std::max(c.r2_max, r2);
  double tn = 0.0;
  for (std::size_t j = 0; j < d; ++j) tn += c.ws.tgt[j] * c.ws.tgt[j];
  tn = std::sqrt(tn);
  c.tn_sum += tn;
  c.tn_max = std::max(c.tn_max, tn);
  ++c.used;
}

}  // namespace

LossStats compute_batch_gradient(const TrainState& st,
                                 const ObjectiveConfig& cfg,
                                 const DataView& data, const Rng& run_rng,
                                 long step_index, int threads,
                                 std::span<double> grad_out) {
  const long batch = cfg.batch_size;
  const std::size_t np = st.params.w.size();
  int nthreads = threads < 1 ? 1 : threads;
  if (static_cast<long>(nthreads) > batch) nthreads = static_cast<int>(batch);

  std::vector<WorkerCtx> ctx(static_cast<std::size_t>(nthreads));
  for (auto& c : ctx) c.grad.assign(np, 0.0);

  auto run_chunk = [&](int w) {
    const long lo = batch * w / nthreads;
    const long hi = batch * (w + 1) / nthreads;
    for (long i = lo; i < hi; ++i)
      process_sample(st, cfg, data, run_rng, step_index, i,
                     ctx[static_cast<std::size_t>(w)]);
  };
  if (nthreads == 1) {
    run_chunk(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 1; w < nthreads; ++w) pool.emplace_back(run_chunk, w);
    run_chunk(0);
    for (auto& th : pool) th.join();
  }

  LossStats out;
  for (std::size_t j = 0; j < np; ++j) grad_out[j] = ctx[0].grad[j];
  for (int w = 1; w < nthreads; ++w)
    for (std::size_t j = 0; j < np; ++j)
      grad_out[j] += ctx[static_cast<std::size_t>(w)].grad[j];
  double loss_sum = 0, main_sum = 0, cyc_sum = 0, r2_sum = 0, r2_sq = 0;
  for (const auto& c : ctx) {
    loss_sum += c.loss_sum;
    main_sum += c.main_sum;
    cyc_sum += c.cyc_sum;
    r2_sum += c.r2_sum;
    r2_sq += c.r2_sq_sum;
    out.residual_max = std::max(out.residual_max, c.r2_max);
    out.target_norm_max = std::max(out.target_norm_max, c.tn_max);
    out.target_norm_mean += c.tn_sum;
    out.used += c.used;
    out.skipped += c.skipped;
  }
  if (out.used == 0) {
    out.aborted = true;
    return out;
  }
  const double n = static_cast<double>(out.used);
  out.loss = loss_sum / n;
  out.main_loss = main_sum / n;
  out.cycle_loss = cyc_sum / n;
  out.residual_mean = r2_sum / n;
  out.residual_var = std::max(0.0, r2_sq / n - out.residual_mean * out.residual_mean);
  out.target_norm_mean /= n;

  bool finite = std::isfinite(out.loss);
  for (std::size_t j = 0; finite && j < np; ++j)
    finite = std::isfinite(grad_out[j]);
  if (!finite) {
    out.aborted = true;
    return out;
  }
  for (std::size_t j = 0; j < np; ++j) grad_out[j] /= n;
  return out;
}

LossStats train_step(TrainState& st, const ObjectiveConfig& cfg,
                     const DataView& data, const Rng& run_rng, int threads) {
  const long step_index = st.step;
  st.step += 1;
  std::vector<double> grad(st.params.w.size(), 0.0);
  LossStats out = compute_batch_gradient(st, cfg, data, run_rng, step_index,
                                         threads, std::span<double>(grad));
  if (out.aborted) return out;
  out.grad_norm = clip_global_norm(std::span<double>(grad), cfg.grad_clip_norm);
  adam_step(st.adam, std::span<double>(st.params.w), grad, cfg.learning_rate);
  ema_update(st.ema, st.params);
  return out;
}

TrainRunResult run_training(
    TrainState& st, const ObjectiveConfig& cfg, const DataView& data,
    const Rng& run_rng, int threads,
    const std::function<void(long, const LossStats&)>& on_step) {
  TrainRunResult res;
  long consecutive_bad = 0;
  for (long k = 0; k < cfg.steps; ++k) {
    const LossStats stats = train_step(st, cfg, data, run_rng, threads);
    res.steps_done = k + 1;
    res.total_skipped += stats.skipped;
    res.final_loss = stats.loss;
    if (on_step) on_step(k, stats);
    const bool bad = stats.aborted || !std::isfinite(stats.loss);
    consecutive_bad = bad ? consecutive_bad + 1 : 0;
    if (consecutive_bad >= 100) {
      res.diverged = true;
      return res;
    }
  }
  return res;
}

}  // namespace rmflow
