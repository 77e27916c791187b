#include "rmflow/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rmflow {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 6.28318530717958647692;
}  // namespace

// ---------------------------------------------------------------------
// Helix
// ---------------------------------------------------------------------

HelixDataset make_helix(int D, long n, int turns, double jitter_std,
                        std::uint64_t seed) {
  if (D < 3) throw std::invalid_argument("make_helix: D must be >= 3");
  HelixDataset ds;
  ds.ambient_dim = D;
  ds.n = n;
  ds.turns = turns;
  ds.jitter_std = jitter_std;
  ds.seed = seed;
  ds.manifold = Manifold::sphere(D);
  Rng rng(seed);

  // Column-orthogonal U from a Gaussian D x 3 via modified Gram-Schmidt
  // (re-orthogonalized once for high D).
  std::vector<std::vector<double>> col(3, std::vector<double>(static_cast<std::size_t>(D)));
  for (auto& c : col)
    for (auto& e : c) e = rng.normal();
  for (int pass = 0; pass < 2; ++pass) {
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < j; ++k) {
        double d = 0;
        for (int i = 0; i < D; ++i) d += col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] * col[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
        for (int i = 0; i < D; ++i) col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] -= d * col[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
      }
      double nn = 0;
      for (int i = 0; i < D; ++i) nn += col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] * col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
      nn = std::sqrt(nn);
      for (int i = 0; i < D; ++i) col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] /= nn;
    }
  }
  ds.embed.assign(static_cast<std::size_t>(D) * 3, 0.0);
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < 3; ++j)
      ds.embed[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(j)] =
          col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];

  const Manifold s2 = Manifold::sphere(3);
  ds.samples.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(D), 0.0);
  std::vector<double> base(3), jit(3), noisy(3), amb(3);
  for (long k = 0; k < n; ++k) {
    const double tau = rng.uniform();
    const double phi = kPi * tau;
    const double psi = kTwoPi * turns * tau;
    base[0] = std::sin(phi) * std::cos(psi);
    base[1] = std::sin(phi) * std::sin(psi);
    base[2] = std::cos(phi);
    // small tangent jitter, then back onto the sphere
    rng.fill_normal(amb);
    geo::proj<double>(s2, base, amb, std::span<double>(jit));
    for (int i = 0; i < 3; ++i) jit[static_cast<std::size_t>(i)] *= jitter_std;
    geo::exp_map<double>(s2, base, jit, std::span<double>(noisy));
    double* row = ds.samples.data() + static_cast<std::size_t>(k) * static_cast<std::size_t>(D);
    for (int i = 0; i < D; ++i) {
      double y = 0;
      for (int j = 0; j < 3; ++j)
        y += ds.embed[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(j)] * noisy[static_cast<std::size_t>(j)];
      row[i] = y;
    }
  }
  return ds;
}

std::vector<double> project_back(const HelixDataset& ds,
                                 std::span<const double> y) {
  std::vector<double> x(3, 0.0);
  for (int j = 0; j < 3; ++j) {
    double s = 0;
    for (int i = 0; i < ds.ambient_dim; ++i)
      s += ds.embed[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(j)] * y[static_cast<std::size_t>(i)];
    x[static_cast<std::size_t>(j)] = s;
  }
  double nn = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
  if (nn < 1e-9)
    throw std::domain_error("project_back: sample orthogonal to the embedding");
  for (auto& e : x) e /= nn;
  return x;
}

std::vector<double> project_back_batch(const HelixDataset& ds,
                                       const DataView& batch) {
  std::vector<double> out(static_cast<std::size_t>(batch.count) * 3);
  for (long i = 0; i < batch.count; ++i) {
    const std::vector<double> x = project_back(ds, batch.row(i));
    for (int j = 0; j < 3; ++j) out[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
  }
  return out;
}

std::vector<double> uniform_sphere_dataset(int ambient_dim, long n,
                                           std::uint64_t seed) {
  const Manifold m = Manifold::sphere(ambient_dim);
  Rng rng(seed);
  std::vector<double> out(static_cast<std::size_t>(n) * static_cast<std::size_t>(ambient_dim));
  for (long i = 0; i < n; ++i)
    random_point(m, rng,
                 std::span<double>(out.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(ambient_dim),
                                   static_cast<std::size_t>(ambient_dim)));
  return out;
}

std::vector<double> sphere_mixture_dataset(int ambient_dim, long n, int modes,
                                           double spread, std::uint64_t seed) {
  const Manifold m = Manifold::sphere(ambient_dim);
  Rng rng(seed);
  const std::size_t d = static_cast<std::size_t>(ambient_dim);
  std::vector<double> centers(static_cast<std::size_t>(modes) * d);
  for (int k = 0; k < modes; ++k)
    random_point(m, rng, std::span<double>(centers.data() + static_cast<std::size_t>(k) * d, d));
  std::vector<double> out(static_cast<std::size_t>(n) * d), amb(d), tan(d);
  for (long i = 0; i < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(modes)));
    std::span<const double> c(centers.data() + k * d, d);
    rng.fill_normal(amb);
    geo::proj<double>(m, c, amb, std::span<double>(tan));
    for (auto& e : tan) e *= spread;
    geo::exp_map<double>(m, c, tan,
                         std::span<double>(out.data() + static_cast<std::size_t>(i) * d, d));
  }
  return out;
}

// ---------------------------------------------------------------------
// MMD
// ---------------------------------------------------------------------

double mmd_sq_unbiased(const Manifold& m, const DataView& a, const DataView& b,
                       double kappa) {
  if (a.count < 2 || b.count < 2)
    throw std::invalid_argument("mmd: unbiased estimator needs >= 2 points per batch");
  const double inv2k2 = 1.0 / (2.0 * kappa * kappa);
  auto kern = [&](std::span<const double> x, std::span<const double> y) {
    return std::exp(-geo::distance_sq<double>(m, x, y) * inv2k2);
  };
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (long i = 0; i < a.count; ++i)
    for (long j = i + 1; j < a.count; ++j) saa += kern(a.row(i), a.row(j));
  for (long i = 0; i < b.count; ++i)
    for (long j = i + 1; j < b.count; ++j) sbb += kern(b.row(i), b.row(j));
  for (long i = 0; i < a.count; ++i)
    for (long j = 0; j < b.count; ++j) sab += kern(a.row(i), b.row(j));
  const double na = static_cast<double>(a.count), nb = static_cast<double>(b.count);
  return 2.0 * saa / (na * (na - 1.0)) + 2.0 * sbb / (nb * (nb - 1.0)) -
         2.0 * sab / (na * nb);
}

double mmd(const Manifold& m, const DataView& a, const DataView& b,
           double kappa) {
  return std::sqrt(std::max(0.0, mmd_sq_unbiased(m, a, b, kappa)));
}

namespace {

// V-statistic (diagonals included). Nonnegative, positively biased by
// O(1/n): exactly the resolution scale a same-distribution split shows.
double mmd_sq_biased(const Manifold& m, const DataView& a, const DataView& b,
                     double kappa) {
  const double inv2k2 = 1.0 / (2.0 * kappa * kappa);
  auto kern = [&](std::span<const double> x, std::span<const double> y) {
    return std::exp(-geo::distance_sq<double>(m, x, y) * inv2k2);
  };
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (long i = 0; i < a.count; ++i) {
    saa += 1.0;  // diagonal
    for (long j = i + 1; j < a.count; ++j) saa += 2.0 * kern(a.row(i), a.row(j));
  }
  for (long i = 0; i < b.count; ++i) {
    sbb += 1.0;
    for (long j = i + 1; j < b.count; ++j) sbb += 2.0 * kern(b.row(i), b.row(j));
  }
  for (long i = 0; i < a.count; ++i)
    for (long j = 0; j < b.count; ++j) sab += kern(a.row(i), b.row(j));
  const double na = static_cast<double>(a.count), nb = static_cast<double>(b.count);
  return saa / (na * na) + sbb / (nb * nb) - 2.0 * sab / (na * nb);
}

}  // namespace

double dataset_noise_floor(const Manifold& m, const DataView& ds,
                           double kappa) {
  const long half = ds.count / 2;
  const DataView a{ds.data, ds.dim, half};
  const DataView b{ds.data + static_cast<std::size_t>(half) * static_cast<std::size_t>(ds.dim),
                   ds.dim, ds.count - half};
  // The unbiased estimator straddles zero on identical distributions, so
  // the floor uses the V-statistic: strictly positive, O(1/n) decay.
  return std::sqrt(std::max(0.0, mmd_sq_biased(m, a, b, kappa)));
}

// ---------------------------------------------------------------------
// Rotation-flow oracle
// ---------------------------------------------------------------------

namespace {

// Rodrigues rotation of x about the (unit) axis by angle.
void rotate_about_axis(const std::array<double, 3>& k, double angle,
                       std::span<const double> x, std::span<double> out) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double kx = k[1] * x[2] - k[2] * x[1];
  const double ky = k[2] * x[0] - k[0] * x[2];
  const double kz = k[0] * x[1] - k[1] * x[0];
  const double kd = k[0] * x[0] + k[1] * x[1] + k[2] * x[2];
  out[0] = x[0] * c + kx * s + k[0] * kd * (1.0 - c);
  out[1] = x[1] * c + ky * s + k[1] * kd * (1.0 - c);
  out[2] = x[2] * c + kz * s + k[2] * kd * (1.0 - c);
}

}  // namespace

void oracle_flow(const RotationFlowOracle& o, std::span<const double> x,
                 double s, double t, std::span<double> out) {
  rotate_about_axis(o.axis, o.omega * (t - s), x, out);
}

void oracle_velocity(const RotationFlowOracle& o, std::span<const double> x,
                     double /*t*/, std::span<double> v) {
  v[0] = o.omega * (o.axis[1] * x[2] - o.axis[2] * x[1]);
  v[1] = o.omega * (o.axis[2] * x[0] - o.axis[0] * x[2]);
  v[2] = o.omega * (o.axis[0] * x[1] - o.axis[1] * x[0]);
}

GeoResult oracle_avg_velocity(const RotationFlowOracle& o,
                              std::span<const double> x, double s, double t,
                              std::span<double> u) {
  if (t == s) {
    oracle_velocity(o, x, s, u);
    return GeoResult::Ok;
  }
  if (std::abs(o.omega * (t - s)) >= kPi) return GeoResult::CutLocus;
  std::vector<double> y(3);
  oracle_flow(o, x, s, t, std::span<double>(y));
  const Manifold s2 = Manifold::sphere(3);
  const GeoResult st = geo::log_map<double>(s2, x, y, u);
  if (st != GeoResult::Ok) return st;
  const double inv = 1.0 / (t - s);
  for (auto& e : u) e *= inv;
  return GeoResult::Ok;
}

// ---------------------------------------------------------------------
// Identity residuals
// ---------------------------------------------------------------------

IdentityResiduals identity_residuals(const Manifold& m, const AvgVelField& u,
                                     const VelField& v, const FlowFn& flow,
                                     int n_draws, Rng& rng, double fd_step) {
  const std::size_t d = static_cast<std::size_t>(m.ambient_dim());
  IdentityResiduals res;
  std::vector<double> x(d), xt(d), xp(d), xm(d), up(d), um(d), uval(d),
      vs(d), vt(d), dsu(d), dfd(d), term(d), tgt(d), hop1(d), hop2(d), lg(d);
  const double h = fd_step;

  auto accum = [](ResidualStats& st, double r) {
    st.mean += r;
    st.max = std::max(st.max, r);
    st.count += 1;
  };

  for (int k = 0; k < n_draws; ++k) {
    random_point(m, rng, std::span<double>(x));
    double s = rng.uniform(0.05, 0.5);
    double t = rng.uniform(s + 0.05, 0.95);
    const double r = s + rng.uniform() * (t - s);

    // --- Eulerian: u = (t-s) D_s u - dlog1_{v_s} log_{x_s}(x_t)
    flow(x, s, t, std::span<double>(xt));
    v(x, s, std::span<double>(vs));
    if (u(x, s, t, std::span<double>(uval)) != GeoResult::Ok) continue;
    flow(x, s, s + h, std::span<double>(xp));
    flow(x, s, s - h, std::span<double>(xm));
    if (u(xp, s + h, t, std::span<double>(up)) != GeoResult::Ok) continue;
    if (u(xm, s - h, t, std::span<double>(um)) != GeoResult::Ok) continue;
    for (std::size_t i = 0; i < d; ++i) dfd[i] = (up[i] - um[i]) / (2.0 * h);
    geo::proj<double>(m, x, dfd, std::span<double>(dsu));
    if (dlog_first_arg_raw(m, x, xt, vs, std::span<double>(term)) == GeoResult::Ok) {
      double rr = 0;
      for (std::size_t i = 0; i < d; ++i) {
        const double e = uval[i] - ((t - s) * dsu[i] - term[i]);
        rr += e * e;
      }
      accum(res.eulerian, std::sqrt(rr));
    }

    // --- Lagrangian: u = dlog2_{x_s}(x_t)[v_t] - (t-s) dt u
    v(xt, t, std::span<double>(vt));
    if (u(x, s, t + h, std::span<double>(up)) != GeoResult::Ok) continue;
    if (u(x, s, t - h, std::span<double>(um)) != GeoResult::Ok) continue;
    for (std::size_t i = 0; i < d; ++i) dfd[i] = (up[i] - um[i]) / (2.0 * h);
    geo::proj<double>(m, x, dfd, std::span<double>(dsu));
    if (dlog_second_arg_raw(m, x, xt, vt, std::span<double>(term)) == GeoResult::Ok) {
      double rr = 0;
      for (std::size_t i = 0; i < d; ++i) {
        const double e = uval[i] - (term[i] - (t - s) * dsu[i]);
        rr += e * e;
      }
      accum(res.lagrangian, std::sqrt(rr));
    }

    // --- Semigroup: u = log_{x_s}(Phi_{r,t}(Phi_{s,r}(x_s)))/(t-s)
    if (u(x, s, r, std::span<double>(term)) != GeoResult::Ok) continue;
    for (std::size_t i = 0; i < d; ++i) term[i] *= (r - s);
    geo::exp_map<double>(m, x, term, std::span<double>(hop1));
    if (u(hop1, r, t, std::span<double>(term)) != GeoResult::Ok) continue;
    for (std::size_t i = 0; i < d; ++i) term[i] *= (t - r);
    geo::exp_map<double>(m, hop1, term, std::span<double>(hop2));
    if (geo::log_map<double>(m, x, hop2, std::span<double>(lg)) == GeoResult::Ok) {
      double rr = 0;
      for (std::size_t i = 0; i < d; ++i) {
        const double e = uval[i] - lg[i] / (t - s);
        rr += e * e;
      }
      accum(res.semigroup, std::sqrt(rr));
    }
  }
  if (res.eulerian.count) res.eulerian.mean /= static_cast<double>(res.eulerian.count);
  if (res.lagrangian.count) res.lagrangian.mean /= static_cast<double>(res.lagrangian.count);
  if (res.semigroup.count) res.semigroup.mean /= static_cast<double>(res.semigroup.count);
  return res;
}

// ---------------------------------------------------------------------
// Reference integrator
// ---------------------------------------------------------------------

void ode_reference_flow(const VelField& v, const Manifold& m,
                        std::span<const double> x0, double s, double t,
                        int steps, OdeScheme scheme, std::span<double> out) {
  if (steps < 1) throw std::invalid_argument("ode_reference_flow: steps >= 1");
  const std::size_t d = static_cast<std::size_t>(m.ambient_dim());
  std::vector<double> x(x0.begin(), x0.end()), nx(d);
  const double h = (t - s) / steps;
  if (scheme == OdeScheme::GeodesicEuler) {
    std::vector<double> k(d);
    for (int i = 0; i < steps; ++i) {
      const double tau = s + h * i;
      v(x, tau, std::span<double>(k));
      for (auto& e : k) e *= h;
      geo::exp_map<double>(m, x, k, std::span<double>(nx));
      x.swap(nx);
    }
  } else {
    std::vector<double> k1(d), k2(d), k3(d), k4(d), xa(d), step(d), kk(d);
    auto eval_back = [&](std::span<const double> base, double frac,
                         std::span<const double> dir, double tau,
                         std::span<double> kout) {
      // move along dir by frac*h, evaluate v there, transport back
      for (std::size_t i = 0; i < d; ++i) step[i] = frac * h * dir[i];
      geo::exp_map<double>(m, base, step, std::span<double>(xa));
      v(xa, tau, std::span<double>(kk));
      (void)geo::transport<double>(m, std::span<const double>(xa.data(), d), base, kk, kout);
    };
    for (int i = 0; i < steps; ++i) {
      const double tau = s + h * i;
      v(x, tau, std::span<double>(k1));
      eval_back(x, 0.5, k1, tau + 0.5 * h, std::span<double>(k2));
      eval_back(x, 0.5, k2, tau + 0.5 * h, std::span<double>(k3));
      eval_back(x, 1.0, k3, tau + h, std::span<double>(k4));
      for (std::size_t j = 0; j < d; ++j)
        step[j] = h * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) / 6.0;
      geo::exp_map<double>(m, x, step, std::span<double>(nx));
      x.swap(nx);
    }
  }
  for (std::size_t i = 0; i < d; ++i) out[i] = x[i];
}

// ---------------------------------------------------------------------
// Variance probe
// ---------------------------------------------------------------------

VarianceProbe target_variance_probe(const NetParams& net, Parameterization p,
                                    const Manifold& m,
                                    const ObjectiveConfig& cfg,
                                    const DataView& data, int batch,
                                    int buckets, const Rng& rng) {
  VarianceProbe probe;
  probe.bucket_var.assign(static_cast<std::size_t>(buckets), 0.0);
  probe.bucket_count.assign(static_cast<std::size_t>(buckets), 0);
  std::vector<std::vector<double>> bucket_norms(static_cast<std::size_t>(buckets));

  ObjectiveConfig ecfg = cfg;
  ecfg.objective = Objective::Eulerian;
  ecfg.boundary_fraction = 0.0;  // probe the differential branch only

  const std::size_t d = static_cast<std::size_t>(m.ambient_dim());
  std::vector<double> x0(d), x1(d), xs(d), vs(d);
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < batch; ++i) {
    Rng r = rng.child(0x7a11ce, static_cast<std::uint64_t>(i));
    sample_pair(m, data, r, std::span<double>(x0), std::span<double>(x1));
    const TimeDraw dr = sample_times(ecfg, r);
    if (conditional_velocity(m, x0, x1, dr.s, std::span<double>(xs),
                             std::span<double>(vs)) != GeoResult::Ok) {
      ++probe.skipped;
      continue;
    }
    Point xp{m, xs};
    Tangent vp{xp, vs};
    double norm = 0.0;
    try {
      const Tangent tgt = eulerian_target(net, p, m, xp, dr.s, dr.t, vp,
                                          cfg.derivative_clip);
      for (double e : tgt.coords) norm += e * e;
      norm = std::sqrt(norm);
    } catch (const std::domain_error&) {
      ++probe.skipped;
      continue;
    }
    const int b = std::min(buckets - 1, static_cast<int>(dr.s * buckets));
    bucket_norms[static_cast<std::size_t>(b)].push_back(norm);
    sum += norm;
    sumsq += norm * norm;
    ++probe.used;
  }
  for (int b = 0; b < buckets; ++b) {
    const auto& v = bucket_norms[static_cast<std::size_t>(b)];
    probe.bucket_count[static_cast<std::size_t>(b)] = static_cast<long>(v.size());
    if (v.size() < 2) continue;
    double mu = 0;
    for (double e : v) mu += e;
    mu /= static_cast<double>(v.size());
    double var = 0;
    for (double e : v) var += (e - mu) * (e - mu);
    probe.bucket_var[static_cast<std::size_t>(b)] = var / static_cast<double>(v.size());
  }
  if (probe.used > 0) {
    probe.total_mean = sum / static_cast<double>(probe.used);
    probe.total_var = std::max(
        0.0, sumsq / static_cast<double>(probe.used) - probe.total_mean * probe.total_mean);
  }
  return probe;
}

}  // namespace rmflow
