#pragma once

#include <type_traits>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rmflow/geometry.hpp"

namespace rmflow {

/// Network output head semantics: tangent prediction, trajectory-endpoint
/// prediction, or direct flow-map target prediction.
enum class Parameterization : std::uint8_t { VPred = 0, X1Pred = 1, XtPred = 2 };

const char* to_string(Parameterization p);
Parameterization parameterization_from_string(const std::string& s);

struct NetShape {
  int ambient_dim = 0;
  int hidden_width = 256;
  int depth = 5;  // number of linear layers
  int embed_dim = 32;

  int input_dim() const { return ambient_dim + 2 * embed_dim; }
  int output_dim() const { return ambient_dim; }
  int layer_in(int l) const { return l == 0 ? input_dim() : hidden_width; }
  int layer_out(int l) const {
    return l == depth - 1 ? output_dim() : hidden_width;
  }
  std::size_t layer_params(int l) const {
    return static_cast<std::size_t>(layer_out(l)) *
               static_cast<std::size_t>(layer_in(l)) +
           static_cast<std::size_t>(layer_out(l));
  }
  std::size_t layer_offset(int l) const {
    std::size_t off = 0;
    for (int i = 0; i < l; ++i) off += layer_params(i);
    return off;
  }
  std::size_t param_count() const { return layer_offset(depth); }

  bool operator==(const NetShape&) const = default;
};

struct NetParams {
  NetShape shape;
  double omega = 0.02;  // Fourier base frequency of the time embeddings
  std::vector<double> w;
};

/// Variance-scaled normal init (N(0, 1/fan_in), zero bias); the output
/// head is scaled by 0.01 so the initial average velocity is small and
/// early exp() steps stay inside injectivity radii.
NetParams init_net(const NetShape& shape, double omega, std::uint64_t seed);

// ---------------------------------------------------------------------
// Time embedding: interleaved sin/cos at frequencies omega * 2^k.
// ---------------------------------------------------------------------

template <class T>
void time_embed(T t, double omega, int embed_dim, std::span<T> out) {
  double f = omega;
  for (int k = 0; k < embed_dim / 2; ++k) {
    const T a = t * T(f);
    out[2 * k] = sin(a);
    out[2 * k + 1] = cos(a);
    f *= 2.0;
  }
}

/// Network input is [x; embed(s); embed(t - s)]; both the absolute time
/// and the gap are embedded.
template <class T>
void build_net_input(const NetParams& net, std::span<const T> x, T s, T t,
                     std::span<T> out) {
  const int d = net.shape.ambient_dim;
  const int e = net.shape.embed_dim;
  for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)];
  time_embed(s, net.omega, e, out.subspan(static_cast<std::size_t>(d), static_cast<std::size_t>(e)));
  time_embed(t - s, net.omega, e,
             out.subspan(static_cast<std::size_t>(d + e), static_cast<std::size_t>(e)));
}

template <class T>
T silu(T x) {
  // Far-negative branch keeps exp() finite; both branches are smooth.
  if (value_of(x) < -30.0) return x * exp(x);
  return x / (T(1.0) + exp(-x));
}

inline double silu_deriv(double x) {
  const double s = x < -30.0 ? std::exp(x) : 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

/// Plain templated forward pass (SiLU hidden activations, linear head).
/// One code path serves values, dual JVP sweeps and tape recording.
template <class T>
void mlp_forward(const NetParams& net, std::span<const T> input,
                 std::span<T> out) {
  const NetShape& sh = net.shape;
  std::vector<T> a(input.begin(), input.end()), b;
  for (int l = 0; l < sh.depth; ++l) {
    const int nin = sh.layer_in(l);
    const int nout = sh.layer_out(l);
    const double* wp = net.w.data() + sh.layer_offset(l);
    const double* bp = wp + static_cast<std::size_t>(nout) * nin;
    b.assign(static_cast<std::size_t>(nout), T(0.0));
    for (int o = 0; o < nout; ++o) {
      T s = T(bp[o]);
      const double* row = wp + static_cast<std::size_t>(o) * nin;
      for (int i = 0; i < nin; ++i) s += T(row[i]) * a[static_cast<std::size_t>(i)];
      b[static_cast<std::size_t>(o)] = (l == sh.depth - 1) ? s : silu(s);
    }
    a.swap(b);
  }
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i];
}

/// Activation cache for the fast double-precision path: preactivations of
/// every layer plus the layer inputs aligned with them.
struct MlpCache {
  std::vector<std::vector<double>> in;   // in[l]: input of layer l
  std::vector<std::vector<double>> pre;  // pre[l]: preactivation of layer l
  std::span<const double> output() const { return pre.back(); }
};

void mlp_forward_cached(const NetParams& net, std::span<const double> input,
                        MlpCache& cache);

/// Uncached double forward into caller scratch; the hot path for frozen
/// target hops.
void mlp_forward_fast(const NetParams& net, std::span<const double> input,
                      std::span<double> out, std::vector<double>& scratch);

/// Reverse sweep; accumulates dL/dw into grad (same layout as net.w) and,
/// when dinput is nonempty, writes dL/dinput.
void mlp_backward(const NetParams& net, const MlpCache& cache,
                  std::span<const double> dout, std::span<double> grad,
                  std::span<double> dinput);

/// Directional derivative reusing cached preactivations; matches the dual
/// forward at a fraction of the cost.
void mlp_jvp_from_cache(const NetParams& net, const MlpCache& cache,
                        std::span<const double> dinput, std::span<double> dout);

// ---------------------------------------------------------------------
// Raw head -> manifold point (X1/Xt prediction): spheres normalize, SO3
// runs an orthogonal (polar) projection with a determinant sign fix,
// products map factor-wise.
// ---------------------------------------------------------------------

template <class T>
GeoResult map_to_manifold(const Manifold& m, std::span<const T> raw,
                          std::span<T> out);

/// Average-velocity head u^theta_{s,t}(x) as a tangent at x, for a given
/// raw network output. Post-network chain only; no network evaluation.
///   VPred:  u = Proj_x(raw)
///   X1Pred: u = log_x(mapped raw) / (1 - s)        (requires s < 1)
///   XtPred: u = log_x(mapped raw) / (t - s); at t = s the projected raw
///           output is returned as the boundary value.
template <class T>
GeoResult map_net_out_to_u(const Manifold& m, Parameterization p,
                           std::span<const T> x, T s, T t,
                           std::span<const T> raw, std::span<T> u);

/// Full predictor: network forward plus head mapping. Templated so dual
/// sweeps differentiate through everything in one pass.
template <class T>
GeoResult predict_u_t(const NetParams& net, Parameterization p,
                      const Manifold& m, std::span<const T> x, T s, T t,
                      std::span<T> u) {
  std::vector<T> input(static_cast<std::size_t>(net.shape.input_dim()));
  std::vector<T> raw(static_cast<std::size_t>(net.shape.output_dim()));
  build_net_input(net, x, s, t, std::span<T>(input));
  if constexpr (std::is_same_v<T, double>) {
    thread_local std::vector<double> scratch;
    mlp_forward_fast(net, input, std::span<double>(raw), scratch);
  } else {
    mlp_forward(net, std::span<const T>(input), std::span<T>(raw));
  }
  return map_net_out_to_u(m, p, x, s, t, std::span<const T>(raw), u);
}

/// Typed convenience wrapper; throws std::domain_error on head failures
/// (X1Pred at s >= 1, log outside the injectivity domain, degenerate map).
Tangent predict_u(const NetParams& net, Parameterization p, const Manifold& m,
                  const Point& x, double s, double t);

// ---------------------------------------------------------------------
// EMA shadow parameters.
// ---------------------------------------------------------------------

struct EmaState {
  std::vector<double> shadow;
  double decay = 0.9999;
};

EmaState make_ema(const NetParams& params, double decay);
void ema_update(EmaState& ema, const NetParams& params);

// ---------------------------------------------------------------------
// Checkpoints (.rmfckpt): header (manifold, shape, parameterization,
// omega, seed) + little-endian float64 parameter vector.
// ---------------------------------------------------------------------

struct Checkpoint {
  Manifold manifold = Manifold::euclidean(1);
  Parameterization parameterization = Parameterization::VPred;
  NetParams net;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------
// Template definitions.
// ---------------------------------------------------------------------

template <class T>
GeoResult map_to_manifold(const Manifold& m, std::span<const T> raw,
                          std::span<T> out) {
  switch (m.kind()) {
    case ManifoldKind::Euclidean:
      for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i];
      return GeoResult::Ok;
    case ManifoldKind::Sphere: {
      const T q = geo::norm2(raw);
      if (value_of(q) < 1e-24) return GeoResult::Degenerate;
      const T inv = T(1.0) / sqrt(q);
      for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] * inv;
      return GeoResult::Ok;
    }
    case ManifoldKind::SO3: {
      // Polar factor by Newton iteration X <- (X + X^{-T})/2, then a
      // determinant sign fix; smooth in the entries, so dual sweeps work.
      std::vector<T> x(raw.begin(), raw.end()), inv(9);
      if (std::abs(value_of(geo::mat3_det(std::span<const T>(x)))) < 1e-12)
        return GeoResult::Degenerate;
      for (int it = 0; it < 25; ++it) {
        if (!geo::mat3_inverse(std::span<const T>(x), std::span<T>(inv)))
          return GeoResult::Degenerate;
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j)
            x[static_cast<std::size_t>(3 * i + j)] =
                (x[static_cast<std::size_t>(3 * i + j)] + inv[static_cast<std::size_t>(3 * j + i)]) * T(0.5);
      }
      const bool flip = value_of(geo::mat3_det(std::span<const T>(x))) < 0.0;
      for (int i = 0; i < 9; ++i)
        out[static_cast<std::size_t>(i)] =
            flip ? -x[static_cast<std::size_t>(i)] : x[static_cast<std::size_t>(i)];
      return GeoResult::Ok;
    }
    case ManifoldKind::Product: {
      std::size_t off = 0;
      for (const Manifold& f : m.factors()) {
        const std::size_t d = static_cast<std::size_t>(f.ambient_dim());
        const GeoResult st =
            map_to_manifold(f, raw.subspan(off, d), out.subspan(off, d));
        if (st != GeoResult::Ok) return st;
        off += d;
      }
      return GeoResult::Ok;
    }
  }
  return GeoResult::Degenerate;
}

template <class T>
GeoResult map_net_out_to_u(const Manifold& m, Parameterization p,
                           std::span<const T> x, T s, T t,
                           std::span<const T> raw, std::span<T> u) {
  switch (p) {
    case Parameterization::VPred:
      geo::proj(m, x, raw, u);
      return GeoResult::Ok;
    case Parameterization::X1Pred: {
      if (value_of(s) >= 1.0 - 1e-12) return GeoResult::Degenerate;
      std::vector<T> x1(raw.size());
      GeoResult st = map_to_manifold(m, raw, std::span<T>(x1));
      if (st != GeoResult::Ok) return st;
      st = geo::log_map(m, x, std::span<const T>(x1), u);
      if (st != GeoResult::Ok) return st;
      const T f = T(1.0) / (T(1.0) - s);
      for (auto& e : u) e = e * f;
      return GeoResult::Ok;
    }
    case Parameterization::XtPred: {
      if (value_of(t) == value_of(s)) {
        geo::proj(m, x, raw, u);
        return GeoResult::Ok;
      }
      std::vector<T> xt(raw.size());
      GeoResult st = map_to_manifold(m, raw, std::span<T>(xt));
      if (st != GeoResult::Ok) return st;
      st = geo::log_map(m, x, std::span<const T>(xt), u);
      if (st != GeoResult::Ok) return st;
      const T f = T(1.0) / (t - s);
      for (auto& e : u) e = e * f;
      return GeoResult::Ok;
    }
  }
  return GeoResult::Degenerate;
}

}  // namespace rmflow
