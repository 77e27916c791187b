#include "rmflow/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rmflow {

const char* to_string(Parameterization p) {
  switch (p) {
    case Parameterization::VPred:
      return "v";
    case Parameterization::X1Pred:
      return "x1";
    case Parameterization::XtPred:
      return "xt";
  }
  return "?";
}

Parameterization parameterization_from_string(const std::string& s) {
  if (s == "v" || s == "vpred") return Parameterization::VPred;
  if (s == "x1" || s == "x1pred") return Parameterization::X1Pred;
  if (s == "xt" || s == "xtpred") return Parameterization::XtPred;
  throw std::invalid_argument("unknown parameterization: " + s);
}

NetParams init_net(const NetShape& shape, double omega, std::uint64_t seed) {
  if (shape.embed_dim % 2 != 0)
    throw std::invalid_argument("embed_dim must be even");
  if (shape.depth < 1) throw std::invalid_argument("depth must be >= 1");
  NetParams net;
  net.shape = shape;
  net.omega = omega;
  net.w.assign(shape.param_count(), 0.0);
  Rng rng(seed);
  for (int l = 0; l < shape.depth; ++l) {
    const int nin = shape.layer_in(l);
    const int nout = shape.layer_out(l);
    const double scale =
        (l == shape.depth - 1 ? 0.01 : 1.0) / std::sqrt(static_cast<double>(nin));
    double* wp = net.w.data() + shape.layer_offset(l);
    for (int i = 0; i < nout * nin; ++i) wp[i] = scale * rng.normal();
    // biases stay zero
  }
  return net;
}

namespace {

// Four-accumulator dot product: fixed summation order (deterministic)
// that the compiler can vectorize without fast-math.
double dot4(const double* a, const double* b, int n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

void mlp_forward_cached(const NetParams& net, std::span<const double> input,
                        MlpCache& cache) {
  const NetShape& sh = net.shape;
  cache.in.resize(static_cast<std::size_t>(sh.depth));
  cache.pre.resize(static_cast<std::size_t>(sh.depth));
  cache.in[0].assign(input.begin(), input.end());
  for (int l = 0; l < sh.depth; ++l) {
    const int nin = sh.layer_in(l);
    const int nout = sh.layer_out(l);
    const double* wp = net.w.data() + sh.layer_offset(l);
    const double* bp = wp + static_cast<std::size_t>(nout) * nin;
    const std::vector<double>& a = cache.in[static_cast<std::size_t>(l)];
    std::vector<double>& pre = cache.pre[static_cast<std::size_t>(l)];
    pre.resize(static_cast<std::size_t>(nout));
    for (int o = 0; o < nout; ++o)
      pre[static_cast<std::size_t>(o)] =
          bp[o] + dot4(wp + static_cast<std::size_t>(o) * nin, a.data(), nin);
    if (l + 1 < sh.depth) {
      std::vector<double>& nx = cache.in[static_cast<std::size_t>(l + 1)];
      nx.resize(static_cast<std::size_t>(nout));
      for (int o = 0; o < nout; ++o)
        nx[static_cast<std::size_t>(o)] = silu(pre[static_cast<std::size_t>(o)]);
    }
  }
}

void mlp_forward_fast(const NetParams& net, std::span<const double> input,
                      std::span<double> out, std::vector<double>& scratch) {
  const NetShape& sh = net.shape;
  const std::size_t cap = static_cast<std::size_t>(
      std::max(sh.input_dim(), std::max(sh.hidden_width, sh.output_dim())));
  scratch.resize(2 * cap);
  double* a = scratch.data();
  double* b = scratch.data() + cap;
  for (int i = 0; i < sh.input_dim(); ++i) a[i] = input[static_cast<std::size_t>(i)];
  for (int l = 0; l < sh.depth; ++l) {
    const int nin = sh.layer_in(l);
    const int nout = sh.layer_out(l);
    const double* wp = net.w.data() + sh.layer_offset(l);
    const double* bp = wp + static_cast<std::size_t>(nout) * nin;
    const bool last = l == sh.depth - 1;
    for (int o = 0; o < nout; ++o) {
      const double s = bp[o] + dot4(wp + static_cast<std::size_t>(o) * nin, a, nin);
      b[o] = last ? s : silu(s);
    }
    std::swap(a, b);
  }
  for (int i = 0; i < sh.output_dim(); ++i) out[static_cast<std::size_t>(i)] = a[i];
}

void mlp_backward(const NetParams& net, const MlpCache& cache,
                  std::span<const double> dout, std::span<double> grad,
                  std::span<double> dinput) {
  const NetShape& sh = net.shape;
  std::vector<double> delta(dout.begin(), dout.end());
  std::vector<double> prev;
  for (int l = sh.depth - 1; l >= 0; --l) {
    const int nin = sh.layer_in(l);
    const int nout = sh.layer_out(l);
    const double* wp = net.w.data() + sh.layer_offset(l);
    const std::vector<double>& a = cache.in[static_cast<std::size_t>(l)];
    if (!grad.empty()) {
      double* gw = grad.data() + sh.layer_offset(l);
      double* gb = gw + static_cast<std::size_t>(nout) * nin;
      for (int o = 0; o < nout; ++o) {
        const double d = delta[static_cast<std::size_t>(o)];
        double* grow = gw + static_cast<std::size_t>(o) * nin;
        for (int i = 0; i < nin; ++i) grow[i] += d * a[static_cast<std::size_t>(i)];
        gb[o] += d;
      }
    }
    if (l == 0 && dinput.empty()) break;
    prev.assign(static_cast<std::size_t>(nin), 0.0);
    for (int o = 0; o < nout; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      const double* row = wp + static_cast<std::size_t>(o) * nin;
      for (int i = 0; i < nin; ++i) prev[static_cast<std::size_t>(i)] += row[i] * d;
    }
    if (l == 0) {
      for (int i = 0; i < nin; ++i) dinput[static_cast<std::size_t>(i)] = prev[static_cast<std::size_t>(i)];
      break;
    }
    const std::vector<double>& pre = cache.pre[static_cast<std::size_t>(l - 1)];
    for (int i = 0; i < nin; ++i)
      prev[static_cast<std::size_t>(i)] *= silu_deriv(pre[static_cast<std::size_t>(i)]);
    delta.swap(prev);
  }
}

void mlp_jvp_from_cache(const NetParams& net, const MlpCache& cache,
                        std::span<const double> dinput,
                        std::span<double> dout) {
  const NetShape& sh = net.shape;
  std::vector<double> da(dinput.begin(), dinput.end()), db;
  for (int l = 0; l < sh.depth; ++l) {
    const int nin = sh.layer_in(l);
    const int nout = sh.layer_out(l);
    const double* wp = net.w.data() + sh.layer_offset(l);
    db.resize(static_cast<std::size_t>(nout));
    for (int o = 0; o < nout; ++o)
      db[static_cast<std::size_t>(o)] =
          dot4(wp + static_cast<std::size_t>(o) * nin, da.data(), nin);
    if (l + 1 < sh.depth) {
      const std::vector<double>& pre = cache.pre[static_cast<std::size_t>(l)];
      for (int o = 0; o < nout; ++o)
        db[static_cast<std::size_t>(o)] *= silu_deriv(pre[static_cast<std::size_t>(o)]);
    }
    da.swap(db);
  }
  for (std::size_t i = 0; i < da.size(); ++i) dout[i] = da[i];
}

Tangent predict_u(const NetParams& net, Parameterization p, const Manifold& m,
                  const Point& x, double s, double t) {
  if (static_cast<int>(x.coords.size()) != m.ambient_dim() ||
      net.shape.ambient_dim != m.ambient_dim())
    throw std::invalid_argument("predict_u: dimension mismatch");
  Tangent u{x, std::vector<double>(x.coords.size())};
  const GeoResult st = predict_u_t<double>(net, p, m, x.coords, s, t, u.coords);
  if (st == GeoResult::CutLocus)
    throw std::domain_error("predict_u: predicted endpoint outside the log domain");
  if (st == GeoResult::Degenerate)
    throw std::domain_error("predict_u: degenerate head output or s out of range");
  return u;
}

EmaState make_ema(const NetParams& params, double decay) {
  return EmaState{params.w, decay};
}

void ema_update(EmaState& ema, const NetParams& params) {
  if (ema.shadow.size() != params.w.size())
    throw std::invalid_argument("ema_update: shape mismatch");
  const double d = ema.decay;
  for (std::size_t i = 0; i < ema.shadow.size(); ++i)
    ema.shadow[i] = d * ema.shadow[i] + (1.0 - d) * params.w[i];
}

// ---------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'R', 'M', 'F', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& b, double v) {
  put_u64(b, std::bit_cast<std::uint64_t>(v));
}

struct Reader {
  const std::string& b;
  std::size_t pos = 0;
  std::uint8_t u8() {
    if (pos + 1 > b.size()) throw std::runtime_error("checkpoint truncated");
    return static_cast<std::uint8_t>(b[pos++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
};

void put_manifold(std::string& b, const Manifold& m) {
  b.push_back(static_cast<char>(m.kind()));
  switch (m.kind()) {
    case ManifoldKind::Euclidean:
    case ManifoldKind::Sphere:
      put_u32(b, static_cast<std::uint32_t>(m.ambient_dim()));
      break;
    case ManifoldKind::SO3:
      break;
    case ManifoldKind::Product:
      put_u32(b, static_cast<std::uint32_t>(m.factors().size()));
      for (const Manifold& f : m.factors()) put_manifold(b, f);
      break;
  }
}

Manifold read_manifold(Reader& r) {
  const auto kind = static_cast<ManifoldKind>(r.u8());
  switch (kind) {
    case ManifoldKind::Euclidean:
      return Manifold::euclidean(static_cast<int>(r.u32()));
    case ManifoldKind::Sphere:
      return Manifold::sphere(static_cast<int>(r.u32()));
    case ManifoldKind::SO3:
      return Manifold::so3();
    case ManifoldKind::Product: {
      const std::uint32_t n = r.u32();
      std::vector<Manifold> fs;
      fs.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) fs.push_back(read_manifold(r));
      return Manifold::product(std::move(fs));
    }
  }
  throw std::runtime_error("checkpoint: unknown manifold kind");
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string b;
  b.append(kMagic, sizeof(kMagic));
  put_manifold(b, ckpt.manifold);
  put_u32(b, static_cast<std::uint32_t>(ckpt.net.shape.ambient_dim));
  put_u32(b, static_cast<std::uint32_t>(ckpt.net.shape.hidden_width));
  put_u32(b, static_cast<std::uint32_t>(ckpt.net.shape.depth));
  put_u32(b, static_cast<std::uint32_t>(ckpt.net.shape.embed_dim));
  b.push_back(static_cast<char>(ckpt.parameterization));
  put_f64(b, ckpt.net.omega);
  put_u64(b, ckpt.seed);
  put_u64(b, ckpt.net.w.size());
  for (double v : ckpt.net.w) put_f64(b, v);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for write: " + path);
  f.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string b((std::istreambuf_iterator<char>(f)),
                std::istreambuf_iterator<char>());
  if (b.size() < sizeof(kMagic) || std::memcmp(b.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  Reader r{b, sizeof(kMagic)};
  Checkpoint ckpt;
  ckpt.manifold = read_manifold(r);
  ckpt.net.shape.ambient_dim = static_cast<int>(r.u32());
  ckpt.net.shape.hidden_width = static_cast<int>(r.u32());
  ckpt.net.shape.depth = static_cast<int>(r.u32());
  ckpt.net.shape.embed_dim = static_cast<int>(r.u32());
  ckpt.parameterization = static_cast<Parameterization>(r.u8());
  ckpt.net.omega = r.f64();
  ckpt.seed = r.u64();
  const std::uint64_t n = r.u64();
  if (n != ckpt.net.shape.param_count())
    throw std::runtime_error("checkpoint parameter count mismatch");
  ckpt.net.w.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) ckpt.net.w[static_cast<std::size_t>(i)] = r.f64();
  return ckpt;
}

}  // namespace rmflow
