#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rmflow/model.hpp"

using namespace rmflow;

namespace {

double diff(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Network whose raw output is a constant vector: zero weights, head bias.
NetParams const_net(const NetShape& sh, std::span<const double> c) {
  NetParams net;
  net.shape = sh;
  net.omega = 0.02;
  net.w.assign(sh.param_count(), 0.0);
  double* head = net.w.data() + sh.layer_offset(sh.depth - 1);
  double* bias = head + static_cast<std::size_t>(sh.layer_out(sh.depth - 1)) *
                            sh.layer_in(sh.depth - 1);
  for (int i = 0; i < sh.output_dim(); ++i) bias[i] = c[static_cast<std::size_t>(i)];
  return net;
}

}  // namespace

TEST_CASE("time embedding closed form") {
  std::vector<double> e(8);
  time_embed<double>(0.0, 0.02, 8, std::span<double>(e));
  for (int k = 0; k < 4; ++k) {
    CHECK(e[static_cast<std::size_t>(2 * k)] == 0.0);
    CHECK(e[static_cast<std::size_t>(2 * k + 1)] == 1.0);
  }

  // derivative magnitude bound scales linearly in omega: 30 / 0.02 = 1500
  auto max_deriv_bound = [](double omega, int dim) {
    return omega * std::pow(2.0, dim / 2 - 1);
  };
  CHECK(max_deriv_bound(30.0, 8) / max_deriv_bound(0.02, 8) ==
        doctest::Approx(1500.0));

  // dual derivative matches omega 2^k cos / -sin analytically
  const double t = 0.37, omega = 0.25;
  std::vector<Dual> ed(8);
  time_embed<Dual>(Dual(t, 1.0), omega, 8, std::span<Dual>(ed));
  double f = omega;
  for (int k = 0; k < 4; ++k) {
    CHECK(ed[static_cast<std::size_t>(2 * k)].d == doctest::Approx(f * std::cos(f * t)).epsilon(1e-12));
    CHECK(ed[static_cast<std::size_t>(2 * k + 1)].d == doctest::Approx(-f * std::sin(f * t)).epsilon(1e-12));
    f *= 2;
  }
}

TEST_CASE("mlp forward basics") {
  NetShape sh;
  sh.ambient_dim = 3;
  sh.hidden_width = 8;
  sh.depth = 3;
  sh.embed_dim = 4;

  // zero weights -> zero output
  NetParams zero;
  zero.shape = sh;
  zero.w.assign(sh.param_count(), 0.0);
  std::vector<double> in(static_cast<std::size_t>(sh.input_dim()), 0.3), out(3);
  mlp_forward<double>(zero, in, std::span<double>(out));
  for (double v : out) CHECK(v == 0.0);

  // output dimension equals the ambient dimension
  CHECK(sh.output_dim() == 3);

  // fast path, cached path and the templated path agree
  NetParams net = init_net(sh, 0.02, 9);
  Rng rng(1);
  std::vector<double> x = rng.normal_vec(sh.input_dim());
  std::vector<double> o1(3), o2(3), scratch;
  mlp_forward<double>(net, x, std::span<double>(o1));
  mlp_forward_fast(net, x, std::span<double>(o2), scratch);
  MlpCache cache;
  mlp_forward_cached(net, x, cache);
  CHECK(diff(o1, o2) < 1e-15);
  CHECK(diff(o1, cache.output()) < 1e-15);
}

TEST_CASE("jvp from cache matches the dual forward and finite differences") {
  NetShape sh;
  sh.ambient_dim = 2;
  sh.hidden_width = 16;
  sh.depth = 3;
  sh.embed_dim = 8;
  NetParams net = init_net(sh, 0.7, 4);
  Rng rng(8);
  const std::vector<double> in = rng.normal_vec(sh.input_dim());
  const std::vector<double> din = rng.normal_vec(sh.input_dim());

  MlpCache cache;
  mlp_forward_cached(net, in, cache);
  std::vector<double> d1(2);
  mlp_jvp_from_cache(net, cache, din, std::span<double>(d1));

  std::vector<Dual> ind(in.size()), outd(2);
  for (std::size_t i = 0; i < in.size(); ++i) ind[i] = Dual(in[i], din[i]);
  mlp_forward<Dual>(net, ind, std::span<Dual>(outd));
  for (int i = 0; i < 2; ++i)
    CHECK(d1[static_cast<std::size_t>(i)] == doctest::Approx(outd[static_cast<std::size_t>(i)].d).epsilon(1e-11));

  // and against central differences
  const double h = 1e-6;
  std::vector<double> inp(in), inm(in), op(2), om(2);
  for (std::size_t i = 0; i < in.size(); ++i) {
    inp[i] = in[i] + h * din[i];
    inm[i] = in[i] - h * din[i];
  }
  mlp_forward<double>(net, inp, std::span<double>(op));
  mlp_forward<double>(net, inm, std::span<double>(om));
  for (int i = 0; i < 2; ++i)
    CHECK(d1[static_cast<std::size_t>(i)] ==
          doctest::Approx((op[static_cast<std::size_t>(i)] - om[static_cast<std::size_t>(i)]) / (2 * h)).epsilon(1e-5));
}

TEST_CASE("mlp backward matches finite differences") {
  NetShape sh;
  sh.ambient_dim = 2;
  sh.hidden_width = 5;
  sh.depth = 2;
  sh.embed_dim = 4;
  NetParams net = init_net(sh, 0.3, 5);
  Rng rng(9);
  const std::vector<double> in = rng.normal_vec(sh.input_dim());
  const std::vector<double> dout = rng.normal_vec(2);

  MlpCache cache;
  mlp_forward_cached(net, in, cache);
  std::vector<double> grad(net.w.size(), 0.0), dinput(in.size(), 0.0);
  mlp_backward(net, cache, dout, std::span<double>(grad), std::span<double>(dinput));

  auto scalar = [&](const NetParams& p, std::span<const double> input) {
    std::vector<double> o(2);
    mlp_forward<double>(p, input, std::span<double>(o));
    return o[0] * dout[0] + o[1] * dout[1];
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < net.w.size(); ++i) {
    NetParams p = net;
    p.w[i] += h;
    const double fp = scalar(p, in);
    p.w[i] -= 2 * h;
    const double fm = scalar(p, in);
    CHECK(grad[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-4));
  }
  for (std::size_t i = 0; i < in.size(); ++i) {
    std::vector<double> ip = in, im = in;
    ip[i] += h;
    im[i] -= h;
    CHECK(dinput[i] ==
          doctest::Approx((scalar(net, ip) - scalar(net, im)) / (2 * h)).epsilon(1e-4));
  }
}

TEST_CASE("predicted velocities are tangent (v-prediction)") {
  const Manifold s5 = Manifold::sphere(5);
  NetShape sh;
  sh.ambient_dim = 5;
  sh.hidden_width = 16;
  sh.depth = 3;
  sh.embed_dim = 8;
  NetParams net = init_net(sh, 0.02, 6);
  Rng rng(10);
  for (int k = 0; k < 1000; ++k) {
    const Point x = random_point(s5, rng);
    const double s = rng.uniform(), t = rng.uniform();
    const Tangent u = predict_u(net, Parameterization::VPred, s5, x, s, t);
    CHECK(std::abs(geo::dot<double>(x.coords, u.coords)) < 1e-9);
  }
}

TEST_CASE("x1 prediction semantics") {
  const Manifold s3 = Manifold::sphere(3);
  NetShape sh;
  sh.ambient_dim = 3;
  sh.hidden_width = 4;
  sh.depth = 2;
  sh.embed_dim = 4;

  // constant network output y*: u = log_x(y*) / (1 - s)
  std::vector<double> ystar{0.6, 0.0, 0.8};
  NetParams net = const_net(sh, ystar);
  Rng rng(11);
  for (int k = 0; k < 20; ++k) {
    const Point x = random_point(s3, rng);
    const double s = rng.uniform(0.0, 0.9), t = rng.uniform(s, 1.0);
    const Tangent u = predict_u(net, Parameterization::X1Pred, s3, x, s, t);
    const Tangent lg = log_map(s3, x, Point{s3, ystar});
    for (int i = 0; i < 3; ++i)
      CHECK(u.coords[static_cast<std::size_t>(i)] ==
            doctest::Approx(lg.coords[static_cast<std::size_t>(i)] / (1.0 - s)).epsilon(1e-10));
    // at s=0 this is the geodesic average velocity to y* over unit time
    if (k == 0) {
      const Tangent u0 = predict_u(net, Parameterization::X1Pred, s3, x, 0.0, 1.0);
      CHECK(diff(u0.coords, lg.coords) < 1e-12);
    }
  }

  // mapped endpoint lands on the manifold for a generic network
  NetParams rnd = init_net(sh, 0.02, 12);
  for (int k = 0; k < 200; ++k) {
    const Point x = random_point(s3, rng);
    std::vector<double> in(static_cast<std::size_t>(sh.input_dim())), raw(3), x1(3);
    build_net_input<double>(rnd, std::span<const double>(x.coords), rng.uniform(), rng.uniform(), std::span<double>(in));
    mlp_forward<double>(rnd, in, std::span<double>(raw));
    REQUIRE(map_to_manifold<double>(s3, raw, std::span<double>(x1)) == GeoResult::Ok);
    CHECK(is_valid_point(s3, x1, 1e-9));
  }

  // s at 1 is a domain error
  const Point x = random_point(s3, rng);
  CHECK_THROWS_AS((void)predict_u(net, Parameterization::X1Pred, s3, x, 1.0, 1.0),
                  std::domain_error);
}

TEST_CASE("SO3 head mapping produces rotations") {
  const Manifold so3 = Manifold::so3();
  Rng rng(13);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> raw = rng.normal_vec(9), out(9);
    REQUIRE(map_to_manifold<double>(so3, raw, std::span<double>(out)) == GeoResult::Ok);
    CHECK(is_valid_point(so3, out, 1e-9));
  }
}

TEST_CASE("xt prediction boundary branch") {
  const Manifold s3 = Manifold::sphere(3);
  NetShape sh;
  sh.ambient_dim = 3;
  sh.hidden_width = 8;
  sh.depth = 2;
  sh.embed_dim = 4;
  NetParams net = init_net(sh, 0.02, 14);
  Rng rng(15);
  const Point x = random_point(s3, rng);
  const double s = 0.4;
  // t == s falls back to the projected raw output
  const Tangent u = predict_u(net, Parameterization::XtPred, s3, x, s, s);
  std::vector<double> in(static_cast<std::size_t>(sh.input_dim())), raw(3), proj(3);
  build_net_input<double>(net, std::span<const double>(x.coords), s, s, std::span<double>(in));
  mlp_forward<double>(net, in, std::span<double>(raw));
  geo::proj<double>(s3, x.coords, raw, std::span<double>(proj));
  CHECK(diff(u.coords, proj) < 1e-14);
}

TEST_CASE("two-time conditioning is non-degenerate") {
  const Manifold s3 = Manifold::sphere(3);
  NetShape sh;
  sh.ambient_dim = 3;
  sh.hidden_width = 32;
  sh.depth = 3;
  sh.embed_dim = 16;
  NetParams net = init_net(sh, 0.5, 16);
  Rng rng(17);
  const Point x = random_point(s3, rng);
  const Tangent a = predict_u(net, Parameterization::VPred, s3, x, 0.2, 0.8);
  const Tangent b = predict_u(net, Parameterization::VPred, s3, x, 0.2, 0.3);
  CHECK(diff(a.coords, b.coords) > 1e-8);
}

TEST_CASE("low-frequency embeddings bound the time derivative statistically") {
  const Manifold s3 = Manifold::sphere(3);
  NetShape sh;
  sh.ambient_dim = 3;
  sh.hidden_width = 32;
  sh.depth = 3;
  sh.embed_dim = 16;
  const NetParams slow = init_net(sh, 0.02, 18);
  NetParams fast = slow;
  fast.omega = 30.0;
  Rng rng(19);
  double max_slow = 0, max_fast = 0;
  for (int k = 0; k < 256; ++k) {
    std::vector<Dual> xd(3), ud(3);
    const Point x = random_point(s3, rng);
    for (int i = 0; i < 3; ++i) xd[static_cast<std::size_t>(i)] = Dual(x.coords[static_cast<std::size_t>(i)]);
    const double s = rng.uniform(0.0, 0.9);
    const double t = rng.uniform(s, 1.0);
    for (const bool use_fast : {false, true}) {
      REQUIRE(predict_u_t<Dual>(use_fast ? fast : slow, Parameterization::VPred,
                                s3, xd, Dual(s), Dual(t, 1.0),
                                std::span<Dual>(ud)) == GeoResult::Ok);
      double n = 0;
      for (auto& e : ud) n += e.d * e.d;
      (use_fast ? max_fast : max_slow) = std::max(use_fast ? max_fast : max_slow, std::sqrt(n));
    }
  }
  CHECK(max_slow <= max_fast);
}

TEST_CASE("ema update") {
  NetShape sh;
  sh.ambient_dim = 2;
  sh.hidden_width = 2;
  sh.depth = 2;
  sh.embed_dim = 2;
  NetParams net = init_net(sh, 0.02, 20);

  EmaState e0 = make_ema(net, 0.0);
  NetParams moved = net;
  for (auto& w : moved.w) w += 1.0;
  ema_update(e0, moved);
  CHECK(diff(e0.shadow, moved.w) == 0.0);  // decay 0 copies params

  EmaState e1 = make_ema(net, 1.0);
  ema_update(e1, moved);
  CHECK(diff(e1.shadow, net.w) == 0.0);  // decay 1 never moves

  // constant params for n steps: shadow = p0 + decay^n (s0 - p0)
  const double decay = 0.9;
  EmaState e = make_ema(net, decay);
  const std::vector<double> s0 = e.shadow;
  const int n = 17;
  for (int k = 0; k < n; ++k) ema_update(e, moved);
  const double dn = std::pow(decay, n);
  for (std::size_t i = 0; i < e.shadow.size(); ++i)
    CHECK(e.shadow[i] ==
          doctest::Approx(moved.w[i] + dn * (s0[i] - moved.w[i])).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip") {
  NetShape sh;
  sh.ambient_dim = 12;
  sh.hidden_width = 8;
  sh.depth = 3;
  sh.embed_dim = 4;
  Checkpoint ck;
  ck.manifold = Manifold::product({Manifold::sphere(3), Manifold::so3()});
  ck.parameterization = Parameterization::X1Pred;
  ck.net = init_net(sh, 0.37, 21);
  ck.seed = 123456789ULL;

  const std::string path =
      (std::filesystem::temp_directory_path() / "rmflow_test.rmfckpt").string();
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.manifold == ck.manifold);
  CHECK(back.parameterization == ck.parameterization);
  CHECK(back.seed == ck.seed);
  CHECK(back.net.omega == ck.net.omega);
  REQUIRE(back.net.w.size() == ck.net.w.size());
  CHECK(diff(back.net.w, ck.net.w) == 0.0);

  // corrupting the magic is rejected
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "NOTACKPT";
  }
  CHECK_THROWS((void)load_checkpoint(path));
  std::filesystem::remove(path);
}
