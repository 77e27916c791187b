#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rmflow/autodiff.hpp"
#include "rmflow/geometry.hpp"
#include "rmflow/rng.hpp"

using namespace rmflow;

TEST_CASE("dual arithmetic follows the epsilon rule") {
  const Dual a(2.0, 3.0), b(5.0, -1.0);
  const Dual p = a * b;
  CHECK(p.v == 10.0);
  CHECK(p.d == 2.0 * (-1.0) + 3.0 * 5.0);
  const Dual q = a / b;
  CHECK(q.v == doctest::Approx(0.4));
  CHECK(q.d == doctest::Approx((3.0 * 5.0 - 2.0 * (-1.0)) / 25.0));

  // exact on polynomials
  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    const double x = rng.normal(), dx = rng.normal();
    const Dual xd(x, dx);
    const Dual f = xd * xd * xd - Dual(2.0) * xd + Dual(7.0);
    CHECK(f.v == doctest::Approx(x * x * x - 2 * x + 7).epsilon(1e-14));
    CHECK(f.d == doctest::Approx((3 * x * x - 2) * dx).epsilon(1e-13));
  }
}

TEST_CASE("jvp basics") {
  // f(x) = x^2 at 3 with unit tangent
  auto sq = [](std::span<const Dual> in) {
    return std::vector<Dual>{in[0] * in[0]};
  };
  const std::vector<double> x{3.0}, d{1.0};
  auto [v, dv] = jvp(sq, x, d);
  CHECK(v[0] == 9.0);
  CHECK(dv[0] == 6.0);

  // linear map: directional derivative is A d
  Rng rng(2);
  std::vector<double> A(12);
  rng.fill_normal(A);
  auto lin = [&](std::span<const Dual> in) {
    std::vector<Dual> out(3);
    for (int i = 0; i < 3; ++i) {
      Dual s(0.0);
      for (int j = 0; j < 4; ++j) s += Dual(A[static_cast<std::size_t>(4 * i + j)]) * in[static_cast<std::size_t>(j)];
      out[static_cast<std::size_t>(i)] = s;
    }
    return out;
  };
  const std::vector<double> xx = rng.normal_vec(4), dd = rng.normal_vec(4);
  auto [lv, ld] = jvp(lin, xx, dd);
  for (int i = 0; i < 3; ++i) {
    double want = 0;
    for (int j = 0; j < 4; ++j) want += A[static_cast<std::size_t>(4 * i + j)] * dd[static_cast<std::size_t>(j)];
    CHECK(ld[static_cast<std::size_t>(i)] == doctest::Approx(want).epsilon(1e-13));
  }
}

TEST_CASE("jvp through the sphere exp matches finite differences") {
  const Manifold s3 = Manifold::sphere(3);
  const std::vector<double> x{1, 0, 0};
  const std::vector<double> v{0, 1.5707963267948966, 0};
  // vary v along e2, look at the exp output
  auto f = [&](std::span<const Dual> vin) {
    std::vector<Dual> xd(3), out(3);
    for (int i = 0; i < 3; ++i) xd[static_cast<std::size_t>(i)] = Dual(x[static_cast<std::size_t>(i)]);
    geo::exp_map<Dual>(s3, xd, vin, std::span<Dual>(out));
    return out;
  };
  const std::vector<double> dir{0, 1, 0};
  auto [val, dv] = jvp(f, v, dir);
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> vp = v, vm = v, op(3), om(3);
    vp[1] += h;
    vm[1] -= h;
    geo::exp_map<double>(s3, x, vp, std::span<double>(op));
    geo::exp_map<double>(s3, x, vm, std::span<double>(om));
    const double fd = (op[static_cast<std::size_t>(i)] - om[static_cast<std::size_t>(i)]) / (2 * h);
    CHECK(dv[static_cast<std::size_t>(i)] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("tape gradients") {
  // loss = |theta|^2 / 2  ->  grad = theta
  Tape tape;
  Rng rng(3);
  std::vector<Var> th(5);
  std::vector<double> vals(5);
  for (int i = 0; i < 5; ++i) {
    vals[static_cast<std::size_t>(i)] = rng.normal();
    th[static_cast<std::size_t>(i)] = make_leaf(tape, vals[static_cast<std::size_t>(i)]);
  }
  Var loss(0.0);
  for (int i = 0; i < 5; ++i) loss += th[static_cast<std::size_t>(i)] * th[static_cast<std::size_t>(i)];
  loss = loss * Var(0.5);
  const std::vector<double> g = grad(tape, loss, th);
  for (int i = 0; i < 5; ++i) CHECK(g[static_cast<std::size_t>(i)] == doctest::Approx(vals[static_cast<std::size_t>(i)]));

  // constant loss -> zero gradient; detached parameter -> zero, no error
  Tape t2;
  std::vector<Var> p{make_leaf(t2, 1.0), make_leaf(t2, 2.0)};
  const Var c = p[0] * Var(0.0) + Var(3.0);  // p[1] never used
  const std::vector<double> g2 = grad(t2, c, p);
  CHECK(g2[0] == 0.0);
  CHECK(g2[1] == 0.0);
}

TEST_CASE("tape gradient of a small MLP matches finite differences") {
  Rng rng(4);
  const int nin = 3, nh = 4;
  std::vector<double> w(static_cast<std::size_t>(nh * nin + nh + nh));
  rng.fill_normal(w);
  const std::vector<double> x = rng.normal_vec(nin);

  auto eval = [&](const std::vector<double>& params) {
    double out = 0;
    std::vector<double> h(static_cast<std::size_t>(nh));
    for (int o = 0; o < nh; ++o) {
      double s = params[static_cast<std::size_t>(nh * nin + o)];
      for (int i = 0; i < nin; ++i)
        s += params[static_cast<std::size_t>(o * nin + i)] * x[static_cast<std::size_t>(i)];
      h[static_cast<std::size_t>(o)] = std::tanh(s);
    }
    for (int o = 0; o < nh; ++o)
      out += params[static_cast<std::size_t>(nh * nin + nh + o)] * h[static_cast<std::size_t>(o)];
    return out;
  };

  Tape tape;
  std::vector<Var> pv(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) pv[i] = make_leaf(tape, w[i]);
  Var out(0.0);
  {
    std::vector<Var> h(static_cast<std::size_t>(nh));
    for (int o = 0; o < nh; ++o) {
      Var s = pv[static_cast<std::size_t>(nh * nin + o)];
      for (int i = 0; i < nin; ++i)
        s += pv[static_cast<std::size_t>(o * nin + i)] * Var(x[static_cast<std::size_t>(i)]);
      h[static_cast<std::size_t>(o)] = tanh(s);
    }
    for (int o = 0; o < nh; ++o)
      out += pv[static_cast<std::size_t>(nh * nin + nh + o)] * h[static_cast<std::size_t>(o)];
  }
  const std::vector<double> g = grad(tape, out, pv);

  const double h = 1e-6;
  for (std::size_t i = 0; i < w.size(); ++i) {
    std::vector<double> wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    const double fd = (eval(wp) - eval(wm)) / (2 * h);
    CHECK(g[i] == doctest::Approx(fd).epsilon(
        std::max(1e-5, 1e-5 * std::abs(fd))));
  }
}

TEST_CASE("stop-gradient semantics") {
  // loss = (theta - sg(theta))^2 -> value 0, gradient 0
  Tape tape;
  Var th = make_leaf(tape, 2.0);
  Var d = th - sg(th);
  Var loss = d * d;
  CHECK(loss.v == 0.0);
  std::vector<Var> ps{th};
  CHECK(grad(tape, loss, ps)[0] == 0.0);

  // loss = theta * sg(theta) -> gradient = value of theta
  Tape t2;
  Var th2 = make_leaf(t2, 1.7);
  Var l2 = th2 * sg(th2);
  std::vector<Var> ps2{th2};
  CHECK(grad(t2, l2, ps2)[0] == doctest::Approx(1.7));
}

TEST_CASE("no_grad region contributes nothing to any tape") {
  Tape tape;
  Var th = make_leaf(tape, 3.0);
  Var frozen(0.0);
  {
    NoGradGuard guard(tape);
    frozen = th * th + Var(1.0);  // computed but untracked
    CHECK_FALSE(frozen.tracked());
  }
  Var loss = (th - frozen) * (th - frozen);
  std::vector<Var> ps{th};
  const double g = grad(tape, loss, ps)[0];
  CHECK(g == doctest::Approx(2.0 * (3.0 - 10.0)));
}

TEST_CASE("jvp and grad agree on directional derivatives") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<double> x = rng.normal_vec(6);
    const std::vector<double> dir = rng.normal_vec(6);
    auto fd = [](std::span<const Dual> in) {
      Dual s(0.0);
      for (std::size_t i = 0; i + 1 < in.size(); ++i)
        s += sin(in[i]) * in[i + 1];
      s += tanh(in[0]) * sqrt(in[2] * in[2] + Dual(0.5));
      return std::vector<Dual>{s};
    };
    auto [v, dv] = jvp(fd, x, dir);
    Tape tape;
    std::vector<Var> xv(6);
    for (int i = 0; i < 6; ++i) xv[static_cast<std::size_t>(i)] = make_leaf(tape, x[static_cast<std::size_t>(i)]);
    Var s(0.0);
    for (int i = 0; i + 1 < 6; ++i) s += sin(xv[static_cast<std::size_t>(i)]) * xv[static_cast<std::size_t>(i + 1)];
    s += tanh(xv[0]) * sqrt(xv[2] * xv[2] + Var(0.5));
    const std::vector<double> g = grad(tape, s, xv);
    double dot = 0;
    for (int i = 0; i < 6; ++i) dot += g[static_cast<std::size_t>(i)] * dir[static_cast<std::size_t>(i)];
    CHECK(std::abs(dot - dv[0]) < 1e-7);
  }
}

TEST_CASE("tape replay is bit-deterministic") {
  auto run = [] {
    Tape tape;
    Rng rng(77);
    std::vector<Var> xv(8);
    for (int i = 0; i < 8; ++i) xv[static_cast<std::size_t>(i)] = make_leaf(tape, rng.normal());
    Var s(0.0);
    for (int i = 0; i < 8; ++i) s += exp(xv[static_cast<std::size_t>(i)] * Var(0.1)) * sin(xv[static_cast<std::size_t>(i)]);
    return grad(tape, s, xv);
  };
  const auto a = run(), b = run();
  for (int i = 0; i < 8; ++i) CHECK(a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(i)]);
}

TEST_CASE("max/min use the zero subgradient at ties") {
  Tape tape;
  Var a = make_leaf(tape, 1.0), b = make_leaf(tape, 1.0);
  Var m = max(a, b);
  std::vector<Var> ps{a, b};
  const auto g = grad(tape, m, ps);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(max(Dual(1.0, 2.0), Dual(1.0, 5.0)).d == 0.0);
}
