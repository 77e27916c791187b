#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "rmflow/dual.hpp"

namespace rmflow {

/// Reverse-mode tape. One training step (or one gradient query) owns one
/// tape; concurrent work uses distinct tapes. Replay is a single backward
/// sweep over the node list, so gradients are bit-deterministic.
class Tape {
 public:
  struct Node {
    std::int32_t a;
    std::int32_t b;
    double pa;
    double pb;
  };

  std::int32_t leaf(double v) {
    nodes_.push_back({-1, -1, 0.0, 0.0});
    val_.push_back(v);
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }
  std::int32_t unary(double v, std::int32_t a, double pa) {
    nodes_.push_back({a, -1, pa, 0.0});
    val_.push_back(v);
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }
  std::int32_t binary(double v, std::int32_t a, double pa, std::int32_t b,
                      double pb) {
    nodes_.push_back({a, b, pa, pb});
    val_.push_back(v);
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }
  std::size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    val_.clear();
    recording_ = true;
  }

  /// d(node `loss`)/d(node i) for every node i.
  std::vector<double> adjoints(std::int32_t loss) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (loss < 0) return adj;
    adj[static_cast<std::size_t>(loss)] = 1.0;
    for (std::int32_t i = loss; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      const double g = adj[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      if (n.a >= 0) adj[static_cast<std::size_t>(n.a)] += n.pa * g;
      if (n.b >= 0) adj[static_cast<std::size_t>(n.b)] += n.pb * g;
    }
    return adj;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<double> val_;
  bool recording_ = true;
};

/// Scalar tracked on a tape. idx < 0 means constant (detached).
struct Var {
  double v = 0.0;
  std::int32_t idx = -1;
  Tape* tape = nullptr;

  Var() = default;
  Var(double x) : v(x) {}  // NOLINT: constants convert implicitly
  Var(double x, std::int32_t i, Tape* t) : v(x), idx(i), tape(t) {}

  bool tracked() const { return tape != nullptr && idx >= 0; }
};

inline Var make_leaf(Tape& tape, double v) {
  return {v, tape.leaf(v), &tape};
}

/// Stop-gradient: the value flows, the derivative does not.
inline Var sg(Var a) { return {a.v}; }
inline double value_of(Var a) { return a.v; }

namespace detail {

inline Tape* tape_of(Var a, Var b) {
  if (a.tracked()) return a.tape;
  if (b.tracked()) return b.tape;
  return nullptr;
}

inline Var record_unary(Var a, double v, double pa) {
  if (a.tracked() && a.tape->recording())
    return {v, a.tape->unary(v, a.idx, pa), a.tape};
  return {v};
}

inline Var record_binary(Var a, Var b, double v, double pa, double pb) {
  Tape* t = tape_of(a, b);
  if (t == nullptr || !t->recording()) return {v};
  const std::int32_t ia = (a.tracked() && a.tape == t) ? a.idx : -1;
  const std::int32_t ib = (b.tracked() && b.tape == t) ? b.idx : -1;
  if (ia < 0 && ib < 0) return {v};
  return {v, t->binary(v, ia, pa, ib, pb), t};
}

}  // namespace detail

inline Var operator+(Var a, Var b) {
  return detail::record_binary(a, b, a.v + b.v, 1.0, 1.0);
}
inline Var operator-(Var a, Var b) {
  return detail::record_binary(a, b, a.v - b.v, 1.0, -1.0);
}
inline Var operator-(Var a) { return detail::record_unary(a, -a.v, -1.0); }
inline Var operator*(Var a, Var b) {
  return detail::record_binary(a, b, a.v * b.v, b.v, a.v);
}
inline Var operator/(Var a, Var b) {
  const double q = a.v / b.v;
  return detail::record_binary(a, b, q, 1.0 / b.v, -q / b.v);
}

inline Var& operator+=(Var& a, Var b) { a = a + b; return a; }
inline Var& operator-=(Var& a, Var b) { a = a - b; return a; }
inline Var& operator*=(Var& a, Var b) { a = a * b; return a; }
inline Var& operator/=(Var& a, Var b) { a = a / b; return a; }

inline bool operator<(Var a, Var b) { return a.v < b.v; }
inline bool operator>(Var a, Var b) { return a.v > b.v; }
inline bool operator<=(Var a, Var b) { return a.v <= b.v; }
inline bool operator>=(Var a, Var b) { return a.v >= b.v; }
inline bool operator==(Var a, Var b) { return a.v == b.v; }

inline Var sqrt(Var a) {
  const double s = std::sqrt(a.v);
  return detail::record_unary(a, s, s > 0.0 ? 0.5 / s : 0.0);
}
inline Var sin(Var a) { return detail::record_unary(a, std::sin(a.v), std::cos(a.v)); }
inline Var cos(Var a) { return detail::record_unary(a, std::cos(a.v), -std::sin(a.v)); }
inline Var exp(Var a) {
  const double e = std::exp(a.v);
  return detail::record_unary(a, e, e);
}
inline Var log(Var a) { return detail::record_unary(a, std::log(a.v), 1.0 / a.v); }
inline Var tanh(Var a) {
  const double t = std::tanh(a.v);
  return detail::record_unary(a, t, 1.0 - t * t);
}
inline Var atan2(Var y, Var x) {
  const double den = x.v * x.v + y.v * y.v;
  return detail::record_binary(y, x, std::atan2(y.v, x.v), x.v / den,
                               -y.v / den);
}
inline Var acos(Var a) {
  const double s = std::sqrt(1.0 - a.v * a.v);
  return detail::record_unary(a, std::acos(a.v), s > 0.0 ? -1.0 / s : 0.0);
}
inline Var abs(Var a) {
  if (a.v > 0.0) return detail::record_unary(a, a.v, 1.0);
  if (a.v < 0.0) return detail::record_unary(a, -a.v, -1.0);
  return detail::record_unary(a, 0.0, 0.0);
}
inline Var min(Var a, Var b) {
  if (a.v < b.v) return detail::record_binary(a, b, a.v, 1.0, 0.0);
  if (b.v < a.v) return detail::record_binary(a, b, b.v, 0.0, 1.0);
  return detail::record_binary(a, b, a.v, 0.0, 0.0);
}
inline Var max(Var a, Var b) {
  if (a.v > b.v) return detail::record_binary(a, b, a.v, 1.0, 0.0);
  if (b.v > a.v) return detail::record_binary(a, b, b.v, 0.0, 1.0);
  return detail::record_binary(a, b, a.v, 0.0, 0.0);
}

/// Suspends recording on a tape for the lifetime of the guard. Everything
/// computed inside contributes nothing to any gradient.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGradGuard() { tape_.set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

/// d(loss)/d(param) for each listed parameter. Parameters never used by
/// the loss get gradient zero.
inline std::vector<double> grad(const Tape& tape, Var loss,
                                std::span<const Var> params) {
  const std::vector<double> adj = tape.adjoints(loss.tracked() ? loss.idx : -1);
  std::vector<double> g(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].tracked())
      g[i] = adj[static_cast<std::size_t>(params[i].idx)];
  return g;
}

/// One forward dual pass: value f(x) and directional derivative J_f(x)·dx.
template <class F>
std::pair<std::vector<double>, std::vector<double>> jvp(
    F&& f, std::span<const double> x, std::span<const double> dx) {
  std::vector<Dual> in(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) in[i] = Dual(x[i], dx[i]);
  std::vector<Dual> out = f(std::span<const Dual>(in));
  std::vector<double> v(out.size()), d(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    v[i] = out[i].v;
    d[i] = out[i].d;
  }
  return {std::move(v), std::move(d)};
}

}  // namespace rmflow
