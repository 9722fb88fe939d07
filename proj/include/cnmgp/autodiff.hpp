#pragma once

// Scalar reverse-mode automatic differentiation.
//
// Every numeric routine in the library is a template over its scalar type and
// is instantiated with either `double` or `ad::Var`. A Var carries its double
// value plus an index into the thread's active Tape; constants (index -1) are
// never recorded. Forward values of a Var computation are bit-identical to the
// same computation in double, because each operation evaluates the identical
// floating-point expression in the identical order.
//
// Fused products (dot, dot_sub, sum_squares) record a single n-ary node, which
// keeps the tape small for the triangular solves and factorizations that
// dominate ELBO evaluation.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace cnmgp {

inline double value(double x) noexcept { return x; }

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

/// c - sum_k a_k b_k, accumulated left to right starting from c.
inline double dot_sub(double c, std::span<const double> a, std::span<const double> b) noexcept {
  double s = c;
  for (std::size_t k = 0; k < a.size(); ++k) s -= a[k] * b[k];
  return s;
}

inline double sum_squares(std::span<const double> a) noexcept {
  double s = 0.0;
  for (double x : a) s += x * x;
  return s;
}

namespace ad {

using Index = std::int32_t;

/// Wengert list. Node i owns the edge range [offsets_[i], offsets_[i+1]).
class Tape {
 public:
  Tape() { offsets_.push_back(0); }

  Index new_leaf() { return close_node(); }

  void push_edge(Index parent, double weight) {
    parents_.push_back(parent);
    weights_.push_back(weight);
  }
  std::size_t pending_edges() const noexcept { return parents_.size() - offsets_.back(); }
  Index close_node() {
    offsets_.push_back(parents_.size());
    return static_cast<Index>(offsets_.size() - 2);
  }

  std::size_t size() const noexcept { return offsets_.size() - 1; }
  std::size_t edge_count() const noexcept { return parents_.size(); }

  void clear() {
    offsets_.resize(1);
    parents_.clear();
    weights_.clear();
  }

  /// Reverse sweep seeded with d(output)/d(output) = 1.
  std::vector<double> adjoints(Index output) const {
    std::vector<double> adj(size(), 0.0);
    if (output < 0) return adj;
    adj[static_cast<std::size_t>(output)] = 1.0;
    for (Index i = output; i >= 0; --i) {
      const double a = adj[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const std::size_t end = offsets_[static_cast<std::size_t>(i) + 1];
      for (std::size_t e = offsets_[static_cast<std::size_t>(i)]; e < end; ++e) {
        adj[static_cast<std::size_t>(parents_[e])] += a * weights_[e];
      }
    }
    return adj;
  }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<Index> parents_;
  std::vector<double> weights_;
};

namespace detail {
inline thread_local Tape* active_tape = nullptr;

inline Tape& tape() {
  if (active_tape == nullptr) throw std::logic_error("ad: no active tape for a variable operation");
  return *active_tape;
}
}  // namespace detail

/// Binds a tape to the current thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& t) : previous_(detail::active_tape) { detail::active_tape = &t; }
  ~TapeScope() { detail::active_tape = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

struct Var {
  double val = 0.0;
  Index id = -1;

  Var() = default;
  Var(double v) : val(v) {}  // NOLINT(google-explicit-constructor): constants mix freely
  Var(double v, Index index) : val(v), id(index) {}

  bool is_constant() const noexcept { return id < 0; }

  static Var leaf(double v) { return Var(v, detail::tape().new_leaf()); }

  Var& operator+=(const Var& o);
  Var& operator-=(const Var& o);
  Var& operator*=(const Var& o);
  Var& operator/=(const Var& o);
};

inline double value(const Var& x) noexcept { return x.val; }

namespace detail {
inline Var unary(double v, const Var& a, double da) {
  if (a.id < 0) return Var(v);
  Tape& t = tape();
  t.push_edge(a.id, da);
  return Var(v, t.close_node());
}

inline Var binary(double v, const Var& a, double da, const Var& b, double db) {
  if (a.id < 0 && b.id < 0) return Var(v);
  Tape& t = tape();
  if (a.id >= 0) t.push_edge(a.id, da);
  if (b.id >= 0) t.push_edge(b.id, db);
  return Var(v, t.close_node());
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::binary(a.val + b.val, a, 1.0, b, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return detail::binary(a.val - b.val, a, 1.0, b, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return detail::binary(a.val * b.val, a, b.val, b, a.val); }
inline Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.val;
  const double q = a.val / b.val;
  return detail::binary(q, a, inv, b, -q * inv);
}
inline Var operator-(const Var& a) { return detail::unary(-a.val, a, -1.0); }
inline Var operator+(const Var& a) { return a; }

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline Var exp(const Var& a) {
  const double e = std::exp(a.val);
  return detail::unary(e, a, e);
}
inline Var log(const Var& a) { return detail::unary(std::log(a.val), a, 1.0 / a.val); }
inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.val);
  return detail::unary(s, a, 0.5 / s);
}

inline bool isfinite(const Var& a) { return std::isfinite(a.val); }

inline Var dot(std::span<const Var> a, std::span<const Var> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k].val * b[k].val;
  Tape* t = detail::active_tape;
  if (t == nullptr) return Var(s);
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].id >= 0) t->push_edge(a[k].id, b[k].val);
    if (b[k].id >= 0) t->push_edge(b[k].id, a[k].val);
  }
  if (t->pending_edges() == 0) return Var(s);
  return Var(s, t->close_node());
}

inline Var dot(std::span<const Var> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k].val * b[k];
  Tape* t = detail::active_tape;
  if (t == nullptr) return Var(s);
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].id >= 0) t->push_edge(a[k].id, b[k]);
  }
  if (t->pending_edges() == 0) return Var(s);
  return Var(s, t->close_node());
}

inline Var dot(std::span<const double> a, std::span<const Var> b) { return dot(b, a); }

inline Var dot_sub(const Var& c, std::span<const Var> a, std::span<const Var> b) {
  double s = c.val;
  for (std::size_t k = 0; k < a.size(); ++k) s -= a[k].val * b[k].val;
  Tape* t = detail::active_tape;
  if (t == nullptr) return Var(s);
  if (c.id >= 0) t->push_edge(c.id, 1.0);
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].id >= 0) t->push_edge(a[k].id, -b[k].val);
    if (b[k].id >= 0) t->push_edge(b[k].id, -a[k].val);
  }
  if (t->pending_edges() == 0) return Var(s);
  return Var(s, t->close_node());
}

inline Var sum_squares(std::span<const Var> a) {
  double s = 0.0;
  for (const Var& x : a) s += x.val * x.val;
  Tape* t = detail::active_tape;
  if (t == nullptr) return Var(s);
  for (const Var& x : a) {
    if (x.id >= 0) t->push_edge(x.id, 2.0 * x.val);
  }
  if (t->pending_edges() == 0) return Var(s);
  return Var(s, t->close_node());
}

}  // namespace ad

template <class T>
inline constexpr bool is_var_v = std::is_same_v<std::remove_cvref_t<T>, ad::Var>;

/// Var if any argument type is Var, else double.
template <class... Ts>
using promote_t = std::conditional_t<(is_var_v<Ts> || ...), ad::Var, double>;

}  // namespace cnmgp
