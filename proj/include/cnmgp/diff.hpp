#pragma once

// Flat parameter vectors and reverse-mode gradients of the seeded ELBO.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cnmgp/autodiff.hpp"
#include "cnmgp/elbo.hpp"
#include "cnmgp/model.hpp"

namespace cnmgp {

/// Optimizer coordinates. `plain` uses the stored (m, log-diagonal factor)
/// values directly. `whitened` expresses every variational block relative to
/// the Cholesky factor L of its prior, m = L·m̃ and S = L·S̃, where q(w) is
/// whitened against the Gibbs prior at ℓ(Z) = exp(m^v). Both describe the same
/// family and the same ELBO; whitened coordinates are far better conditioned.
enum class Coordinates { plain, whitened };

inline std::string to_string(Coordinates c) { return c == Coordinates::plain ? "plain" : "whitened"; }

inline Coordinates parse_coordinates(const std::string& s) {
  if (s == "plain") return Coordinates::plain;
  if (s == "whitened") return Coordinates::whitened;
  throw ConfigError("unknown coordinates '" + s + "' (expected plain or whitened)");
}

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Trainable parameters in unconstrained form. `frozen` holds the state the
/// vector was packed from; it supplies structure and non-trainable values.
struct ParamVector {
  Vector values;
  std::vector<Segment> layout;
  std::shared_ptr<const ModelState> frozen;
  Coordinates coordinates = Coordinates::plain;

  const Segment* segment_at(std::size_t index) const {
    for (const auto& s : layout)
      if (index >= s.offset && index < s.offset + s.size) return &s;
    return nullptr;
  }
};

namespace detail {

/// Product of two lower-triangular matrices.
template <class T>
Mat<T> lower_product(const Mat<T>& a, const Mat<T>& b) {
  const std::size_t n = a.rows();
  const Mat<T> bt = transpose(b);
  Mat<T> c(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      c(i, j) = dot(a.row(i).subspan(j, i - j + 1), std::span<const T>(bt.row(j)).subspan(j, i - j + 1));
  return c;
}

/// Maps whitened (m̃, S̃) to (L·m̃, L·S̃).
template <class T>
void color(GaussianFactor<T>& g, const Mat<T>& l) {
  Vec<T> mean(g.dim());
  for (std::size_t i = 0; i < g.dim(); ++i) mean[i] = dot(l.row(i).first(i + 1), std::span<const T>(g.mean).first(i + 1));
  g.mean = std::move(mean);
  g.factor = lower_product(l, g.factor);
  g.factor_t = transpose(g.factor);
}

template <class T>
void color_params(ModelParams<T>& p) {
  using std::exp;
  const StationaryPriors<T> priors = stationary_priors(p);
  for (auto& q : p.q_u) color(q, priors.l.chol.L);
  color(p.q_v, priors.ell.chol.L);
  Vec<T> ell_z(p.num_inducing());
  for (std::size_t i = 0; i < ell_z.size(); ++i) ell_z[i] = exp(p.q_v.mean[i]);
  const InducingPrior<T> gprior = gibbs_prior(p, ell_z);
  for (auto& q : p.q_w) color(q, gprior.chol.L);
}

inline VariationalGaussian whiten(const VariationalGaussian& q, const CholFactor<double>& l) {
  const Vector mean = solve_lower<double, double>(l.L, q.mean);
  return VariationalGaussian::from_factor(mean, tri_solve(l, q.factor()));
}

inline void store_factor(const GaussianFactor<double>& g, VariationalGaussian& q) {
  q = VariationalGaussian::from_factor(g.mean, g.factor);
}

}  // namespace detail

inline ParamVector pack(const VariationalState& state, const HyperParams& hypers,
                        Coordinates coordinates = Coordinates::plain) {
  ParamVector p;
  p.coordinates = coordinates;
  ModelState source{state, hypers};
  if (coordinates == Coordinates::whitened) {
    const ModelParams<double> mp = materialize(state, hypers);
    const auto priors = detail::stationary_priors(mp);
    for (auto& q : source.state.q_u) q = detail::whiten(q, priors.l.chol);
    Vector ell_z(mp.num_inducing());
    for (std::size_t i = 0; i < ell_z.size(); ++i) ell_z[i] = std::exp(state.q_v.mean[i]);
    const auto gprior = detail::gibbs_prior(mp, ell_z);
    for (auto& q : source.state.q_w) q = detail::whiten(q, gprior.chol);
    source.state.q_v = detail::whiten(state.q_v, priors.ell.chol);
  }
  p.frozen = std::make_shared<const ModelState>(source);
  for_each_block(source.state, source.hypers,
                 [&](const std::string& name, std::span<const double> raw, bool trainable) {
                   if (!trainable) return;
                   p.layout.push_back({name, p.values.size(), raw.size()});
                   p.values.insert(p.values.end(), raw.begin(), raw.end());
                 });
  return p;
}

namespace detail {

inline void check_layout(const ParamVector& p) {
  if (!p.frozen) throw LayoutMismatch("ParamVector: missing frozen template");
  std::size_t expect = 0;
  for (const auto& s : p.layout) {
    if (s.offset != expect) throw LayoutMismatch("ParamVector: segments are not contiguous");
    expect += s.size;
  }
  if (expect != p.values.size()) throw LayoutMismatch("ParamVector: layout does not cover the value vector");
}

}  // namespace detail

namespace detail {

/// The stored blocks of p with the trainable ones replaced by p.values, still
/// in p's coordinates.
inline ModelState overwrite_blocks(const ParamVector& p) {
  check_layout(p);
  ModelState out = *p.frozen;
  std::size_t k = 0;
  for_each_block(out.state, out.hypers, [&](const std::string& name, std::span<double> raw, bool trainable) {
    if (!trainable) return;
    if (k >= p.layout.size() || p.layout[k].name != name || p.layout[k].size != raw.size())
      throw LayoutMismatch("ParamVector: segment '" + name + "' does not match the layout");
    const Segment& s = p.layout[k++];
    std::copy(p.values.begin() + static_cast<std::ptrdiff_t>(s.offset),
              p.values.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size), raw.begin());
  });
  if (k != p.layout.size()) throw LayoutMismatch("ParamVector: layout has extra segments");
  return out;
}

}  // namespace detail

inline ModelState unpack(const ParamVector& p) {
  ModelState out = detail::overwrite_blocks(p);
  if (p.coordinates == Coordinates::whitened) {
    ModelParams<double> mp = materialize(out.state, out.hypers);
    detail::color_params(mp);
    for (std::size_t c = 0; c < mp.q_u.size(); ++c) detail::store_factor(mp.q_u[c], out.state.q_u[c]);
    for (std::size_t d = 0; d < mp.q_w.size(); ++d) detail::store_factor(mp.q_w[d], out.state.q_w[d]);
    detail::store_factor(mp.q_v, out.state.q_v);
  }
  return out;
}

/// Evaluation parameters over T whose trainable blocks are taken from
/// `leaves` (one per entry of p.values) and the rest from p.frozen.
template <class T>
ModelParams<T> materialize(const ParamVector& p, std::span<const T> leaves) {
  detail::check_layout(p);
  if (leaves.size() != p.values.size()) throw LayoutMismatch("materialize: leaf count differs from layout");
  std::size_t k = 0;
  ModelParams<T> out = materialize<T>(p.frozen->state, p.frozen->hypers,
                        [&](const std::string& name, std::span<const double> raw, bool trainable) {
                          Vec<T> out(raw.size());
                          if (trainable) {
                            if (k >= p.layout.size() || p.layout[k].name != name || p.layout[k].size != raw.size())
                              throw LayoutMismatch("ParamVector: segment '" + name + "' does not match the layout");
                            const Segment& s = p.layout[k++];
                            for (std::size_t i = 0; i < s.size; ++i) out[i] = leaves[s.offset + i];
                          } else {
                            for (std::size_t i = 0; i < raw.size(); ++i) out[i] = T(raw[i]);
                          }
                          return out;
                        });
  if (p.coordinates == Coordinates::whitened) detail::color_params(out);
  return out;
}

struct ValueAndGradient {
  double value = 0.0;
  Vector gradient;
};

/// Runs `f(span<const Var>) -> Var` on a fresh tape and returns its value and
/// gradient with respect to every input.
template <class F>
ValueAndGradient value_and_gradient(F&& f, std::span<const double> x) {
  thread_local ad::Tape tape;
  tape.clear();
  ad::TapeScope scope(tape);
  std::vector<ad::Var> leaves(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) leaves[i] = ad::Var::leaf(x[i]);
  const ad::Var out = f(std::span<const ad::Var>(leaves));
  const std::vector<double> adj = tape.adjoints(out.id);
  ValueAndGradient r;
  r.value = out.val;
  r.gradient.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r.gradient[i] = adj[static_cast<std::size_t>(leaves[i].id)];
  return r;
}

struct ElboGradient {
  double value = 0.0;
  Vector gradient;
  ElboBreakdown breakdown;
};

/// Gradient of the seeded ELBO estimator with respect to p. The value is
/// bit-identical to elbo_minibatch at the unpacked state with the same seed.
inline ElboGradient grad_elbo(const Dataset& ds, std::span<const std::size_t> batch, Estimator method,
                              std::size_t n_samples, std::uint64_t seed, const ParamVector& p) {
  ElboGradient g;
  ElboTerms<ad::Var> terms;
  const ValueAndGradient vg = value_and_gradient(
      [&](std::span<const ad::Var> leaves) {
        terms = evaluate_elbo(ds, batch, materialize<ad::Var>(p, leaves), method, n_samples, seed);
        return terms.elbo;
      },
      p.values);
  g.value = vg.value;
  g.gradient = vg.gradient;
  g.breakdown = {terms.expected_loglik.val, terms.kl_u.val, terms.kl_w.val, terms.kl_v.val, terms.elbo.val};
  if (!std::isfinite(g.value)) throw NonFinite("grad_elbo: ELBO value is not finite");
  for (std::size_t i = 0; i < g.gradient.size(); ++i) {
    if (!std::isfinite(g.gradient[i])) {
      const Segment* s = p.segment_at(i);
      throw NonFinite("grad_elbo: non-finite gradient in segment '" + (s ? s->name : std::string("?")) + "'");
    }
  }
  return g;
}

/// Central differences (f(p + h e_i) − f(p − h e_i)) / 2h with h = step · max(1, |p_i|).
inline Vector finite_diff(const std::function<double(const ParamVector&)>& f, const ParamVector& p,
                          double step = 1e-5) {
  Vector out(p.values.size());
  ParamVector probe = p;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double h = step * std::max(1.0, std::abs(p.values[i]));
    probe.values[i] = p.values[i] + h;
    const double up = f(probe);
    probe.values[i] = p.values[i] - h;
    const double down = f(probe);
    probe.values[i] = p.values[i];
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

/// Seeded ELBO as a function of a parameter vector, for finite differences.
inline std::function<double(const ParamVector&)> elbo_objective(const Dataset& ds, std::vector<std::size_t> batch,
                                                                Estimator method, std::size_t n_samples,
                                                                std::uint64_t seed) {
  return [&ds, batch = std::move(batch), method, n_samples, seed](const ParamVector& p) {
    const ModelState s = unpack(p);
    return elbo_minibatch(ds, batch, s.state, s.hypers, method, n_samples, seed).elbo;
  };
}

}  // namespace cnmgp
