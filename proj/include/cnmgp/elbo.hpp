#pragma once

// Reparameterized sampling of the latent processes and the doubly stochastic
// evidence lower bound.
//
// Noise layout: for latent sample s of an evaluation seeded with `seed`, the
// shared draw z^v comes from stream derive_seed(seed, s, kSharedStream) and the
// per-datum draws of dataset row n come from stream derive_seed(seed, s, n),
// in the order z^ℓ_n, z^l_n (coefficient order), z^g_n. A datum therefore sees
// the same noise whichever batch it lands in.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "cnmgp/data.hpp"
#include "cnmgp/kernels.hpp"
#include "cnmgp/model.hpp"
#include "cnmgp/random.hpp"

namespace cnmgp {

enum class Estimator { direct, marginalized };

inline std::string to_string(Estimator e) { return e == Estimator::direct ? "direct" : "marginalized"; }

inline Estimator parse_estimator(const std::string& s) {
  if (s == "direct") return Estimator::direct;
  if (s == "marginalized") return Estimator::marginalized;
  throw ConfigError("unknown estimator '" + s + "' (expected direct or marginalized)");
}

/// Standard-normal draws behind one latent sample of a batch.
struct LatentNoise {
  Vector z_v;
  Vector z_ell;                    // one per datum
  std::vector<Vector> z_l;         // per datum, num_coefficients(D) entries
  std::vector<Vector> z_g;         // per datum, D entries
};

struct LatentBatchSample {
  LatentNoise noise;
  Vector v_draw;
  Vector ell_batch;
  std::vector<Matrix> l_batch;  // per datum, lower-triangular D×D
  Matrix g_mean;                // datum × D
  Matrix g_var;
  Matrix g_draw;                // direct method only
};

struct ElboBreakdown {
  double expected_loglik = 0.0;
  double kl_u = 0.0;
  double kl_w = 0.0;
  double kl_v = 0.0;
  double elbo = 0.0;
};

template <class T>
struct ElboTerms {
  T expected_loglik = T(0.0);
  T kl_u = T(0.0);
  T kl_w = T(0.0);
  T kl_v = T(0.0);
  T elbo = T(0.0);
};

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

template <class T>
Vec<T> rbf_row(std::span<const double> x, const Mat<T>& z, const BasicRbfKernel<T>& k, const T& two_ls2) {
  using std::exp;
  Vec<T> out(z.rows());
  for (std::size_t m = 0; m < z.rows(); ++m) {
    const T d2 = squared_distance(x, z.row(m));
    out[m] = k.variance * exp(-d2 / two_ls2);
  }
  return out;
}

template <class T>
Vec<T> gibbs_row(std::span<const double> x, const T& ell_x, const Mat<T>& z, const Vec<T>& ell_z) {
  Vec<T> out(z.rows());
  for (std::size_t m = 0; m < z.rows(); ++m) {
    const T d2 = squared_distance(x, z.row(m));
    out[m] = gibbs_entry(d2, ell_x, ell_z[m]);
  }
  return out;
}

template <class T>
T log_normal(double y, const T& mean, const T& var) {
  using std::log;
  const T r = T(y) - mean;
  return T(-0.5) * (T(kLog2Pi) + log(var)) - r * r / (T(2.0) * var);
}

/// Inducing priors of the stationary processes, fixed for a given ModelParams.
template <class T>
struct StationaryPriors {
  InducingPrior<T> l;
  InducingPrior<T> ell;
  T l_two_ls2;
  T ell_two_ls2;
};

template <class T>
StationaryPriors<T> stationary_priors(const ModelParams<T>& p) {
  StationaryPriors<T> s{make_inducing_prior(rbf_gram(p.Z, p.theta_l), p.theta_l.variance, p.kernel),
                        make_inducing_prior(rbf_gram(p.Z, p.theta_ell), p.theta_ell.variance, p.kernel),
                        T(2.0) * p.theta_l.lengthscale * p.theta_l.lengthscale,
                        T(2.0) * p.theta_ell.lengthscale * p.theta_ell.lengthscale};
  return s;
}

/// Sample-independent quantities of one datum.
template <class T>
struct RowStatics {
  Projection<T> ell;
  T ell_sd;
  std::vector<PointMoments<T>> l;  // per coefficient, M-marginal of q(u_ij)
};

template <class T>
RowStatics<T> row_statics(const ModelParams<T>& p, const StationaryPriors<T>& priors, std::span<const double> x) {
  using std::sqrt;
  RowStatics<T> r;
  const Vec<T> k_ell = rbf_row(x, p.Z, p.theta_ell, priors.ell_two_ls2);
  r.ell = project(priors.ell, std::span<const T>(k_ell), p.theta_ell.variance);
  r.ell_sd = value(r.ell.conditional_variance) > 0.0 ? sqrt(r.ell.conditional_variance) : T(0.0);
  const Vec<T> k_l = rbf_row(x, p.Z, p.theta_l, priors.l_two_ls2);
  const Projection<T> proj_l = project(priors.l, std::span<const T>(k_l), p.theta_l.variance);
  r.l.reserve(p.q_u.size());
  for (const auto& q : p.q_u) r.l.push_back(marginal_moments(q, proj_l));
  return r;
}

/// v = m^v + S^v z^v.
template <class T>
Vec<T> draw_v(const GaussianFactor<T>& qv, std::span<const double> z) {
  const std::size_t m = qv.dim();
  Vec<T> v(m);
  for (std::size_t i = 0; i < m; ++i) v[i] = qv.mean[i] + dot(qv.factor.row(i).first(i + 1), z.first(i + 1));
  return v;
}

template <class T>
T draw_ell(const RowStatics<T>& r, const Vec<T>& v, double z) {
  using std::exp;
  return exp(dot(std::span<const T>(r.ell.weights), std::span<const T>(v)) + r.ell_sd * T(z));
}

/// Lower-triangular L_n with exp applied on the diagonal.
template <class T>
Mat<T> draw_coefficients(const RowStatics<T>& r, std::span<const double> z, std::size_t d_out) {
  using std::exp;
  using std::sqrt;
  Mat<T> l(d_out, d_out);
  for (std::size_t i = 0; i < d_out; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const std::size_t c = coef_index(i, j);
      const PointMoments<T>& mom = r.l[c];
      const T sd = value(mom.variance) > 0.0 ? sqrt(mom.variance) : T(0.0);
      const T t = mom.mean + sd * T(z[c]);
      l(i, j) = i == j ? exp(t) : t;
    }
  return l;
}

template <class T>
InducingPrior<T> gibbs_prior(const ModelParams<T>& p, const Vec<T>& ell_z) {
  return make_inducing_prior(gibbs_gram(p.Z, std::span<const T>(ell_z)), T(1.0), p.kernel);
}

template <class T>
std::vector<PointMoments<T>> g_moments_at(const ModelParams<T>& p, const InducingPrior<T>& gprior,
                                          std::span<const double> x, const T& ell_x, const Vec<T>& ell_z) {
  const Vec<T> k_g = gibbs_row(x, ell_x, p.Z, ell_z);
  const Projection<T> proj = project(gprior, std::span<const T>(k_g), T(1.0));
  std::vector<PointMoments<T>> out;
  out.reserve(p.q_w.size());
  for (const auto& q : p.q_w) out.push_back(marginal_moments(q, proj));
  return out;
}

}  // namespace detail

/// log N(y | Σ_j l_j g_j, σ²) for one observed entry, given a draw of g.
template <class T>
T expected_loglik_direct(double y, std::span<const T> l_row, std::span<const T> g_draw, const T& sigma2_err) {
  const T f = dot(l_row, g_draw);
  return detail::log_normal(y, f, sigma2_err);
}

/// Closed-form expectation over g ~ N(μ, diag σ²):
/// log N(y | Σ_j l_j μ_j, σ²) − Σ_j l_j² σ_j² / (2σ²).
template <class T>
T expected_loglik_marginalized(double y, std::span<const T> l_row, std::span<const T> g_means,
                               std::span<const T> g_vars, const T& sigma2_err) {
  const T f = dot(l_row, g_means);
  T spread = T(0.0);
  for (std::size_t j = 0; j < l_row.size(); ++j) spread += l_row[j] * l_row[j] * g_vars[j];
  return detail::log_normal(y, f, sigma2_err) - spread / (T(2.0) * sigma2_err);
}

/// Stochastic ELBO over a minibatch of dataset rows. The likelihood sum runs
/// over observed entries of the batch and is scaled by
/// (#observed in dataset) / (#observed in batch); the w-block KL is averaged
/// over the latent draws of v because its prior depends on ℓ(Z) = exp(v).
template <class T>
ElboTerms<T> evaluate_elbo(const Dataset& ds, std::span<const std::size_t> batch, const ModelParams<T>& p,
                           Estimator method, std::size_t n_samples, std::uint64_t seed) {
  using std::exp;
  if (batch.empty()) throw EmptyBatch("elbo: batch is empty");
  if (n_samples < 1) throw ConfigError("elbo: need at least one latent sample");
  const std::size_t d_out = p.num_outputs();
  const std::size_t n_coef = num_coefficients(d_out);
  const std::size_t m = p.num_inducing();
  if (ds.num_outputs() != d_out) throw DimensionMismatch("elbo: dataset output count differs from model");
  if (ds.num_inputs() != p.Z.cols()) throw DimensionMismatch("elbo: dataset input dimension differs from model");

  const detail::StationaryPriors<T> priors = detail::stationary_priors(p);
  ElboTerms<T> out;
  for (const auto& q : p.q_u) {
    out.kl_u += gauss_kl(std::span<const T>(q.mean), CholFactor<T>::from_lower(q.factor), priors.l.chol);
  }
  out.kl_v = gauss_kl(std::span<const T>(p.q_v.mean), CholFactor<T>::from_lower(p.q_v.factor), priors.ell.chol);

  std::size_t batch_observed = 0;
  std::vector<std::size_t> rows;
  for (std::size_t n : batch) {
    if (n >= ds.num_rows()) throw ConfigError("elbo: batch index out of range");
    if (ds.row_observed_count(n) == 0) continue;
    batch_observed += ds.row_observed_count(n);
    rows.push_back(n);
  }
  std::vector<detail::RowStatics<T>> statics;
  statics.reserve(rows.size());
  for (std::size_t n : rows) statics.push_back(detail::row_statics(p, priors, ds.X().row(n)));

  const bool masked = ds.has_mask();
  T loglik_sum = T(0.0);
  T kl_w_sum = T(0.0);
  Vec<T> g_buf(d_out), gvar_buf(d_out);
  for (std::size_t s = 0; s < n_samples; ++s) {
    NormalStream shared(derive_seed(seed, s, kSharedStream));
    const Vector z_v = shared.take(m);
    const Vec<T> v = detail::draw_v(p.q_v, z_v);
    Vec<T> ell_z(m);
    for (std::size_t i = 0; i < m; ++i) ell_z[i] = exp(v[i]);
    const InducingPrior<T> gprior = detail::gibbs_prior(p, ell_z);
    T kl_w = T(0.0);
    for (const auto& q : p.q_w)
      kl_w += gauss_kl(std::span<const T>(q.mean), CholFactor<T>::from_lower(q.factor), gprior.chol);
    kl_w_sum += kl_w;

    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t n = rows[r];
      NormalStream stream(derive_seed(seed, s, n));
      const double z_ell = stream.next();
      const Vector z_l = stream.take(n_coef);
      const Vector z_g = stream.take(d_out);
      const std::span<const double> x = ds.X().row(n);
      const T ell_n = detail::draw_ell(statics[r], v, z_ell);
      const auto gm = detail::g_moments_at(p, gprior, x, ell_n, ell_z);
      const Mat<T> l = detail::draw_coefficients(statics[r], z_l, d_out);
      using std::sqrt;
      for (std::size_t d = 0; d < d_out; ++d) {
        if (method == Estimator::direct) {
          const T sd = value(gm[d].variance) > 0.0 ? sqrt(gm[d].variance) : T(0.0);
          g_buf[d] = gm[d].mean + sd * T(z_g[d]);
        } else {
          g_buf[d] = gm[d].mean;
          gvar_buf[d] = gm[d].variance;
        }
      }
      for (std::size_t d = 0; d < d_out; ++d) {
        if (masked && !ds.observed(n, d)) continue;
        const std::span<const T> l_row = l.row(d).first(d + 1);
        const double y = ds.y(n, d);
        if (method == Estimator::direct) {
          loglik_sum += expected_loglik_direct(y, l_row, std::span<const T>(g_buf).first(d + 1), p.sigma2_err);
        } else {
          loglik_sum += expected_loglik_marginalized(y, l_row, std::span<const T>(g_buf).first(d + 1),
                                                     std::span<const T>(gvar_buf).first(d + 1), p.sigma2_err);
        }
      }
    }
  }
  const double inv_s = 1.0 / static_cast<double>(n_samples);
  if (batch_observed > 0) {
    const double scale = static_cast<double>(ds.observed_count()) / static_cast<double>(batch_observed);
    out.expected_loglik = T(scale) * (loglik_sum * T(inv_s));
  }
  out.kl_w = kl_w_sum * T(inv_s);
  out.elbo = out.expected_loglik - (out.kl_u + out.kl_w + out.kl_v);
  return out;
}

inline ElboBreakdown elbo_minibatch(const Dataset& ds, std::span<const std::size_t> batch,
                                    const VariationalState& state, const HyperParams& hypers, Estimator method,
                                    std::size_t n_samples, std::uint64_t seed) {
  const ElboTerms<double> t = evaluate_elbo(ds, batch, materialize(state, hypers), method, n_samples, seed);
  return {t.expected_loglik, t.kl_u, t.kl_w, t.kl_v, t.elbo};
}

inline std::vector<std::size_t> all_rows(const Dataset& ds) {
  std::vector<std::size_t> rows(ds.num_rows());
  for (std::size_t n = 0; n < rows.size(); ++n) rows[n] = n;
  return rows;
}

// ---------------------------------------------------------------------------
// Stand-alone sampling operations on a batch of inputs (double precision).

/// Draws v ~ q(v) and ℓ_n for each row of x_batch; fills v_draw, ell_batch and
/// the z^v, z^ℓ noise of `out`.
inline void sample_lengthscale(const VariationalState& state, const HyperParams& hypers, const Matrix& x_batch,
                               NormalStream& rng, LatentBatchSample& out) {
  const ModelParams<double> p = materialize(state, hypers);
  const auto priors = detail::stationary_priors(p);
  out.noise.z_v = rng.take(p.num_inducing());
  out.v_draw = detail::draw_v(p.q_v, out.noise.z_v);
  out.noise.z_ell.resize(x_batch.rows());
  out.ell_batch.resize(x_batch.rows());
  for (std::size_t n = 0; n < x_batch.rows(); ++n) {
    const auto statics = detail::row_statics(p, priors, x_batch.row(n));
    out.noise.z_ell[n] = rng.next();
    out.ell_batch[n] = detail::draw_ell(statics, out.v_draw, out.noise.z_ell[n]);
  }
}

inline LatentBatchSample sample_lengthscale(const VariationalState& state, const HyperParams& hypers,
                                            const Matrix& x_batch, NormalStream& rng) {
  LatentBatchSample out;
  sample_lengthscale(state, hypers, x_batch, rng, out);
  return out;
}

/// Draws L_n for each row; exp is applied on the diagonal.
inline void sample_coefficients(const VariationalState& state, const HyperParams& hypers, const Matrix& x_batch,
                                NormalStream& rng, LatentBatchSample& out) {
  const ModelParams<double> p = materialize(state, hypers);
  const auto priors = detail::stationary_priors(p);
  const std::size_t d_out = p.num_outputs();
  out.noise.z_l.resize(x_batch.rows());
  out.l_batch.resize(x_batch.rows());
  for (std::size_t n = 0; n < x_batch.rows(); ++n) {
    const auto statics = detail::row_statics(p, priors, x_batch.row(n));
    out.noise.z_l[n] = rng.take(num_coefficients(d_out));
    out.l_batch[n] = detail::draw_coefficients(statics, out.noise.z_l[n], d_out);
  }
}

inline LatentBatchSample sample_coefficients(const VariationalState& state, const HyperParams& hypers,
                                             const Matrix& x_batch, NormalStream& rng) {
  LatentBatchSample out;
  sample_coefficients(state, hypers, x_batch, rng, out);
  return out;
}

struct GMoments {
  Matrix mean;  // datum × D
  Matrix var;
};

/// μ̃^g_dn and σ̃^g²_dn given ℓ(x_n) = ell_batch[n] and ℓ(Z) = exp(v_draw).
inline GMoments g_marginal_moments(const VariationalState& state, const HyperParams& hypers, const Matrix& x_batch,
                                   std::span<const double> ell_batch, std::span<const double> v_draw) {
  const ModelParams<double> p = materialize(state, hypers);
  const std::size_t m = p.num_inducing();
  if (v_draw.size() != m || ell_batch.size() != x_batch.rows())
    throw DimensionMismatch("g_marginal_moments: draw sizes differ from batch/inducing counts");
  Vector ell_z(m);
  for (std::size_t i = 0; i < m; ++i) ell_z[i] = std::exp(v_draw[i]);
  const auto gprior = detail::gibbs_prior(p, ell_z);
  GMoments out{Matrix(x_batch.rows(), p.num_outputs()), Matrix(x_batch.rows(), p.num_outputs())};
  for (std::size_t n = 0; n < x_batch.rows(); ++n) {
    if (!(ell_batch[n] > 0.0)) throw NonPositiveLengthscale("g_marginal_moments: ell_batch must be positive");
    const auto gm = detail::g_moments_at(p, gprior, x_batch.row(n), ell_batch[n], ell_z);
    for (std::size_t d = 0; d < p.num_outputs(); ++d) {
      out.mean(n, d) = gm[d].mean;
      out.var(n, d) = std::max(gm[d].variance, 0.0);
    }
  }
  return out;
}

}  // namespace cnmgp
