#pragma once

// Variational state containers, hyperparameters, the sparse Gaussian
// conditional / variational-marginal machinery, and state serialization.
//
// Positive quantities are stored in their unconstrained form (log values, and
// log diagonals for Cholesky factors). That form is what the optimizer moves,
// so packing a state into a parameter vector and back is an exact copy.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnmgp/kernels.hpp"
#include "cnmgp/numcore.hpp"

namespace cnmgp {

/// Number of coefficient processes l_ij, i ≥ j, for D outputs.
constexpr std::size_t num_coefficients(std::size_t d) noexcept { return d * (d + 1) / 2; }

/// Position of l_ij (0-based, i ≥ j) in row-major lower-triangular order.
constexpr std::size_t coef_index(std::size_t i, std::size_t j) noexcept { return i * (i + 1) / 2 + j; }

struct InducingSet {
  Matrix Z;

  std::size_t size() const noexcept { return Z.rows(); }

  void validate() const {
    if (Z.rows() < 1) throw ConfigError("InducingSet: at least one inducing input is required");
    for (std::size_t a = 0; a < Z.rows(); ++a)
      for (std::size_t b = 0; b < a; ++b) {
        double d2 = 0.0;
        for (std::size_t p = 0; p < Z.cols(); ++p) d2 += (Z(a, p) - Z(b, p)) * (Z(a, p) - Z(b, p));
        if (std::sqrt(d2) <= 1e-10) throw ConfigError("InducingSet: duplicate inducing inputs");
      }
  }

  /// M points equispaced over [lo, hi] in one input dimension.
  static InducingSet equispaced(double lo, double hi, std::size_t m) {
    Matrix z(m, 1);
    for (std::size_t i = 0; i < m; ++i)
      z(i, 0) = m == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m - 1);
    return {std::move(z)};
  }
};

/// N(mean, S·Sᵀ) with S lower-triangular. The factor is stored packed
/// row-major (M(M+1)/2 entries) with its diagonal in log form.
class VariationalGaussian {
 public:
  VariationalGaussian() = default;

  explicit VariationalGaussian(std::size_t m) : mean(m, 0.0), raw_factor(num_coefficients(m), 0.0), dim_(m) {}

  /// Builds from an explicit lower-triangular factor with positive diagonal.
  static VariationalGaussian from_factor(Vector mean, const Matrix& factor) {
    const std::size_t m = mean.size();
    if (factor.rows() != m || factor.cols() != m) throw DimensionMismatch("VariationalGaussian: factor shape");
    VariationalGaussian q(m);
    q.mean = std::move(mean);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        if (i == j && !(factor(i, i) > 0.0))
          throw NotPositiveDefinite("VariationalGaussian: factor diagonal must be positive");
        q.raw_factor[coef_index(i, j)] = i == j ? std::log(factor(i, i)) : factor(i, j);
      }
    return q;
  }

  std::size_t dim() const noexcept { return dim_; }

  Matrix factor() const {
    Matrix l(dim_, dim_);
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        const double r = raw_factor[coef_index(i, j)];
        l(i, j) = i == j ? std::exp(r) : r;
      }
    return l;
  }

  Matrix covariance() const { return outer_lower(factor()); }

  Vector mean;
  Vector raw_factor;

 private:
  std::size_t dim_ = 0;
};

struct VariationalState {
  InducingSet inducing;
  /// q(u_ij), indexed by coef_index(i, j).
  std::vector<VariationalGaussian> q_u;
  std::vector<VariationalGaussian> q_w;
  VariationalGaussian q_v;

  std::size_t num_outputs() const noexcept { return q_w.size(); }
  std::size_t num_inducing() const noexcept { return inducing.size(); }

  VariationalGaussian& u(std::size_t i, std::size_t j) { return q_u.at(coef_index(i, j)); }
  const VariationalGaussian& u(std::size_t i, std::size_t j) const { return q_u.at(coef_index(i, j)); }

  void validate() const {
    inducing.validate();
    const std::size_t m = num_inducing();
    const std::size_t d = num_outputs();
    if (d < 1) throw ConfigError("VariationalState: at least one output is required");
    if (q_u.size() != num_coefficients(d)) throw ConfigError("VariationalState: need D(D+1)/2 coefficient factors");
    auto check = [m](const VariationalGaussian& q) {
      if (q.dim() != m || q.mean.size() != m || q.raw_factor.size() != num_coefficients(m))
        throw DimensionMismatch("VariationalState: factor dimension differs from inducing count");
    };
    for (const auto& q : q_u) check(q);
    for (const auto& q : q_w) check(q);
    check(q_v);
  }
};

struct KernelConfig {
  /// Added to every inducing Gram matrix as nugget · (kernel variance) · I.
  double nugget = 1e-6;
  /// Starting point of the jitter escalation in cholesky_jittered.
  double base_jitter = 1e-6;
};

struct TrainableFlags {
  bool sigma2_err = true;
  bool l_variance = true;
  bool l_lengthscale = false;
  bool ell_variance = true;
  bool ell_lengthscale = false;
  bool inducing = false;
};

/// σ²_err and the RBF hyperparameters of K^l and K^ℓ, stored as logs.
struct HyperParams {
  double log_sigma2_err = 0.0;
  double log_l_variance = 0.0;
  double log_l_lengthscale = 2.0;
  double log_ell_variance = 0.0;
  double log_ell_lengthscale = 0.0;
  TrainableFlags trainable;
  KernelConfig kernel;

  static HyperParams make(double sigma2_err, const RbfKernel& theta_l, const RbfKernel& theta_ell) {
    if (!(sigma2_err > 0.0)) throw ConfigError("HyperParams: sigma2_err must be positive");
    detail::check_rbf(theta_l);
    detail::check_rbf(theta_ell);
    HyperParams h;
    h.log_sigma2_err = std::log(sigma2_err);
    h.log_l_variance = std::log(theta_l.variance);
    h.log_l_lengthscale = std::log(theta_l.lengthscale);
    h.log_ell_variance = std::log(theta_ell.variance);
    h.log_ell_lengthscale = std::log(theta_ell.lengthscale);
    return h;
  }

  double sigma2_err() const { return std::exp(log_sigma2_err); }
  RbfKernel theta_l() const { return {std::exp(log_l_variance), std::exp(log_l_lengthscale)}; }
  RbfKernel theta_ell() const { return {std::exp(log_ell_variance), std::exp(log_ell_lengthscale)}; }
};

// ---------------------------------------------------------------------------
// Parameter traversal

/// Visits every parameter block in a fixed order. `fn(name, raw, trainable)`
/// receives a span over the stored (unconstrained) values. This order defines
/// the layout of packed parameter vectors.
template <class State, class Hypers, class Fn>
void for_each_block(State& state, Hypers& hypers, Fn&& fn) {
  using Raw = std::conditional_t<std::is_const_v<State>, const double, double>;
  fn(std::string("inducing"), std::span<Raw>(state.inducing.Z.data()), hypers.trainable.inducing);
  const std::size_t d_out = state.num_outputs();
  for (std::size_t i = 0; i < d_out; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      auto& q = state.q_u[coef_index(i, j)];
      const std::string tag = "q_u[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]";
      fn(tag + ".mean", std::span<Raw>(q.mean), true);
      fn(tag + ".factor", std::span<Raw>(q.raw_factor), true);
    }
  for (std::size_t d = 0; d < d_out; ++d) {
    auto& q = state.q_w[d];
    const std::string tag = "q_w[" + std::to_string(d + 1) + "]";
    fn(tag + ".mean", std::span<Raw>(q.mean), true);
    fn(tag + ".factor", std::span<Raw>(q.raw_factor), true);
  }
  fn(std::string("q_v.mean"), std::span<Raw>(state.q_v.mean), true);
  fn(std::string("q_v.factor"), std::span<Raw>(state.q_v.raw_factor), true);
  fn(std::string("log_sigma2_err"), std::span<Raw>(&hypers.log_sigma2_err, 1), hypers.trainable.sigma2_err);
  fn(std::string("theta_l.log_variance"), std::span<Raw>(&hypers.log_l_variance, 1), hypers.trainable.l_variance);
  fn(std::string("theta_l.log_lengthscale"), std::span<Raw>(&hypers.log_l_lengthscale, 1),
     hypers.trainable.l_lengthscale);
  fn(std::string("theta_ell.log_variance"), std::span<Raw>(&hypers.log_ell_variance, 1),
     hypers.trainable.ell_variance);
  fn(std::string("theta_ell.log_lengthscale"), std::span<Raw>(&hypers.log_ell_lengthscale, 1),
     hypers.trainable.ell_lengthscale);
}

// ---------------------------------------------------------------------------
// Materialized parameters for evaluation over scalar type T

template <class T>
struct GaussianFactor {
  Vec<T> mean;
  Mat<T> factor;    // lower-triangular
  Mat<T> factor_t;  // its transpose, rows are factor columns

  std::size_t dim() const noexcept { return mean.size(); }
};

template <class T>
struct ModelParams {
  Mat<T> Z;
  std::vector<GaussianFactor<T>> q_u;
  std::vector<GaussianFactor<T>> q_w;
  GaussianFactor<T> q_v;
  T sigma2_err = T(1.0);
  BasicRbfKernel<T> theta_l;
  BasicRbfKernel<T> theta_ell;
  KernelConfig kernel;

  std::size_t num_outputs() const noexcept { return q_w.size(); }
  std::size_t num_inducing() const noexcept { return Z.rows(); }
};

namespace detail {

template <class T>
GaussianFactor<T> unpack_factor(Vec<T> mean, const Vec<T>& raw) {
  using std::exp;
  const std::size_t m = mean.size();
  GaussianFactor<T> g;
  g.mean = std::move(mean);
  g.factor = Mat<T>(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const T& r = raw[coef_index(i, j)];
      g.factor(i, j) = i == j ? exp(r) : r;
    }
  g.factor_t = transpose(g.factor);
  return g;
}

}  // namespace detail

/// Builds evaluation parameters. `source(name, raw, trainable)` returns the
/// Vec<T> to use for a block; the traversal order matches for_each_block.
template <class T, class Source>
ModelParams<T> materialize(const VariationalState& state, const HyperParams& hypers, Source&& source) {
  using std::exp;
  std::vector<Vec<T>> blocks;
  for_each_block(state, hypers, [&](const std::string& name, std::span<const double> raw, bool trainable) {
    blocks.push_back(source(name, raw, trainable));
  });
  ModelParams<T> p;
  std::size_t b = 0;
  p.Z = Mat<T>(state.inducing.Z.rows(), state.inducing.Z.cols(), std::move(blocks[b++]));
  const std::size_t d_out = state.num_outputs();
  for (std::size_t c = 0; c < num_coefficients(d_out); ++c) {
    Vec<T> mean = std::move(blocks[b++]);
    p.q_u.push_back(detail::unpack_factor<T>(std::move(mean), blocks[b++]));
  }
  for (std::size_t d = 0; d < d_out; ++d) {
    Vec<T> mean = std::move(blocks[b++]);
    p.q_w.push_back(detail::unpack_factor<T>(std::move(mean), blocks[b++]));
  }
  {
    Vec<T> mean = std::move(blocks[b++]);
    p.q_v = detail::unpack_factor<T>(std::move(mean), blocks[b++]);
  }
  p.sigma2_err = exp(blocks[b++][0]);
  p.theta_l.variance = exp(blocks[b++][0]);
  p.theta_l.lengthscale = exp(blocks[b++][0]);
  p.theta_ell.variance = exp(blocks[b++][0]);
  p.theta_ell.lengthscale = exp(blocks[b++][0]);
  p.kernel = hypers.kernel;
  return p;
}

/// Plain double evaluation parameters for a state.
inline ModelParams<double> materialize(const VariationalState& state, const HyperParams& hypers) {
  return materialize<double>(state, hypers, [](const std::string&, std::span<const double> raw, bool) {
    return Vector(raw.begin(), raw.end());
  });
}

// ---------------------------------------------------------------------------
// Sparse projections

/// Factorized prior Gram matrix K(Z,Z) + nugget·variance·I of one process.
template <class T>
struct InducingPrior {
  CholFactor<T> chol;
  Mat<T> upper;  // chol.Lᵀ
};

template <class T>
InducingPrior<T> make_inducing_prior(Mat<T> gram, const T& kernel_variance, const KernelConfig& cfg) {
  const T nugget = T(cfg.nugget) * kernel_variance;
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) = gram(i, i) + nugget;
  InducingPrior<T> p;
  p.chol = cholesky_jittered(gram, cfg.base_jitter);
  p.upper = transpose(p.chol.L);
  return p;
}

/// Weights a = K(Z,Z)⁻¹k(Z,x) and conditional variance k(x,x) − kᵀK⁻¹k of one point.
template <class T>
struct Projection {
  Vec<T> weights;
  T conditional_variance = T(0.0);
};

/// Counter of conditional variances below −1e-6 that were clamped to zero.
inline std::size_t& negative_variance_warnings() {
  static thread_local std::size_t count = 0;
  return count;
}

template <class T>
Projection<T> project(const InducingPrior<T>& prior, std::span<const T> k_row, const T& k_self) {
  Projection<T> out;
  const Vec<T> c = solve_lower<T, T>(prior.chol.L, k_row);
  out.weights = solve_upper<T, T>(prior.upper, std::span<const T>(c));
  const T cond = k_self - sum_squares(std::span<const T>(c));
  const double cv = value(cond);
  if (cv < -1e-6) ++negative_variance_warnings();
  out.conditional_variance = cv > 0.0 ? cond : T(0.0);
  return out;
}

template <class T>
struct PointMoments {
  T mean;
  T variance;
};

/// Marginal of f(x) under q(u) = N(m, SSᵀ): mean aᵀm, variance cond + ‖Sᵀa‖².
template <class T>
PointMoments<T> marginal_moments(const GaussianFactor<T>& q, const Projection<T>& proj) {
  const std::size_t m = q.dim();
  const std::span<const T> a(proj.weights);
  Vec<T> sta(m);
  for (std::size_t j = 0; j < m; ++j) sta[j] = dot(q.factor_t.row(j).subspan(j), a.subspan(j));
  PointMoments<T> out{dot(a, std::span<const T>(q.mean)), proj.conditional_variance + sum_squares(std::span<const T>(sta))};
  return out;
}

// ---------------------------------------------------------------------------
// Public moment operations (double precision)

/// Callable (const Matrix& A, const Matrix& B) -> Matrix evaluating K(A, B).
using KernelFn = std::function<Matrix(const Matrix&, const Matrix&)>;

inline KernelFn rbf_kernel_fn(const RbfKernel& k) {
  return [k](const Matrix& a, const Matrix& b) { return rbf_matrix(a, b, k); };
}

struct GaussianMoments {
  Vector mean;
  Matrix cov;       // empty when only variances were requested
  Vector variance;  // diagonal of cov
};

namespace detail {

inline InducingPrior<double> prior_from_kernel(const KernelFn& kernel, const InducingSet& z, double jitter) {
  Matrix kzz = kernel(z.Z, z.Z);
  if (kzz.rows() != z.size() || kzz.cols() != z.size()) throw DimensionMismatch("kernel returned wrong shape");
  for (std::size_t i = 0; i < kzz.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) kzz(j, i) = kzz(i, j) = 0.5 * (kzz(i, j) + kzz(j, i));
  KernelConfig cfg;
  cfg.nugget = jitter;
  return make_inducing_prior<double>(std::move(kzz), 1.0, cfg);
}

}  // namespace detail

/// Gaussian conditional p(f(X) | f(Z) = vals): mean K_xz K_zz⁻¹ vals,
/// covariance K_xx − K_xz K_zz⁻¹ K_zx. `jitter` is added to K_zz.
inline GaussianMoments prior_conditional_moments(const KernelFn& kernel, const Matrix& x, const InducingSet& z,
                                                 std::span<const double> vals, double jitter = 0.0) {
  if (vals.size() != z.size()) throw DimensionMismatch("prior_conditional_moments: vals length differs from M");
  const InducingPrior<double> prior = detail::prior_from_kernel(kernel, z, jitter);
  const Matrix kzx = kernel(z.Z, x);
  const Matrix kxx = kernel(x, x);
  const Matrix c = tri_solve(prior.chol, kzx);  // L⁻¹ K_zx
  const Vector alpha = solve_lower<double, double>(prior.chol.L, vals);
  const std::size_t n = x.rows();
  GaussianMoments out;
  out.mean.resize(n);
  const Matrix ct = transpose(c);
  for (std::size_t i = 0; i < n; ++i) out.mean[i] = dot(ct.row(i), std::span<const double>(alpha));
  out.cov = Matrix(n, n);
  out.variance.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.cov(i, j) = kxx(i, j) - dot(ct.row(i), ct.row(j));
  for (std::size_t i = 0; i < n; ++i) out.variance[i] = out.cov(i, i);
  return out;
}

/// Marginal of f(X) after integrating f(Z) ~ q: mean K_xz K_zz⁻¹ m, covariance
/// K_xx − K_xz K_zz⁻¹ K_zx + K_xz K_zz⁻¹ S K_zz⁻¹ K_zx.
inline GaussianMoments variational_marginal_moments(const KernelFn& kernel, const Matrix& x, const InducingSet& z,
                                                    const VariationalGaussian& q, bool diag_only,
                                                    double jitter = 0.0) {
  if (q.dim() != z.size()) throw DimensionMismatch("variational_marginal_moments: q dimension differs from M");
  const InducingPrior<double> prior = detail::prior_from_kernel(kernel, z, jitter);
  const Matrix kzx = kernel(z.Z, x);
  const std::size_t n = x.rows();
  const std::size_t m = z.size();
  GaussianFactor<double> g{q.mean, q.factor(), {}};
  g.factor_t = transpose(g.factor);
  const Matrix kxz = transpose(kzx);
  GaussianMoments out;
  out.mean.resize(n);
  out.variance.resize(n);
  std::vector<Projection<double>> projections(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix xi(1, x.cols(), Vector(x.row(i).begin(), x.row(i).end()));
    const double kii = kernel(xi, xi)(0, 0);
    projections[i] = project(prior, kxz.row(i), kii);
    const PointMoments<double> pm = marginal_moments(g, projections[i]);
    out.mean[i] = pm.mean;
    out.variance[i] = pm.variance;
  }
  if (diag_only) return out;
  // Full covariance: K_xx − CᵀC + BᵀB with C = L⁻¹K_zx and B = Sᵀ K_zz⁻¹ K_zx.
  const Matrix kxx = kernel(x, x);
  const Matrix ct = transpose(tri_solve(prior.chol, kzx));
  Matrix bt(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> a(projections[i].weights);
    for (std::size_t j = 0; j < m; ++j) bt(i, j) = dot(g.factor_t.row(j).subspan(j), a.subspan(j));
  }
  out.cov = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.cov(i, j) = kxx(i, j) - dot(ct.row(i), ct.row(j)) + dot(bt.row(i), bt.row(j));
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(), j.at("data").get<Vector>());
}

inline nlohmann::json to_json(const VariationalGaussian& q) {
  return {{"mean", q.mean}, {"raw_factor", q.raw_factor}};
}

inline VariationalGaussian gaussian_from_json(const nlohmann::json& j) {
  Vector mean = j.at("mean").get<Vector>();
  VariationalGaussian q(mean.size());
  q.mean = std::move(mean);
  q.raw_factor = j.at("raw_factor").get<Vector>();
  if (q.raw_factor.size() != num_coefficients(q.dim()))
    throw LayoutMismatch("state JSON: raw_factor length does not match mean length");
  return q;
}

/// Model state document: inducing inputs, every variational factor (mean and
/// packed log-diagonal factor), hyperparameters and kernel configuration.
/// Doubles are emitted in shortest round-trip form, so the encoding is lossless.
inline nlohmann::json state_to_json(const VariationalState& s, const HyperParams& h) {
  nlohmann::json j;
  j["format"] = "cnmgp-state/1";
  j["num_outputs"] = s.num_outputs();
  j["inducing"] = to_json(s.inducing.Z);
  nlohmann::json qu = nlohmann::json::array();
  for (std::size_t i = 0; i < s.num_outputs(); ++i)
    for (std::size_t jj = 0; jj <= i; ++jj) {
      nlohmann::json e = to_json(s.u(i, jj));
      e["i"] = i + 1;
      e["j"] = jj + 1;
      qu.push_back(std::move(e));
    }
  j["q_u"] = std::move(qu);
  nlohmann::json qw = nlohmann::json::array();
  for (const auto& q : s.q_w) qw.push_back(to_json(q));
  j["q_w"] = std::move(qw);
  j["q_v"] = to_json(s.q_v);
  j["hypers"] = {
      {"log_sigma2_err", h.log_sigma2_err},
      {"theta_l", {{"log_variance", h.log_l_variance}, {"log_lengthscale", h.log_l_lengthscale}}},
      {"theta_ell", {{"log_variance", h.log_ell_variance}, {"log_lengthscale", h.log_ell_lengthscale}}},
      {"trainable",
       {{"sigma2_err", h.trainable.sigma2_err},
        {"l_variance", h.trainable.l_variance},
        {"l_lengthscale", h.trainable.l_lengthscale},
        {"ell_variance", h.trainable.ell_variance},
        {"ell_lengthscale", h.trainable.ell_lengthscale},
        {"inducing", h.trainable.inducing}}},
      // Derived positive values for readers; ignored on load.
      {"sigma2_err", h.sigma2_err()},
  };
  j["kernel"] = {{"family_l", "rbf"},
                 {"family_ell", "rbf"},
                 {"family_g", "gibbs"},
                 {"nugget", h.kernel.nugget},
                 {"base_jitter", h.kernel.base_jitter}};
  return j;
}

struct ModelState {
  VariationalState state;
  HyperParams hypers;
};

inline ModelState state_from_json(const nlohmann::json& j) {
  try {
    ModelState out;
    out.state.inducing.Z = matrix_from_json(j.at("inducing"));
    const auto d_out = j.at("num_outputs").get<std::size_t>();
    out.state.q_u.resize(num_coefficients(d_out));
    for (const auto& e : j.at("q_u")) {
      const auto i = e.at("i").get<std::size_t>();
      const auto jj = e.at("j").get<std::size_t>();
      if (i < 1 || jj < 1 || jj > i || i > d_out) throw LayoutMismatch("state JSON: bad q_u index");
      out.state.q_u[coef_index(i - 1, jj - 1)] = gaussian_from_json(e);
    }
    for (const auto& e : j.at("q_w")) out.state.q_w.push_back(gaussian_from_json(e));
    out.state.q_v = gaussian_from_json(j.at("q_v"));
    const auto& h = j.at("hypers");
    out.hypers.log_sigma2_err = h.at("log_sigma2_err").get<double>();
    out.hypers.log_l_variance = h.at("theta_l").at("log_variance").get<double>();
    out.hypers.log_l_lengthscale = h.at("theta_l").at("log_lengthscale").get<double>();
    out.hypers.log_ell_variance = h.at("theta_ell").at("log_variance").get<double>();
    out.hypers.log_ell_lengthscale = h.at("theta_ell").at("log_lengthscale").get<double>();
    const auto& t = h.at("trainable");
    out.hypers.trainable = {t.at("sigma2_err").get<bool>(),    t.at("l_variance").get<bool>(),
                            t.at("l_lengthscale").get<bool>(), t.at("ell_variance").get<bool>(),
                            t.at("ell_lengthscale").get<bool>(), t.at("inducing").get<bool>()};
    out.hypers.kernel.nugget = j.at("kernel").at("nugget").get<double>();
    out.hypers.kernel.base_jitter = j.at("kernel").at("base_jitter").get<double>();
    out.state.validate();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw LayoutMismatch(std::string("state JSON: ") + e.what());
  }
}

}  // namespace cnmgp
