#pragma once

// Posterior predictive sampling, correlation and lengthscale tracks, and
// interval metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cnmgp/data.hpp"
#include "cnmgp/elbo.hpp"
#include "cnmgp/model.hpp"
#include "cnmgp/random.hpp"

namespace cnmgp {

/// Per (point, output) summaries; each matrix is points × D.
struct PredictiveSummary {
  Matrix mean;
  Matrix lower;
  Matrix upper;
};

struct PredictiveSamples {
  Matrix x_star;
  /// draws[s] is points × D.
  std::vector<Matrix> draws;
  /// log ℓ(x*) per draw, draws × points.
  Matrix log_lengthscale;
  PredictiveSummary summary;

  std::size_t num_draws() const noexcept { return draws.size(); }
};

/// Linear-interpolation (type 7) quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double prob) {
  if (v.empty()) throw ConfigError("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline PredictiveSummary summarize(const std::vector<Matrix>& draws, double level = 0.95) {
  if (draws.empty()) throw ConfigError("summarize: need at least one draw");
  const std::size_t n = draws[0].rows(), d_out = draws[0].cols();
  PredictiveSummary out{Matrix(n, d_out), Matrix(n, d_out), Matrix(n, d_out)};
  const double tail = 0.5 * (1.0 - level);
  std::vector<double> column(draws.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < d_out; ++d) {
      double sum = 0.0;
      for (std::size_t s = 0; s < draws.size(); ++s) {
        column[s] = draws[s](i, d);
        sum += column[s];
      }
      out.mean(i, d) = sum / static_cast<double>(draws.size());
      out.lower(i, d) = quantile(column, tail);
      out.upper(i, d) = quantile(column, 1.0 - tail);
    }
  return out;
}

namespace detail {

inline constexpr std::uint64_t kPredictShared = 0x9D1C;

/// One joint draw of (ℓ, L, g, ε) at every point of x_star. Point n of draw s
/// reads stream derive_seed(seed, s, n): z^ℓ, z^l, z^g, z^ε.
struct PointDraw {
  double log_ell;
  Matrix l;
  Vector g;
  Vector eps;
};

class PredictiveSampler {
 public:
  PredictiveSampler(const VariationalState& state, const HyperParams& hypers, const Matrix& x_star)
      : p_(materialize(state, hypers)), priors_(stationary_priors(p_)), x_(x_star) {
    if (x_star.cols() != p_.Z.cols()) throw DimensionMismatch("predict: input dimension differs from model");
    statics_.reserve(x_.rows());
    for (std::size_t n = 0; n < x_.rows(); ++n) statics_.push_back(row_statics(p_, priors_, x_.row(n)));
  }

  std::size_t num_outputs() const noexcept { return p_.num_outputs(); }
  double sigma2_err() const noexcept { return p_.sigma2_err; }

  template <class Fn>
  void draw(std::uint64_t seed, std::size_t s, Fn&& per_point) const {
    const std::size_t m = p_.num_inducing();
    const std::size_t d_out = p_.num_outputs();
    NormalStream shared(derive_seed(seed, s, kSharedStream));
    const Vector z_v = shared.take(m);
    const Vector v = draw_v(p_.q_v, z_v);
    Vector ell_z(m);
    for (std::size_t i = 0; i < m; ++i) ell_z[i] = std::exp(v[i]);
    const InducingPrior<double> gprior = gibbs_prior(p_, ell_z);
    PointDraw pd;
    pd.g.resize(d_out);
    for (std::size_t n = 0; n < x_.rows(); ++n) {
      NormalStream stream(derive_seed(seed, s, n));
      const double z_ell = stream.next();
      const Vector z_l = stream.take(num_coefficients(d_out));
      const Vector z_g = stream.take(d_out);
      pd.eps = stream.take(d_out);
      const double ell = draw_ell(statics_[n], v, z_ell);
      pd.log_ell = std::log(ell);
      pd.l = draw_coefficients(statics_[n], z_l, d_out);
      const auto gm = g_moments_at(p_, gprior, x_.row(n), ell, ell_z);
      for (std::size_t d = 0; d < d_out; ++d) pd.g[d] = gm[d].mean + std::sqrt(std::max(gm[d].variance, 0.0)) * z_g[d];
      per_point(n, pd);
    }
  }

 private:
  ModelParams<double> p_;
  StationaryPriors<double> priors_;
  Matrix x_;
  std::vector<RowStatics<double>> statics_;
};

/// Runs body(s) for s in [0, count) over `threads` workers; each s is handled once.
template <class Body>
void parallel_draws(std::size_t count, std::size_t threads, Body&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t s = 0; s < count; ++s) body(s);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t s = t; s < count; s += threads) body(s);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// S joint draws of y* = L(x*)·g(x*) (+ ε) from the variational posterior.
/// g* is conditioned only on the inducing variables and the ℓ draw at (x*, Z).
inline PredictiveSamples predictive_samples(const VariationalState& state, const HyperParams& hypers,
                                            const Matrix& x_star, std::size_t n_draws, std::uint64_t seed,
                                            bool include_noise, std::size_t threads = 1) {
  if (n_draws < 1) throw ConfigError("predictive_samples: need at least one draw");
  const detail::PredictiveSampler sampler(state, hypers, x_star);
  const std::size_t n = x_star.rows(), d_out = sampler.num_outputs();
  const double noise_sd = std::sqrt(sampler.sigma2_err());
  PredictiveSamples out;
  out.x_star = x_star;
  out.draws.assign(n_draws, Matrix(n, d_out));
  out.log_lengthscale = Matrix(n_draws, n);
  detail::parallel_draws(n_draws, threads, [&](std::size_t s) {
    Matrix& y = out.draws[s];
    sampler.draw(seed, s, [&](std::size_t i, const detail::PointDraw& pd) {
      out.log_lengthscale(s, i) = pd.log_ell;
      for (std::size_t d = 0; d < d_out; ++d) {
        double f = dot(pd.l.row(d).first(d + 1), std::span<const double>(pd.g).first(d + 1));
        if (include_noise) f += noise_sd * pd.eps[d];
        y(i, d) = f;
      }
    });
  });
  out.summary = summarize(out.draws);
  return out;
}

struct CorrelationTrack {
  Matrix grid;
  /// Posterior-mean correlation matrix per grid point.
  std::vector<Matrix> corr;
  /// Posterior mean of log ℓ per grid point.
  Vector log_lengthscale;
};

/// Correlation matrix of Σ = L·Lᵀ.
inline Matrix instantaneous_correlation(const Matrix& l) {
  const Matrix sigma = outer_lower(l);
  const std::size_t d_out = sigma.rows();
  for (std::size_t i = 0; i < d_out; ++i)
    if (!(sigma(i, i) >= 1e-12)) throw DegenerateCovariance("correlation: diagonal of L·Lᵀ below 1e-12");
  Matrix c(d_out, d_out);
  for (std::size_t i = 0; i < d_out; ++i)
    for (std::size_t j = 0; j < d_out; ++j)
      c(i, j) = i == j ? 1.0 : std::clamp(sigma(i, j) / std::sqrt(sigma(i, i) * sigma(j, j)), -1.0, 1.0);
  return c;
}

inline CorrelationTrack correlation_track(const VariationalState& state, const HyperParams& hypers,
                                          const Matrix& grid, std::size_t n_draws, std::uint64_t seed,
                                          std::size_t threads = 1) {
  if (n_draws < 1) throw ConfigError("correlation_track: need at least one draw");
  const detail::PredictiveSampler sampler(state, hypers, grid);
  const std::size_t n = grid.rows(), d_out = sampler.num_outputs();
  std::vector<std::vector<Matrix>> per_draw(n_draws, std::vector<Matrix>(n));
  Matrix log_ell(n_draws, n);
  detail::parallel_draws(n_draws, threads, [&](std::size_t s) {
    sampler.draw(seed, s, [&](std::size_t i, const detail::PointDraw& pd) {
      per_draw[s][i] = instantaneous_correlation(pd.l);
      log_ell(s, i) = pd.log_ell;
    });
  });
  CorrelationTrack out{grid, std::vector<Matrix>(n, Matrix(d_out, d_out)), Vector(n, 0.0)};
  const double inv = 1.0 / static_cast<double>(n_draws);
  for (std::size_t s = 0; s < n_draws; ++s)
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d_out * d_out; ++k) out.corr[i].data()[k] += per_draw[s][i].data()[k] * inv;
      out.log_lengthscale[i] += log_ell(s, i) * inv;
    }
  for (auto& c : out.corr)
    for (std::size_t d = 0; d < d_out; ++d) c(d, d) = 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct TestEntry {
  std::size_t point = 0;
  std::size_t output = 0;
  double y = 0.0;
};

/// Observed entries of a dataset, indexed by row.
inline std::vector<TestEntry> test_entries(const Dataset& ds) {
  std::vector<TestEntry> out;
  for (std::size_t n = 0; n < ds.num_rows(); ++n)
    for (std::size_t d = 0; d < ds.num_outputs(); ++d)
      if (ds.observed(n, d)) out.push_back({n, d, ds.y(n, d)});
  return out;
}

struct Metrics {
  double rmse = 0.0;
  double alci = 0.0;
  double cr = 0.0;
  std::size_t count = 0;
};

/// RMSE of the means, mean interval width (upper − lower), and the fraction
/// of entries inside their closed interval.
inline Metrics metrics(std::span<const TestEntry> entries, const PredictiveSummary& s) {
  if (entries.empty()) throw EmptyTestSet("metrics: no test entries");
  double se = 0.0, width = 0.0;
  std::size_t inside = 0;
  for (const auto& e : entries) {
    if (e.point >= s.mean.rows() || e.output >= s.mean.cols())
      throw DimensionMismatch("metrics: test entry outside the prediction grid");
    const double r = s.mean(e.point, e.output) - e.y;
    se += r * r;
    width += s.upper(e.point, e.output) - s.lower(e.point, e.output);
    if (e.y >= s.lower(e.point, e.output) && e.y <= s.upper(e.point, e.output)) ++inside;
  }
  const double n = static_cast<double>(entries.size());
  return {std::sqrt(se / n), width / n, static_cast<double>(inside) / n, entries.size()};
}

/// Maps a summary computed on standardized outputs back to original units.
inline PredictiveSummary destandardize(const PredictiveSummary& s, const std::vector<OutputScaling>& scaling) {
  if (scaling.size() != s.mean.cols()) throw DimensionMismatch("destandardize: one scaling per output needed");
  PredictiveSummary out = s;
  for (std::size_t i = 0; i < s.mean.rows(); ++i)
    for (std::size_t d = 0; d < s.mean.cols(); ++d) {
      const auto [mu, sd] = scaling[d];
      out.mean(i, d) = s.mean(i, d) * sd + mu;
      out.lower(i, d) = s.lower(i, d) * sd + mu;
      out.upper(i, d) = s.upper(i, d) * sd + mu;
    }
  return out;
}

// ---------------------------------------------------------------------------
// CSV output

inline void write_predictions_csv(const std::filesystem::path& path, const Matrix& x_star,
                                  const std::vector<std::string>& input_names, const PredictiveSummary& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_predictions_csv: cannot write " + path.string());
  for (const auto& name : input_names) out << detail::csv_quote(name) << ',';
  out << "output,mean,lower95,upper95\n";
  for (std::size_t i = 0; i < x_star.rows(); ++i)
    for (std::size_t d = 0; d < s.mean.cols(); ++d) {
      for (std::size_t p = 0; p < x_star.cols(); ++p) out << format_double(x_star(i, p)) << ',';
      out << d + 1 << ',' << format_double(s.mean(i, d)) << ',' << format_double(s.lower(i, d)) << ','
          << format_double(s.upper(i, d)) << '\n';
    }
}

/// One line per grid point and output pair i ≤ j (1-based).
inline void write_correlations_csv(const std::filesystem::path& path, const CorrelationTrack& track,
                                   const std::vector<std::string>& input_names) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_correlations_csv: cannot write " + path.string());
  for (const auto& name : input_names) out << detail::csv_quote(name) << ',';
  out << "i,j,corr,log_lengthscale\n";
  for (std::size_t g = 0; g < track.grid.rows(); ++g) {
    const Matrix& c = track.corr[g];
    for (std::size_t i = 0; i < c.rows(); ++i)
      for (std::size_t j = i; j < c.cols(); ++j) {
        for (std::size_t p = 0; p < track.grid.cols(); ++p) out << format_double(track.grid(g, p)) << ',';
        out << i + 1 << ',' << j + 1 << ',' << format_double(c(i, j)) << ','
            << format_double(track.log_lengthscale[g]) << '\n';
      }
  }
}

}  // namespace cnmgp
