#pragma once

// Independent exact GP regression per output (IGPR), the comparison model for
// the synthetic experiments. Each output is fit on its own observed entries
// only, with RBF hyperparameters chosen by maximizing the log marginal
// likelihood.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "cnmgp/data.hpp"
#include "cnmgp/errors.hpp"
#include "cnmgp/kernels.hpp"
#include "cnmgp/numcore.hpp"
#include "cnmgp/predict.hpp"
#include "cnmgp/random.hpp"

namespace cnmgp {

struct IgprConfig {
  std::size_t restarts = 5;
  std::size_t max_iterations = 200;
  /// Stop when the gradient's max-norm in log space drops below this.
  double gradient_tolerance = 1e-6;
};

struct IgprOutput {
  RbfKernel kernel;
  double noise = 1.0;
  Matrix X;
  Vector y;
  CholFactor<double> chol;  // of K + noise·I
  Vector alpha;             // (K + noise·I)⁻¹ y
  double log_marginal = 0.0;
  /// Log marginal likelihood at the start and end of every restart.
  std::vector<std::pair<double, double>> restart_trace;
};

struct IgprModel {
  std::vector<IgprOutput> outputs;
};

struct IgprPrediction {
  Matrix mean;      // points × D
  Matrix variance;  // includes the noise variance
};

namespace detail {

struct LmlEval {
  double value = -std::numeric_limits<double>::infinity();
  std::array<double, 3> grad{};
  CholFactor<double> chol;
  Vector alpha;
  bool ok = false;
};

/// Log marginal likelihood and its gradient in (log variance, log lengthscale, log noise).
inline LmlEval igpr_lml(const Matrix& x, const Vector& y, const std::array<double, 3>& theta) {
  LmlEval out;
  const double var = std::exp(theta[0]), ls = std::exp(theta[1]), noise = std::exp(theta[2]);
  if (!std::isfinite(var) || !std::isfinite(ls) || !std::isfinite(noise) || var <= 0 || ls <= 0 || noise <= 0)
    return out;
  const std::size_t n = y.size();
  const Matrix kf = rbf_gram(x, RbfKernel{var, ls});
  Matrix k = kf;
  for (std::size_t i = 0; i < n; ++i) k(i, i) += noise;
  Matrix l;
  if (!try_cholesky(k, 0.0, l)) return out;
  try {
    out.chol = CholFactor<double>::from_lower(std::move(l));
  } catch (const NotPositiveDefinite&) {
    return out;
  }
  const Vector beta = solve_lower<double, double>(out.chol.L, y);
  out.alpha = solve_upper<double, double>(transpose(out.chol.L), beta);
  double fit = 0.0;
  for (std::size_t i = 0; i < n; ++i) fit += y[i] * out.alpha[i];
  out.value = -0.5 * fit - 0.5 * out.chol.log_det - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);

  // K⁻¹ = W^T W with W = L⁻¹.
  const Matrix w = tri_solve(out.chol, Matrix::identity(n));
  Matrix kinv(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t r = i; r < n; ++r) s += w(r, i) * w(r, j);
      kinv(i, j) = kinv(j, i) = s;
    }
  // dLML/dθ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)
  double g_var = 0.0, g_ls = 0.0, g_noise = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double a = out.alpha[i] * out.alpha[j] - kinv(i, j);
      g_var += a * kf(i, j);
      g_ls += a * kf(i, j) * squared_distance(x.row(i), x.row(j)) / (ls * ls);
      if (i == j) g_noise += a * noise;
    }
  out.grad = {0.5 * g_var, 0.5 * g_ls, 0.5 * g_noise};
  out.ok = std::isfinite(out.value) && std::all_of(out.grad.begin(), out.grad.end(), [](double g) {
             return std::isfinite(g);
           });
  return out;
}

/// BFGS ascent with Armijo backtracking. The returned point never has a lower
/// objective than the start.
inline std::array<double, 3> igpr_bfgs(const Matrix& x, const Vector& y, std::array<double, 3> theta,
                                       const IgprConfig& cfg) {
  constexpr std::size_t k = 3;
  LmlEval cur = igpr_lml(x, y, theta);
  if (!cur.ok) return theta;
  std::array<std::array<double, k>, k> h{};  // inverse Hessian of the negated objective
  for (std::size_t i = 0; i < k; ++i) h[i][i] = 1.0;
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    double gmax = 0.0;
    for (double g : cur.grad) gmax = std::max(gmax, std::abs(g));
    if (gmax < cfg.gradient_tolerance) break;
    std::array<double, k> dir{};
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) dir[i] += h[i][j] * cur.grad[j];
    double slope = 0.0;
    for (std::size_t i = 0; i < k; ++i) slope += dir[i] * cur.grad[i];
    if (!(slope > 0.0)) {
      for (std::size_t i = 0; i < k; ++i) {
        h[i].fill(0.0);
        h[i][i] = 1.0;
        dir[i] = cur.grad[i];
      }
      slope = 0.0;
      for (double g : cur.grad) slope += g * g;
    }
    // Cap the step so one iteration moves each log-parameter by at most 3.
    double dmax = 0.0;
    for (double d : dir) dmax = std::max(dmax, std::abs(d));
    double step = dmax > 3.0 ? 3.0 / dmax : 1.0;
    LmlEval next;
    std::array<double, k> trial{};
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
      for (std::size_t i = 0; i < k; ++i) trial[i] = theta[i] + step * dir[i];
      next = igpr_lml(x, y, trial);
      if (next.ok && next.value >= cur.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    std::array<double, k> s{}, yv{};
    double sy = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      s[i] = trial[i] - theta[i];
      yv[i] = cur.grad[i] - next.grad[i];  // gradient change of the negated objective
      sy += s[i] * yv[i];
    }
    if (sy > 1e-12) {
      std::array<double, k> hy{};
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) hy[i] += h[i][j] * yv[j];
      double yhy = 0.0;
      for (std::size_t i = 0; i < k; ++i) yhy += yv[i] * hy[i];
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j)
          h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
    }
    const double gain = next.value - cur.value;
    theta = trial;
    cur = std::move(next);
    if (gain < 1e-10 * (1.0 + std::abs(cur.value))) break;
  }
  return theta;
}

}  // namespace detail

/// Fits one exact GP per output on that output's observed entries.
inline IgprModel igpr_fit(const Dataset& ds, std::uint64_t seed, const IgprConfig& cfg = {}) {
  if (cfg.restarts < 1) throw ConfigError("igpr_fit: at least one restart is needed");
  IgprModel model;
  const std::size_t p_in = ds.num_inputs();
  for (std::size_t d = 0; d < ds.num_outputs(); ++d) {
    std::vector<std::size_t> rows;
    for (std::size_t n = 0; n < ds.num_rows(); ++n)
      if (ds.observed(n, d)) rows.push_back(n);
    if (rows.size() < 2) throw DegenerateOutput("igpr_fit: output " + std::to_string(d) + " has fewer than 2 observations");
    IgprOutput out;
    out.X = Matrix(rows.size(), p_in);
    out.y.resize(rows.size());
    double mean = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < p_in; ++c) out.X(r, c) = ds.X()(rows[r], c);
      out.y[r] = ds.y(rows[r], d);
      mean += out.y[r];
    }
    mean /= static_cast<double>(rows.size());
    double vy = 0.0;
    for (double v : out.y) vy += (v - mean) * (v - mean);
    vy /= static_cast<double>(rows.size() - 1);
    double range = 0.0;
    for (std::size_t c = 0; c < p_in; ++c) {
      double lo = out.X(0, c), hi = lo;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        lo = std::min(lo, out.X(r, c));
        hi = std::max(hi, out.X(r, c));
      }
      range = std::max(range, hi - lo);
    }
    if (!(vy > 0.0) || !(range > 0.0))
      throw DegenerateOutput("igpr_fit: output " + std::to_string(d) + " has no spread in inputs or values");

    std::mt19937_64 gen(derive_seed(seed, d, 0x16B7));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double best = -std::numeric_limits<double>::infinity();
    std::array<double, 3> best_theta{};
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
      const std::array<double, 3> init = {
          std::log(vy) + (unit(gen) - 0.5),
          std::log(range) + std::log(0.01) + unit(gen) * std::log(1000.0),
          std::log(vy) + std::log(0.01) + unit(gen) * std::log(50.0),
      };
      const double start = detail::igpr_lml(out.X, out.y, init).value;
      const std::array<double, 3> theta = detail::igpr_bfgs(out.X, out.y, init, cfg);
      const double end = detail::igpr_lml(out.X, out.y, theta).value;
      out.restart_trace.emplace_back(start, end);
      if (end > best) {
        best = end;
        best_theta = theta;
      }
    }
    if (!std::isfinite(best)) throw NotPositiveDefinite("igpr_fit: no restart produced a valid fit");
    detail::LmlEval fit = detail::igpr_lml(out.X, out.y, best_theta);
    out.kernel = RbfKernel{std::exp(best_theta[0]), std::exp(best_theta[1])};
    out.noise = std::exp(best_theta[2]);
    out.chol = std::move(fit.chol);
    out.alpha = std::move(fit.alpha);
    out.log_marginal = fit.value;
    model.outputs.push_back(std::move(out));
  }
  return model;
}

/// Exact predictive mean and variance (noise included) per output.
inline IgprPrediction igpr_predict(const IgprModel& model, const Matrix& x_star) {
  const std::size_t d_out = model.outputs.size();
  IgprPrediction pred{Matrix(x_star.rows(), d_out), Matrix(x_star.rows(), d_out)};
  for (std::size_t d = 0; d < d_out; ++d) {
    const IgprOutput& o = model.outputs[d];
    if (x_star.cols() != o.X.cols()) throw DimensionMismatch("igpr_predict: input dimension differs from training");
    const Matrix ks = rbf_matrix(o.X, x_star, o.kernel);  // n × points
    const Matrix v = tri_solve(o.chol, ks);
    for (std::size_t p = 0; p < x_star.rows(); ++p) {
      double m = 0.0, q = 0.0;
      for (std::size_t i = 0; i < o.y.size(); ++i) {
        m += ks(i, p) * o.alpha[i];
        q += v(i, p) * v(i, p);
      }
      pred.mean(p, d) = m;
      pred.variance(p, d) = std::max(o.kernel.variance - q, 0.0) + o.noise;
    }
  }
  return pred;
}

/// Gaussian 95% intervals, mean ± 1.959964·sd.
inline PredictiveSummary igpr_summary(const IgprPrediction& pred) {
  constexpr double z = 1.959963984540054;
  PredictiveSummary s{pred.mean, pred.mean, pred.mean};
  for (std::size_t i = 0; i < pred.mean.size(); ++i) {
    const double sd = std::sqrt(pred.variance.data()[i]);
    s.lower.data()[i] -= z * sd;
    s.upper.data()[i] += z * sd;
  }
  return s;
}

}  // namespace cnmgp
