#pragma once

// Minibatch Adam ascent on the stochastic ELBO, with traces and checkpoints.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnmgp/data.hpp"
#include "cnmgp/diff.hpp"
#include "cnmgp/elbo.hpp"
#include "cnmgp/kernels.hpp"
#include "cnmgp/model.hpp"
#include "cnmgp/random.hpp"

namespace cnmgp {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t epochs = 2000;
  std::size_t batch_size = 256;
  double learning_rate = 0.005;
  std::size_t n_samples = 1;
  Estimator method = Estimator::marginalized;
  Coordinates coordinates = Coordinates::whitened;
  std::uint64_t seed = 0;
  AdamConfig adam;
  /// Write a checkpoint every this many steps; 0 disables periodic checkpoints.
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  /// Stop after this many steps even if epochs remain; 0 means no limit.
  std::size_t max_steps = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be at least 1");
    if (n_samples < 1) throw ConfigError("TrainConfig: n_samples must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("TrainConfig: learning_rate must be positive");
    if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0) || !(adam.beta2 > 0.0 && adam.beta2 < 1.0))
      throw ConfigError("TrainConfig: Adam betas must lie in (0, 1)");
    if (!(adam.eps > 0.0)) throw ConfigError("TrainConfig: Adam eps must be positive");
    if (checkpoint_every > 0 && checkpoint_path.empty())
      throw ConfigError("TrainConfig: checkpoint_every needs a checkpoint_path");
  }
};

struct TraceRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double elbo = 0.0;
  double grad_norm = 0.0;
  /// Wall time since training started, at the end of this step.
  double seconds = 0.0;
};

struct TrainTrace {
  std::vector<TraceRecord> records;
};

struct TrainResult {
  VariationalState state;
  HyperParams hypers;
  TrainTrace trace;
};

/// Raised when a step produces a non-finite ELBO or gradient. Carries the
/// parameters from before the failing step.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& what, TrainResult last_good)
      : NumericalError(what), last_good_(std::move(last_good)) {}
  const TrainResult& last_good() const noexcept { return last_good_; }

 private:
  TrainResult last_good_;
};

inline void write_checkpoint(const std::filesystem::path& path, const ModelState& s, std::size_t step) {
  nlohmann::json j = state_to_json(s.state, s.hypers);
  j["step"] = step;
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot write " + tmp.string());
    out << j.dump(1) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

/// Rows with at least one observed entry, in their original order.
inline Dataset compact(const Dataset& ds) {
  const std::vector<std::size_t> rows = ds.active_rows();
  if (rows.size() == ds.num_rows()) return ds;
  Matrix x(rows.size(), ds.num_inputs()), y(rows.size(), ds.num_outputs());
  std::vector<std::uint8_t> mask(rows.size() * ds.num_outputs(), 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t p = 0; p < ds.num_inputs(); ++p) x(r, p) = ds.X()(rows[r], p);
    for (std::size_t d = 0; d < ds.num_outputs(); ++d)
      if (ds.observed(rows[r], d)) {
        y(r, d) = ds.y(rows[r], d);
        mask[r * ds.num_outputs() + d] = 1;
      }
  }
  Dataset out(std::move(x), std::move(y), std::move(mask));
  out.input_names = ds.input_names;
  out.output_names = ds.output_names;
  out.scaling = ds.scaling;
  return out;
}

namespace detail {
inline constexpr std::uint64_t kEpochStream = 0x3A0C;
inline constexpr std::uint64_t kStepStream = 0x57E9;
}  // namespace detail

/// Maximizes the ELBO estimate with Adam. Fully unobserved rows are dropped
/// first, so they influence neither minibatch composition nor noise streams.
inline TrainResult train(const Dataset& dataset, const VariationalState& init, const HyperParams& hypers,
                         const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  if (dataset.observed_count() == 0) throw NoObservedEntries("train: dataset has no observed entries");
  const Dataset ds = compact(dataset);
  const std::size_t n_rows = ds.num_rows();
  const std::size_t steps_per_epoch = (n_rows + cfg.batch_size - 1) / cfg.batch_size;

  TrainResult result{init, hypers, {}};
  auto abort = [&](std::size_t step, const ModelState& last, const NumericalError& e) {
    result.state = last.state;
    result.hypers = last.hypers;
    if (!cfg.checkpoint_path.empty()) write_checkpoint(cfg.checkpoint_path, last, step);
    return TrainingAborted(std::string("train: aborted at step ") + std::to_string(step) + ": " + e.what(),
                           std::move(result));
  };
  // Coordinate round trips are exact only up to rounding, so step 0 reports init itself.
  auto current = [&](const ParamVector& p, std::size_t step) {
    return step == 0 ? ModelState{init, hypers} : unpack(p);
  };
  ParamVector p;
  try {
    p = pack(init, hypers, cfg.coordinates);
  } catch (const NumericalError& e) {
    throw abort(0, ModelState{init, hypers}, e);
  }
  const std::size_t n_par = p.values.size();
  Vector m1(n_par, 0.0), m2(n_par, 0.0);
  if (cfg.max_steps == 0) result.trace.records.reserve(cfg.epochs * steps_per_epoch);

  std::vector<std::size_t> order(n_rows);
  std::vector<std::size_t> batch;
  batch.reserve(cfg.batch_size);
  const auto start = std::chrono::steady_clock::now();
  double b1_pow = 1.0, b2_pow = 1.0;
  std::size_t step = 0;
  bool done = cfg.max_steps > 0 && step >= cfg.max_steps;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffler(derive_seed(cfg.seed, epoch, detail::kEpochStream));
    std::shuffle(order.begin(), order.end(), shuffler);
    for (std::size_t b = 0; b < steps_per_epoch && !done; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n_rows, lo + cfg.batch_size);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi));
      ElboGradient g;
      try {
        g = grad_elbo(ds, batch, cfg.method, cfg.n_samples, derive_seed(cfg.seed, step, detail::kStepStream), p);
      } catch (const NumericalError& e) {
        throw abort(step, current(p, step), e);
      }
      b1_pow *= cfg.adam.beta1;
      b2_pow *= cfg.adam.beta2;
      double norm2 = 0.0;
      for (std::size_t i = 0; i < n_par; ++i) {
        const double gi = g.gradient[i];
        norm2 += gi * gi;
        m1[i] = cfg.adam.beta1 * m1[i] + (1.0 - cfg.adam.beta1) * gi;
        m2[i] = cfg.adam.beta2 * m2[i] + (1.0 - cfg.adam.beta2) * gi * gi;
        const double mhat = m1[i] / (1.0 - b1_pow);
        const double vhat = m2[i] / (1.0 - b2_pow);
        p.values[i] += cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam.eps);
      }
      ++step;
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.trace.records.push_back({step, epoch, g.value, std::sqrt(norm2), seconds});
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
        write_checkpoint(cfg.checkpoint_path, unpack(p), step);
      done = cfg.max_steps > 0 && step >= cfg.max_steps;
    }
  }
  const ModelState final_state = current(p, step);
  result.state = final_state.state;
  result.hypers = final_state.hypers;
  return result;
}

/// Initial variational state: Z spread over the observed inputs, zero means,
/// factors 0.1·chol(K(Z,Z)) of each process's prior, with ℓ(Z) = 1 for q(w).
inline VariationalState default_init(const Dataset& ds, std::size_t m, const HyperParams& hypers) {
  if (m < 1) throw ConfigError("default_init: M must be at least 1");
  const std::vector<std::size_t> rows = ds.active_rows();
  if (rows.empty()) throw NoObservedEntries("default_init: dataset has no observed entries");
  const std::size_t p_in = ds.num_inputs();
  VariationalState s;
  if (p_in == 1) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t r : rows) {
      lo = std::min(lo, ds.X()(r, 0));
      hi = std::max(hi, ds.X()(r, 0));
    }
    s.inducing = InducingSet::equispaced(lo, hi, m);
  } else {
    // Farthest-point selection from the observed inputs, starting at the first row.
    s.inducing.Z = Matrix(m, p_in);
    std::vector<double> dist(rows.size(), std::numeric_limits<double>::infinity());
    std::size_t pick = 0;
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t c = 0; c < p_in; ++c) s.inducing.Z(k, c) = ds.X()(rows[pick], c);
      std::size_t next = 0;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const double d2 = detail::squared_distance(ds.X().row(rows[r]), std::as_const(s.inducing.Z).row(k));
        dist[r] = std::min(dist[r], d2);
        if (dist[r] > dist[next]) next = r;
      }
      pick = next;
    }
  }
  s.inducing.validate();

  auto shrunk_prior = [&](Matrix gram, double variance) {
    const auto prior = make_inducing_prior<double>(std::move(gram), variance, hypers.kernel);
    Matrix l = prior.chol.L;
    for (double& x : l.data()) x *= 0.1;
    return VariationalGaussian::from_factor(Vector(m, 0.0), l);
  };
  const Matrix& z = s.inducing.Z;
  const std::size_t d_out = ds.num_outputs();
  const VariationalGaussian qu = shrunk_prior(rbf_gram(z, hypers.theta_l()), hypers.theta_l().variance);
  s.q_u.assign(num_coefficients(d_out), qu);
  const Vector unit(m, 1.0);
  s.q_w.assign(d_out, shrunk_prior(gibbs_gram(z, std::span<const double>(unit)), 1.0));
  s.q_v = shrunk_prior(rbf_gram(z, hypers.theta_ell()), hypers.theta_ell().variance);
  return s;
}

inline void write_trace_csv(const TrainTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_trace_csv: cannot write " + path.string());
  out << "step,epoch,elbo,grad_norm,seconds\n";
  for (const auto& r : trace.records)
    out << r.step << ',' << r.epoch << ',' << format_double(r.elbo) << ',' << format_double(r.grad_norm) << ','
        << format_double(r.seconds) << '\n';
}

/// Trailing moving average with the given window (shorter at the start).
inline Vector smoothed_elbo(const TrainTrace& trace, std::size_t window) {
  Vector out(trace.records.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    acc += trace.records[i].elbo;
    if (i >= window) acc -= trace.records[i - window].elbo;
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

}  // namespace cnmgp
