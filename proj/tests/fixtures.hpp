#pragma once

// Small randomized model instances shared by several suites.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "cnmgp/data.hpp"
#include "cnmgp/model.hpp"

namespace fixture {

inline cnmgp::VariationalGaussian random_gaussian(std::size_t m, double mean_scale, double factor_scale,
                                                  std::mt19937_64& gen) {
  std::normal_distribution<double> nd(0.0, 1.0);
  cnmgp::VariationalGaussian q(m);
  for (double& x : q.mean) x = mean_scale * nd(gen);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      q.raw_factor[cnmgp::coef_index(i, j)] = i == j ? std::log(factor_scale) + 0.2 * nd(gen) : 0.3 * factor_scale * nd(gen);
  return q;
}

/// Random state with M inducing points spread over [0, 1]^P.
inline cnmgp::VariationalState random_state(std::size_t d_out, std::size_t m, std::size_t p, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  cnmgp::VariationalState s;
  s.inducing.Z = cnmgp::Matrix(m, p);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < p; ++k)
      s.inducing.Z(i, k) = p == 1 ? (static_cast<double>(i) + 0.5 * u(gen)) / static_cast<double>(m) : u(gen);
  for (std::size_t c = 0; c < cnmgp::num_coefficients(d_out); ++c) s.q_u.push_back(random_gaussian(m, 0.5, 0.3, gen));
  for (std::size_t d = 0; d < d_out; ++d) s.q_w.push_back(random_gaussian(m, 0.8, 0.3, gen));
  s.q_v = random_gaussian(m, 0.3, 0.2, gen);
  for (double& v : s.q_v.mean) v -= 1.0;
  s.validate();
  return s;
}

inline cnmgp::HyperParams tiny_hypers() {
  cnmgp::HyperParams h = cnmgp::HyperParams::make(0.3, {1.2, 0.4}, {0.5, 0.6});
  h.trainable.l_lengthscale = true;
  h.trainable.ell_lengthscale = true;
  return h;
}

/// N rows of P-dimensional inputs in [0, 1] with D outputs, about a quarter of
/// the entries unobserved (every row keeps at least one).
inline cnmgp::Dataset random_dataset(std::size_t n, std::size_t d_out, std::size_t p, std::uint64_t seed,
                                     bool with_missing = true) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  cnmgp::Matrix x(n, p), y(n, d_out);
  std::vector<std::uint8_t> mask(n * d_out, 1);
  for (double& v : x.data()) v = u(gen);
  for (double& v : y.data()) v = nd(gen);
  if (with_missing)
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t keep = static_cast<std::size_t>(u(gen) * static_cast<double>(d_out));
      for (std::size_t d = 0; d < d_out; ++d)
        if (d != keep && u(gen) < 0.3) mask[r * d_out + d] = 0;
    }
  return cnmgp::Dataset(std::move(x), std::move(y), std::move(mask));
}

}  // namespace fixture
