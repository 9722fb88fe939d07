#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cnmgp/elbo.hpp"
#include "elbo_oracle.hpp"
#include "fixtures.hpp"

using cnmgp::Estimator;
using cnmgp::Matrix;
using cnmgp::Vector;

TEST(Elbo, MatchesDenseReferenceForBothEstimators) {
  for (std::uint64_t trial = 0; trial < 4; ++trial) {
    const auto ds = fixture::random_dataset(12, 2, 1, 100 + trial);
    const auto st = fixture::random_state(2, 5, 1, 200 + trial);
    const auto h = fixture::tiny_hypers();
    const std::vector<std::size_t> batch = {0, 3, 4, 7, 11};
    for (auto method : {Estimator::direct, Estimator::marginalized}) {
      const double got = cnmgp::elbo_minibatch(ds, batch, st, h, method, 3, 77 + trial).elbo;
      const double want = oracle::reference_elbo(ds, batch, st, h, method, 3, 77 + trial);
      EXPECT_NEAR(got, want, 1e-8 * std::abs(want)) << cnmgp::to_string(method) << " trial " << trial;
    }
  }
}

TEST(Elbo, ThreeOutputsTwoInputs) {
  const auto ds = fixture::random_dataset(9, 3, 2, 5);
  const auto st = fixture::random_state(3, 6, 2, 6);
  const auto h = fixture::tiny_hypers();
  const auto batch = cnmgp::all_rows(ds);
  for (auto method : {Estimator::direct, Estimator::marginalized}) {
    const double got = cnmgp::elbo_minibatch(ds, batch, st, h, method, 2, 8).elbo;
    EXPECT_NEAR(got, oracle::reference_elbo(ds, batch, st, h, method, 2, 8), 1e-8 * std::abs(got));
  }
}

TEST(Elbo, BreakdownSumsToTotal) {
  const auto ds = fixture::random_dataset(10, 2, 1, 1);
  const auto st = fixture::random_state(2, 4, 1, 2);
  const auto b = cnmgp::elbo_minibatch(ds, cnmgp::all_rows(ds), st, fixture::tiny_hypers(), Estimator::direct, 1, 3);
  EXPECT_EQ(b.elbo, b.expected_loglik - (b.kl_u + b.kl_w + b.kl_v));
  EXPECT_GT(b.kl_u, 0.0);
  EXPECT_GT(b.kl_w, 0.0);
  EXPECT_GT(b.kl_v, 0.0);
}

TEST(Elbo, AllObservedMaskIsBitIdenticalToMaskFree) {
  const auto base = fixture::random_dataset(15, 2, 1, 4, false);
  const cnmgp::Dataset plain(base.X(), base.Y());
  const cnmgp::Dataset masked(base.X(), base.Y(), std::vector<std::uint8_t>(30, 1));
  const auto st = fixture::random_state(2, 5, 1, 9);
  const auto h = fixture::tiny_hypers();
  const std::vector<std::size_t> batch = {1, 2, 8, 14};
  for (auto method : {Estimator::direct, Estimator::marginalized}) {
    const auto a = cnmgp::elbo_minibatch(plain, batch, st, h, method, 2, 5);
    const auto b = cnmgp::elbo_minibatch(masked, batch, st, h, method, 2, 5);
    EXPECT_EQ(a.elbo, b.elbo);
  }
}

TEST(Elbo, PerRowNoiseDoesNotDependOnBatchComposition) {
  // The unscaled likelihood of a batch is the sum over its rows.
  const auto ds = fixture::random_dataset(10, 2, 1, 12);
  const auto st = fixture::random_state(2, 4, 1, 13);
  const auto h = fixture::tiny_hypers();
  auto unscaled = [&](std::vector<std::size_t> rows) {
    std::size_t obs = 0;
    for (auto r : rows) obs += ds.row_observed_count(r);
    const auto b = cnmgp::elbo_minibatch(ds, rows, st, h, Estimator::direct, 1, 21);
    return b.expected_loglik * static_cast<double>(obs) / static_cast<double>(ds.observed_count());
  };
  EXPECT_NEAR(unscaled({2, 5, 7}), unscaled({2}) + unscaled({5}) + unscaled({7}), 1e-10);
}

TEST(Elbo, FullyMaskedRowsContributeNothing) {
  auto base = fixture::random_dataset(8, 2, 1, 30);
  auto mask = base.mask();
  mask[2 * 2] = mask[2 * 2 + 1] = 0;
  const auto ds = cnmgp::with_outputs(base, base.Y(), mask);
  const auto st = fixture::random_state(2, 4, 1, 31);
  const auto h = fixture::tiny_hypers();
  const auto with_row = cnmgp::elbo_minibatch(ds, std::vector<std::size_t>{1, 2, 3}, st, h, Estimator::direct, 1, 4);
  const auto without = cnmgp::elbo_minibatch(ds, std::vector<std::size_t>{1, 3}, st, h, Estimator::direct, 1, 4);
  EXPECT_EQ(with_row.elbo, without.elbo);
  EXPECT_THROW(cnmgp::elbo_minibatch(ds, std::vector<std::size_t>{}, st, h, Estimator::direct, 1, 4),
               cnmgp::EmptyBatch);
}

TEST(ExpectedLoglik, MarginalizedEqualsMonteCarloOfDirect) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int cfg = 0; cfg < 5; ++cfg) {
    const std::size_t d = 1 + static_cast<std::size_t>(cfg % 3);
    Vector l(d), mu(d), var(d);
    for (std::size_t j = 0; j < d; ++j) {
      l[j] = nd(gen);
      mu[j] = nd(gen);
      var[j] = u(gen);
    }
    const double sigma2 = u(gen), y = nd(gen);
    const double closed = cnmgp::expected_loglik_marginalized<double>(y, l, mu, var, sigma2);
    oracle::MeanAccumulator acc;
    Vector g(d);
    for (int s = 0; s < 200000; ++s) {
      for (std::size_t j = 0; j < d; ++j) g[j] = mu[j] + std::sqrt(var[j]) * nd(gen);
      acc.add(cnmgp::expected_loglik_direct<double>(y, l, g, sigma2));
    }
    EXPECT_NEAR(acc.mean, closed, 3.0 * acc.standard_error()) << "config " << cfg;
  }
}

TEST(Sampling, LengthscaleAndCoefficientDrawsArePositiveWhereRequired) {
  const auto st = fixture::random_state(2, 5, 1, 40);
  const auto h = fixture::tiny_hypers();
  Matrix x(6, 1);
  for (std::size_t i = 0; i < 6; ++i) x(i, 0) = 0.2 * static_cast<double>(i);
  cnmgp::NormalStream rng(1);
  auto sample = cnmgp::sample_lengthscale(st, h, x, rng);
  cnmgp::sample_coefficients(st, h, x, rng, sample);
  ASSERT_EQ(sample.ell_batch.size(), 6u);
  for (double e : sample.ell_batch) EXPECT_GT(e, 0.0);
  for (const auto& l : sample.l_batch) {
    EXPECT_GT(l(0, 0), 0.0);
    EXPECT_GT(l(1, 1), 0.0);
    EXPECT_EQ(l(0, 1), 0.0);
  }
  const auto g = cnmgp::g_marginal_moments(st, h, x, sample.ell_batch, sample.v_draw);
  for (double v : g.var.data()) EXPECT_GE(v, 0.0);
}

TEST(Sampling, CoefficientMomentsMatchMonteCarlo) {
  // With exp on the diagonal, E[l_ii] = exp(μ + σ²/2).
  const auto st = fixture::random_state(1, 4, 1, 50);
  const auto h = fixture::tiny_hypers();
  Matrix x(1, 1, 0.37);
  const auto mom = cnmgp::variational_marginal_moments(cnmgp::rbf_kernel_fn(h.theta_l()), x, st.inducing,
                                                       st.q_u[0], true, h.kernel.nugget * h.theta_l().variance);
  oracle::MeanAccumulator acc;
  cnmgp::NormalStream rng(2);
  for (int s = 0; s < 20000; ++s) acc.add(cnmgp::sample_coefficients(st, h, x, rng).l_batch[0](0, 0));
  EXPECT_NEAR(acc.mean, std::exp(mom.mean[0] + 0.5 * mom.variance[0]), 3.0 * acc.standard_error());
}
