#include <gtest/gtest.h>

#include <cmath>

#include "cnmgp/diff.hpp"
#include "elbo_oracle.hpp"
#include "fixtures.hpp"

using cnmgp::Estimator;

namespace {

void expect_gradient_matches(const cnmgp::Vector& ad, const cnmgp::Vector& fd, const cnmgp::ParamVector& p) {
  ASSERT_EQ(ad.size(), fd.size());
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const std::string where = p.segment_at(i)->name + " @" + std::to_string(i);
    if (std::abs(fd[i]) <= 1e-6) {
      EXPECT_LE(std::abs(ad[i] - fd[i]), 1e-6) << where;
    } else {
      EXPECT_LE(std::abs(ad[i] - fd[i]) / std::abs(fd[i]), 1e-4) << where << " ad=" << ad[i] << " fd=" << fd[i];
    }
  }
}

}  // namespace

TEST(GradElbo, ValueIsBitIdenticalToDoublePath) {
  const auto ds = fixture::random_dataset(8, 2, 1, 1);
  const auto st = fixture::random_state(2, 4, 1, 2);
  const auto h = fixture::tiny_hypers();
  const auto p = cnmgp::pack(st, h);
  const auto batch = cnmgp::all_rows(ds);
  for (auto method : {Estimator::direct, Estimator::marginalized}) {
    const auto g = cnmgp::grad_elbo(ds, batch, method, 2, 9, p);
    EXPECT_EQ(g.value, cnmgp::elbo_minibatch(ds, batch, st, h, method, 2, 9).elbo);
  }
}

TEST(GradElbo, MatchesFiniteDifferencesBothMethods) {
  const auto ds = fixture::random_dataset(8, 2, 1, 3);
  const auto st = fixture::random_state(2, 4, 1, 4);
  const auto h = fixture::tiny_hypers();
  const auto p = cnmgp::pack(st, h);
  const auto batch = cnmgp::all_rows(ds);
  for (auto method : {Estimator::direct, Estimator::marginalized}) {
    const auto g = cnmgp::grad_elbo(ds, batch, method, 1, 11, p);
    const auto fd = cnmgp::finite_diff(cnmgp::elbo_objective(ds, batch, method, 1, 11), p);
    expect_gradient_matches(g.gradient, fd, p);
  }
}

TEST(GradElbo, MatchesFiniteDifferencesOfDenseReference) {
  // Differences of the independent dense ELBO, not of the library's own value.
  const auto ds = fixture::random_dataset(6, 2, 1, 5);
  const auto st = fixture::random_state(2, 3, 1, 6);
  const auto h = fixture::tiny_hypers();
  const auto p = cnmgp::pack(st, h);
  const auto batch = cnmgp::all_rows(ds);
  const auto g = cnmgp::grad_elbo(ds, batch, Estimator::marginalized, 1, 13, p);
  const auto fd = cnmgp::finite_diff(
      [&](const cnmgp::ParamVector& q) {
        const auto s = cnmgp::unpack(q);
        return oracle::reference_elbo(ds, batch, s.state, s.hypers, Estimator::marginalized, 1, 13);
      },
      p);
  for (std::size_t i = 0; i < fd.size(); ++i)
    EXPECT_NEAR(g.gradient[i], fd[i], 1e-4 * std::max(1.0, std::abs(fd[i]))) << p.segment_at(i)->name;
}

TEST(GradElbo, TrainableInducingInputs) {
  const auto ds = fixture::random_dataset(6, 2, 1, 7);
  const auto st = fixture::random_state(2, 3, 1, 8);
  auto h = fixture::tiny_hypers();
  h.trainable.inducing = true;
  const auto p = cnmgp::pack(st, h);
  EXPECT_EQ(p.layout.front().name, "inducing");
  const auto batch = cnmgp::all_rows(ds);
  const auto g = cnmgp::grad_elbo(ds, batch, Estimator::direct, 1, 2, p);
  const auto fd = cnmgp::finite_diff(cnmgp::elbo_objective(ds, batch, Estimator::direct, 1, 2), p);
  expect_gradient_matches(g.gradient, fd, p);
}

TEST(GradElbo, NonFiniteParametersRaise) {
  const auto ds = fixture::random_dataset(5, 2, 1, 9);
  const auto st = fixture::random_state(2, 3, 1, 10);
  const auto batch = cnmgp::all_rows(ds);
  auto overflow = cnmgp::pack(st, fixture::tiny_hypers());
  overflow.values.back() = 800.0;  // exp overflows the ℓ-kernel lengthscale
  EXPECT_THROW(cnmgp::grad_elbo(ds, batch, Estimator::direct, 1, 1, overflow), cnmgp::NonFinite);
  auto nan_mean = cnmgp::pack(st, fixture::tiny_hypers());
  nan_mean.values[0] = std::nan("");
  EXPECT_THROW(cnmgp::grad_elbo(ds, batch, Estimator::direct, 1, 1, nan_mean), cnmgp::NonFinite);
}

TEST(ParamVector, SegmentsCoverValues) {
  const auto st = fixture::random_state(2, 4, 1, 11);
  const auto p = cnmgp::pack(st, fixture::tiny_hypers());
  for (std::size_t i = 0; i < p.values.size(); ++i) ASSERT_NE(p.segment_at(i), nullptr);
  EXPECT_EQ(p.segment_at(p.values.size()), nullptr);
  EXPECT_EQ(p.layout[0].name, "q_u[1,1].mean");
}

TEST(Whitened, RoundTripRecoversState) {
  const auto st = fixture::random_state(2, 5, 1, 12);
  const auto h = fixture::tiny_hypers();
  const auto p = cnmgp::pack(st, h, cnmgp::Coordinates::whitened);
  EXPECT_EQ(p.values.size(), cnmgp::pack(st, h).values.size());
  const auto back = cnmgp::unpack(p);
  auto expect_close = [](const cnmgp::VariationalGaussian& a, const cnmgp::VariationalGaussian& b) {
    for (std::size_t i = 0; i < a.mean.size(); ++i) EXPECT_NEAR(a.mean[i], b.mean[i], 1e-9);
    const auto fa = a.factor(), fb = b.factor();
    for (std::size_t i = 0; i < fa.size(); ++i) EXPECT_NEAR(fa.data()[i], fb.data()[i], 1e-9);
  };
  for (std::size_t c = 0; c < st.q_u.size(); ++c) expect_close(back.state.q_u[c], st.q_u[c]);
  for (std::size_t d = 0; d < st.q_w.size(); ++d) expect_close(back.state.q_w[d], st.q_w[d]);
  expect_close(back.state.q_v, st.q_v);
}

TEST(Whitened, SameObjectiveAsPlainCoordinates) {
  const auto ds = fixture::random_dataset(8, 2, 1, 13);
  const auto st = fixture::random_state(2, 4, 1, 14);
  const auto h = fixture::tiny_hypers();
  const auto batch = cnmgp::all_rows(ds);
  const auto plain = cnmgp::grad_elbo(ds, batch, Estimator::marginalized, 2, 3, cnmgp::pack(st, h));
  const auto white =
      cnmgp::grad_elbo(ds, batch, Estimator::marginalized, 2, 3, cnmgp::pack(st, h, cnmgp::Coordinates::whitened));
  EXPECT_NEAR(white.value, plain.value, 1e-9 * std::abs(plain.value));
}

TEST(Whitened, MatchesFiniteDifferencesBothMethods) {
  const auto ds = fixture::random_dataset(8, 2, 1, 15);
  const auto st = fixture::random_state(2, 4, 1, 16);
  const auto h = fixture::tiny_hypers();
  const auto p = cnmgp::pack(st, h, cnmgp::Coordinates::whitened);
  const auto batch = cnmgp::all_rows(ds);
  for (auto method : {Estimator::direct, Estimator::marginalized}) {
    const auto g = cnmgp::grad_elbo(ds, batch, method, 1, 17, p);
    const auto fd = cnmgp::finite_diff(cnmgp::elbo_objective(ds, batch, method, 1, 17), p);
    expect_gradient_matches(g.gradient, fd, p);
  }
}
