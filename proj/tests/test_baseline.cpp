#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "cnmgp/baseline.hpp"

namespace {

cnmgp::Matrix uniform_inputs(std::size_t n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  cnmgp::Matrix x(n, 1);
  for (std::size_t i = 0; i < n; ++i) x(i, 0) = u(gen);
  return x;
}

// Exact draw from N(0, K + noise·I) with an RBF K.
cnmgp::Matrix rbf_sample(const cnmgp::Matrix& x, double var, double ls, double noise, std::mt19937_64& gen) {
  const std::size_t n = x.rows();
  Eigen::MatrixXd k(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double r = (x(i, 0) - x(j, 0)) / ls;
      k(i, j) = var * std::exp(-0.5 * r * r) + (i == j ? noise + 1e-10 : 0.0);
    }
  const Eigen::MatrixXd l = k.llt().matrixL();
  std::normal_distribution<double> nd;
  Eigen::VectorXd z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = nd(gen);
  const Eigen::VectorXd f = l * z;
  cnmgp::Matrix y(n, 1);
  for (std::size_t i = 0; i < n; ++i) y(i, 0) = f[i];
  return y;
}

}  // namespace

TEST(IgprLml, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(3);
  const auto x = uniform_inputs(15, gen);
  const auto ym = rbf_sample(x, 1.3, 0.3, 0.05, gen);
  const cnmgp::Vector y(ym.data().begin(), ym.data().end());
  const std::array<double, 3> theta{0.2, std::log(0.25), std::log(0.1)};
  const auto at = cnmgp::detail::igpr_lml(x, y, theta);
  ASSERT_TRUE(at.ok);
  for (std::size_t k = 0; k < 3; ++k) {
    const double h = 1e-5;
    auto up = theta, dn = theta;
    up[k] += h;
    dn[k] -= h;
    const double fd = (cnmgp::detail::igpr_lml(x, y, up).value - cnmgp::detail::igpr_lml(x, y, dn).value) / (2 * h);
    EXPECT_NEAR(at.grad[k], fd, 1e-6 * (1.0 + std::abs(fd))) << "k=" << k;
  }
}

TEST(IgprLml, MatchesDenseDensity) {
  std::mt19937_64 gen(5);
  const auto x = uniform_inputs(6, gen);
  const auto ym = rbf_sample(x, 1.0, 0.4, 0.1, gen);
  const cnmgp::Vector y(ym.data().begin(), ym.data().end());
  const auto lml = cnmgp::detail::igpr_lml(x, y, {std::log(0.7), std::log(0.2), std::log(0.3)});
  Eigen::MatrixXd k(6, 6);
  Eigen::VectorXd ye(6);
  for (std::size_t i = 0; i < 6; ++i) {
    ye[i] = y[i];
    for (std::size_t j = 0; j < 6; ++j) {
      const double r = (x(i, 0) - x(j, 0)) / 0.2;
      k(i, j) = 0.7 * std::exp(-0.5 * r * r) + (i == j ? 0.3 : 0.0);
    }
  }
  const double expect = -0.5 * ye.dot(k.inverse() * ye) - 0.5 * std::log(k.determinant()) -
                        3.0 * std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(lml.value, expect, 1e-10);
}

TEST(Igpr, RecoversNoiseOfKnownRbfProcess) {
  std::mt19937_64 gen(11);
  const auto x = uniform_inputs(200, gen);
  const auto y = rbf_sample(x, 1.0, 0.2, 0.1, gen);
  const auto model = cnmgp::igpr_fit(cnmgp::Dataset(x, y), 1);
  EXPECT_NEAR(model.outputs[0].noise, 0.1, 0.05);
}

TEST(Igpr, InterpolatesNoiseFreeSinusoid) {
  cnmgp::Matrix x(40, 1), y(40, 1);
  for (std::size_t i = 0; i < 40; ++i) {
    x(i, 0) = static_cast<double>(i) / 39.0;
    y(i, 0) = std::sin(2.0 * std::numbers::pi * x(i, 0));
  }
  const auto model = cnmgp::igpr_fit(cnmgp::Dataset(x, y), 0);
  cnmgp::Matrix xs(101, 1);
  for (std::size_t i = 0; i < 101; ++i) xs(i, 0) = 0.05 + 0.9 * static_cast<double>(i) / 100.0;
  const auto pred = cnmgp::igpr_predict(model, xs);
  double se = 0.0;
  for (std::size_t i = 0; i < 101; ++i) {
    const double r = pred.mean(i, 0) - std::sin(2.0 * std::numbers::pi * xs(i, 0));
    se += r * r;
  }
  EXPECT_LE(std::sqrt(se / 101.0), 0.05);
}

TEST(Igpr, SameSeedSameFit) {
  std::mt19937_64 gen(2);
  const auto x = uniform_inputs(50, gen);
  const auto y = rbf_sample(x, 1.0, 0.3, 0.2, gen);
  const cnmgp::Dataset ds(x, y);
  const auto a = cnmgp::igpr_fit(ds, 9);
  const auto b = cnmgp::igpr_fit(ds, 9);
  EXPECT_EQ(a.outputs[0].kernel.variance, b.outputs[0].kernel.variance);
  EXPECT_EQ(a.outputs[0].kernel.lengthscale, b.outputs[0].kernel.lengthscale);
  EXPECT_EQ(a.outputs[0].noise, b.outputs[0].noise);
  EXPECT_EQ(a.outputs[0].restart_trace, b.outputs[0].restart_trace);
}

TEST(Igpr, EveryRestartEndsNoWorseThanItStarts) {
  std::mt19937_64 gen(7);
  const auto x = uniform_inputs(60, gen);
  const auto y = rbf_sample(x, 2.0, 0.15, 0.05, gen);
  cnmgp::IgprConfig cfg;
  cfg.restarts = 8;
  const auto model = cnmgp::igpr_fit(cnmgp::Dataset(x, y), 4, cfg);
  const auto& out = model.outputs[0];
  ASSERT_EQ(out.restart_trace.size(), 8u);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [start, end] : out.restart_trace) {
    EXPECT_GE(end, start);
    best = std::max(best, end);
  }
  EXPECT_EQ(out.log_marginal, best);
}

TEST(Igpr, FitsOutputsOnTheirOwnEntries) {
  std::mt19937_64 gen(8);
  const auto x = uniform_inputs(40, gen);
  cnmgp::Matrix y(40, 2);
  const auto a = rbf_sample(x, 1.0, 0.2, 0.05, gen);
  const auto b = rbf_sample(x, 1.0, 0.2, 0.05, gen);
  std::vector<std::uint8_t> mask(80, 1);
  for (std::size_t n = 0; n < 40; ++n) {
    y(n, 0) = a(n, 0);
    y(n, 1) = b(n, 0);
    if (n % 3 == 0) mask[n * 2 + 1] = 0;
  }
  const auto model = cnmgp::igpr_fit(cnmgp::Dataset(x, y, mask), 0);
  EXPECT_EQ(model.outputs[0].y.size(), 40u);
  EXPECT_EQ(model.outputs[1].y.size(), 26u);
}

TEST(IgprPredict, TrainingPointWithVanishingNoiseReproducesTarget) {
  std::mt19937_64 gen(4);
  const auto x = uniform_inputs(12, gen);
  const auto ym = rbf_sample(x, 1.0, 0.3, 0.0, gen);
  const cnmgp::Vector y(ym.data().begin(), ym.data().end());
  const auto lml = cnmgp::detail::igpr_lml(x, y, {0.0, std::log(0.3), std::log(1e-9)});
  ASSERT_TRUE(lml.ok);
  cnmgp::IgprModel model;
  model.outputs.push_back({cnmgp::RbfKernel{1.0, 0.3}, 1e-9, x, y, lml.chol, lml.alpha, lml.value, {}});
  const auto pred = cnmgp::igpr_predict(model, x);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_NEAR(pred.mean(i, 0), y[i], 1e-4);
    EXPECT_NEAR(pred.variance(i, 0), 1e-9, 1e-5);
  }
}

TEST(IgprPredict, FarFieldRevertsToPrior) {
  std::mt19937_64 gen(6);
  const auto x = uniform_inputs(30, gen);
  const auto model = cnmgp::igpr_fit(cnmgp::Dataset(x, rbf_sample(x, 1.0, 0.2, 0.1, gen)), 0);
  cnmgp::Matrix far(1, 1);
  far(0, 0) = 1e3;
  const auto pred = cnmgp::igpr_predict(model, far);
  const auto& o = model.outputs[0];
  EXPECT_NEAR(pred.mean(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(pred.variance(0, 0), o.kernel.variance + o.noise, 1e-12);
}

TEST(IgprPredict, VarianceNeverBelowNoise) {
  std::mt19937_64 gen(10);
  const auto x = uniform_inputs(80, gen);
  const auto model = cnmgp::igpr_fit(cnmgp::Dataset(x, rbf_sample(x, 1.0, 0.1, 0.01, gen)), 0);
  cnmgp::Matrix xs(500, 1);
  for (std::size_t i = 0; i < 500; ++i) xs(i, 0) = -0.5 + 2.0 * static_cast<double>(i) / 499.0;
  const auto pred = cnmgp::igpr_predict(model, xs);
  for (std::size_t i = 0; i < 500; ++i) EXPECT_GE(pred.variance(i, 0), model.outputs[0].noise);
}

TEST(IgprPredict, SummaryIsNormalInterval) {
  cnmgp::IgprPrediction p{cnmgp::Matrix(1, 1), cnmgp::Matrix(1, 1)};
  p.mean(0, 0) = 1.0;
  p.variance(0, 0) = 4.0;
  const auto s = cnmgp::igpr_summary(p);
  EXPECT_NEAR(s.lower(0, 0), 1.0 - 2.0 * 1.959963984540054, 1e-12);
  EXPECT_NEAR(s.upper(0, 0), 1.0 + 2.0 * 1.959963984540054, 1e-12);
}

TEST(Igpr, DegenerateOutputsRaise) {
  cnmgp::Matrix x(3, 1), y(3, 1);
  x(0, 0) = 0.0;
  x(1, 0) = 0.5;
  x(2, 0) = 1.0;
  y(0, 0) = y(1, 0) = y(2, 0) = 2.0;
  EXPECT_THROW(cnmgp::igpr_fit(cnmgp::Dataset(x, y), 0), cnmgp::DegenerateOutput);
  y(1, 0) = 1.0;
  EXPECT_THROW(cnmgp::igpr_fit(cnmgp::Dataset(x, y, {1, 0, 0}), 0), cnmgp::DegenerateOutput);
  cnmgp::IgprConfig cfg;
  cfg.restarts = 0;
  EXPECT_THROW(cnmgp::igpr_fit(cnmgp::Dataset(x, y), 0, cfg), cnmgp::ConfigError);
}
