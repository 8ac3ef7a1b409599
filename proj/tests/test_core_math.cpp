#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "introvae/core_math.hpp"
#include "introvae/rng.hpp"
#include "oracles.hpp"

using namespace introvae;

TEST(Kl, ZeroAtStandardNormal) {
  LatentStats<double> s(3, 5);
  EXPECT_EQ(kl_divergence(s), 0.0);
}

TEST(Kl, MatchesQuadratureOracle) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const double mu = rng.uniform(-3, 3), lv = rng.uniform(-4, 2);
    LatentStats<double> s(std::vector<double>{mu}, std::vector<double>{lv});
    EXPECT_NEAR(kl_divergence(s), oracle::kl_quadrature(mu, lv), 1e-7) << mu << " " << lv;
  }
}

TEST(Kl, SumsOverDimsAndAveragesOverBatch) {
  LatentStats<double> s(2, 2);
  s.mu = {1, 0, 0, 2};
  s.log_var = {0, 0, 0, 0};
  // per sample: 0.5 * 1 = 0.5 and 0.5 * 4 = 2
  EXPECT_DOUBLE_EQ(kl_per_sample(s)[0], 0.5);
  EXPECT_DOUBLE_EQ(kl_per_sample(s)[1], 2.0);
  EXPECT_DOUBLE_EQ(kl_divergence(s), 1.25);
}

TEST(Kl, RejectsNonFiniteStatistics) {
  LatentStats<double> s(std::vector<double>{0.0}, std::vector<double>{std::nan("")});
  EXPECT_THROW(kl_divergence(s), InvalidInput);
}

TEST(Kl, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  LatentStats<double> s(3, 4);
  for (auto& v : s.mu) v = rng.uniform(-2, 2);
  for (auto& v : s.log_var) v = rng.uniform(-2, 2);
  std::vector<double> dmu(s.mu.size()), dlv(s.mu.size());
  kl_divergence_grad<double>(s, 1.0, dmu, dlv);
  const double h = 1e-6;
  for (std::size_t i = 0; i < s.mu.size(); ++i) {
    auto p = s, m = s;
    p.mu[i] += h, m.mu[i] -= h;
    EXPECT_NEAR(dmu[i], (kl_divergence(p) - kl_divergence(m)) / (2 * h), 1e-8);
    p = s, m = s;
    p.log_var[i] += h, m.log_var[i] -= h;
    EXPECT_NEAR(dlv[i], (kl_divergence(p) - kl_divergence(m)) / (2 * h), 1e-8);
  }
}

TEST(Reparameterize, ZeroNoiseGivesMean) {
  LatentStats<double> s(std::vector<double>{1.5, -2.0}, std::vector<double>{0.3, -1.0});
  const std::vector<double> eps{0, 0};
  EXPECT_EQ(reparameterize<double>(s, eps), s.mu);
}

TEST(Reparameterize, UnitNoiseAddsSigma) {
  LatentStats<double> s(std::vector<double>{0.0}, std::vector<double>{std::log(4.0)});
  const std::vector<double> eps{1.0};
  EXPECT_NEAR(reparameterize<double>(s, eps)[0], 2.0, 1e-12);
}

TEST(Reparameterize, ShapeMismatchThrows) {
  LatentStats<double> s(std::vector<double>{0.0, 1.0}, std::vector<double>{0.0, 0.0});
  const std::vector<double> eps{1.0};
  EXPECT_THROW(reparameterize<double>(s, eps), ShapeError);
}

TEST(Reparameterize, SampleMomentsMatchPosterior) {
  LatentStats<double> s(std::vector<double>{0.7}, std::vector<double>{std::log(0.25)});
  Rng rng(3);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const std::vector<double> eps{rng.normal()};
    const double z = reparameterize<double>(s, eps)[0];
    sum += z, sq += z * z;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.7, 4 * 0.5 / std::sqrt(n));
  EXPECT_NEAR(var, 0.25, 0.01);
}

TEST(Reparameterize, GradientMatchesFiniteDifferences) {
  LatentStats<double> s(std::vector<double>{0.3, -0.4}, std::vector<double>{0.2, -0.7});
  const std::vector<double> eps{0.9, -1.3}, dz{1.0, 1.0};
  std::vector<double> dmu(2, 0), dlv(2, 0);
  reparameterize_grad<double>(s, eps, dz, dmu, dlv);
  const double h = 1e-6;
  for (int i = 0; i < 2; ++i) {
    auto p = s, m = s;
    p.log_var[std::size_t(i)] += h, m.log_var[std::size_t(i)] -= h;
    const double fd = (reparameterize<double>(p, eps)[std::size_t(i)] - reparameterize<double>(m, eps)[std::size_t(i)]) / (2 * h);
    EXPECT_NEAR(dlv[std::size_t(i)], fd, 1e-8);
    EXPECT_DOUBLE_EQ(dmu[std::size_t(i)], 1.0);
  }
}

TEST(MseRecon, HalfSquaredErrorBatchMean) {
  const std::vector<double> x{0, 0, 0, 0}, xr{1, 1, 2, 0};
  // sample 0: 0.5 * 2 = 1; sample 1: 0.5 * 4 = 2
  EXPECT_DOUBLE_EQ(mse_recon<double>(x, xr, 2), 1.5);
  EXPECT_EQ(mse_recon<double>(x, x, 2), 0.0);
}

TEST(MseRecon, Gradient) {
  const std::vector<double> x{0.2, 0.4}, xr{0.5, 0.1};
  std::vector<double> g(2, 0);
  mse_recon_grad<double>(x, xr, 1, 2.0, g);
  EXPECT_NEAR(g[0], 2.0 * 0.3, 1e-15);
  EXPECT_NEAR(g[1], 2.0 * -0.3, 1e-15);
}

TEST(Hinge, Values) {
  EXPECT_EQ(hinge(10.0, 3.0), 7.0);
  EXPECT_EQ(hinge(10.0, 12.0), 0.0);
  EXPECT_EQ(hinge(10.0, 10.0), 0.0);
  EXPECT_EQ(hinge_grad(10.0, 3.0), -1.0);
  EXPECT_EQ(hinge_grad(10.0, 12.0), 0.0);
}

TEST(PlayerLosses, ComposeTerms) {
  HyperParams hp;
  hp.margin = 10, hp.alpha = 0.5, hp.beta = 2;
  EXPECT_DOUBLE_EQ(loss_encoder(1, 4, 12, 3, hp), 1 + 0.5 * (6 + 0) + 2 * 3);
  EXPECT_DOUBLE_EQ(loss_generator(4, 12, 3, hp), 0.5 * 16 + 6);
  const auto pe = loss_encoder_partials(4, 12, hp);
  EXPECT_EQ(pe.d_kl_rec, -0.5);
  EXPECT_EQ(pe.d_kl_sample, 0.0);
  const auto pg = loss_generator_partials(hp);
  EXPECT_EQ(pg.d_kl_rec, 0.5);
  EXPECT_EQ(pg.d_l_ae, 2.0);
}

TEST(PlayerLosses, AlphaZeroIsElbo) {
  HyperParams hp;
  hp.alpha = 0, hp.beta = 0.3;
  EXPECT_DOUBLE_EQ(loss_encoder(5, 1, 2, 10, hp), 5 + 3);
}

TEST(HyperParams, ValidateRejectsBadValues) {
  HyperParams hp;
  hp.margin = -1;
  EXPECT_THROW(hp.validate(), ConfigError);
  hp = {};
  hp.adam_beta1 = 1.0;
  EXPECT_THROW(hp.validate(), ConfigError);
  hp = {};
  EXPECT_NO_THROW(hp.validate());
}

TEST(Frechet, OneDimensionalClosedForm) {
  Eigen::VectorXd ma(1), mb(1);
  Eigen::MatrixXd ca(1, 1), cb(1, 1);
  ma << 0.5, mb << -1.0, ca << 4.0, cb << 0.25;
  // (0.5 + 1)^2 + (2 - 0.5)^2
  EXPECT_NEAR(frechet_distance(ma, ca, mb, cb), 2.25 + 2.25, 1e-12);
}

TEST(Frechet, IdenticalGaussiansGiveZero) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(4, 4);
  const Eigen::MatrixXd c = a * a.transpose() + Eigen::MatrixXd::Identity(4, 4);
  const Eigen::VectorXd m = Eigen::VectorXd::Random(4);
  EXPECT_NEAR(frechet_distance(m, c, m, c), 0.0, 1e-9);
}

TEST(Frechet, CommutingCovariancesMatchDiagonalFormula) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(3);
  Eigen::MatrixXd a = Eigen::Vector3d(1, 4, 9).asDiagonal(), b = Eigen::Vector3d(4, 1, 1).asDiagonal();
  const double expected = (1 - 2) * (1 - 2) + (2 - 1) * (2 - 1) + (3 - 1) * (3 - 1);
  EXPECT_NEAR(frechet_distance(m, a, m, b), expected, 1e-10);
}

TEST(Frechet, RejectsAsymmetricAndMismatched) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd c(2, 2);
  c << 1, 0.5, 0, 1;
  EXPECT_THROW(frechet_distance(m, c, m, Eigen::MatrixXd::Identity(2, 2)), InvalidInput);
  EXPECT_THROW(frechet_distance(m, Eigen::MatrixXd::Identity(3, 3), m, Eigen::MatrixXd::Identity(2, 2)), ShapeError);
}
