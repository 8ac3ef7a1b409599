#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "introvae/data.hpp"
#include "introvae/metrics.hpp"
#include "oracles.hpp"

using namespace introvae;

namespace {

Tensor<double> noise_images(int n, int res, std::uint64_t seed) {
  Tensor<double> t({n, 3, res, res});
  Rng rng(seed);
  for (auto& v : t.vec()) v = rng.uniform();
  return t;
}

Tensor<double> blob_images(int n, int res, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_images = n;
  spec.resolution = res;
  spec.seed = seed;
  return generate_synthetic(spec).all<double>();
}

FeatureSet gaussian_cloud(int n, const std::vector<double>& mean, const std::vector<double>& sd, std::uint64_t seed) {
  Rng rng(seed);
  FeatureSet fs{Eigen::MatrixXd(n, Eigen::Index(mean.size()))};
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < mean.size(); ++j) fs.features(i, Eigen::Index(j)) = mean[j] + sd[j] * rng.normal();
  return fs;
}

// Independent stratified draws per dimension, rows shuffled per column.
FeatureSet stratified_cloud(int n, const std::vector<double>& mean, const std::vector<double>& sd, std::uint64_t seed) {
  Rng rng(seed);
  FeatureSet fs{Eigen::MatrixXd(n, Eigen::Index(mean.size()))};
  for (std::size_t j = 0; j < mean.size(); ++j) {
    auto col = oracle::stratified_normal(n, mean[j], sd[j], [&] { return rng.uniform(); });
    rng.shuffle(col.begin(), col.end());
    for (int i = 0; i < n; ++i) fs.features(i, Eigen::Index(j)) = col[std::size_t(i)];
  }
  return fs;
}

}  // namespace

TEST(MsSsim, SelfSimilarityAndSymmetry) {
  const auto a = noise_images(1, 64, 1), b = blob_images(1, 64, 2);
  EXPECT_NEAR(ms_ssim(a, a), 1.0, 1e-6);
  EXPECT_NEAR(ms_ssim(a, b), ms_ssim(b, a), 1e-6);
}

TEST(MsSsim, IndependentNoiseMatchesVarianceModel) {
  // Seeds 101 and 202, 128x128, four usable scales. Channel-averaged uniform
  // noise has variance 1/36, divided by 4 per 2x2 downsampling; with zero
  // covariance each scale contributes C2 / (2 var + C2).
  const MsSsimConfig cfg;
  const int scales = effective_scales(cfg, 128);
  ASSERT_EQ(scales, 4);
  const double c2 = std::pow(cfg.k2 * cfg.dynamic_range, 2);
  double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += cfg.weights[std::size_t(s)];
  double predicted = 1;
  for (int s = 0; s < scales; ++s) {
    const double var = 1.0 / 36 / std::pow(4.0, s);
    predicted *= std::pow(c2 / (2 * var + c2), cfg.weights[std::size_t(s)] / wsum);
  }
  const double v = ms_ssim(noise_images(1, 128, 101), noise_images(1, 128, 202));
  EXPECT_NEAR(v, predicted, 0.1 * predicted);
  EXPECT_LT(v, 0.2);
}

TEST(MsSsim, DegradesWithNoiseLevel) {
  const auto x = blob_images(1, 64, 3);
  double prev = 1.0;
  for (double sigma : {0.02, 0.08, 0.2}) {
    auto y = x;
    Rng rng(7);
    for (auto& v : y.vec()) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
    const double s = ms_ssim(x, y);
    EXPECT_LT(s, prev) << sigma;
    prev = s;
  }
}

TEST(MsSsim, ScalesReducedWithWarningOnSmallImages) {
  std::vector<std::string> warnings;
  WarningSink sink = [&](const std::string& w) { warnings.push_back(w); };
  const auto a = blob_images(1, 32, 1);
  EXPECT_NEAR(ms_ssim(a, a, {}, &sink), 1.0, 1e-6);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(effective_scales({}, 32), 2);
  EXPECT_EQ(effective_scales({}, 176), 5);
  EXPECT_THROW(ms_ssim(noise_images(1, 8, 1), noise_images(1, 8, 2)), ShapeError);
}

TEST(PairDiversity, IdenticalSetIsOneAndSeeded) {
  auto same = noise_images(4, 32, 1);
  for (int i = 1; i < 4; ++i) std::copy(same.slice(0).begin(), same.slice(0).end(), same.slice(i).begin());
  EXPECT_NEAR(pair_diversity(same, 20, 1), 1.0, 1e-6);
  const auto mixed = blob_images(6, 32, 4);
  EXPECT_EQ(pair_diversity(mixed, 30, 5), pair_diversity(mixed, 30, 5));
  EXPECT_THROW(pair_diversity(mixed, 0, 5), ConfigError);
}

TEST(PairDiversity, DuplicatesScoreAtLeastAsHigh) {
  const auto distinct = blob_images(6, 32, 8);
  auto dup = distinct;
  for (int i = 3; i < 6; ++i) std::copy(dup.slice(i - 3).begin(), dup.slice(i - 3).end(), dup.slice(i).begin());
  EXPECT_GE(pair_diversity(dup, 200, 3), pair_diversity(distinct, 200, 3));
}

TEST(Rmse, IdentitiesAndOffset) {
  const auto a = noise_images(3, 16, 1);
  EXPECT_EQ(rmse(a, a), 0.0);
  auto b = a;
  for (auto& v : b.vec()) v += 0.1;
  EXPECT_NEAR(rmse(a, b), 0.1, 1e-12);
  EXPECT_THROW(rmse(a, noise_images(2, 16, 1)), ShapeError);
}

TEST(Rmse, MatchesReconstructionLossConvention) {
  const auto a = noise_images(1, 16, 1), b = noise_images(1, 16, 2);
  const double r = rmse(a, b);
  // rmse^2 * pixel count = 2 * (1/2 sum of squared errors)
  EXPECT_NEAR(r * r * double(a.size()), 2 * mse_recon<double>(a.span(), b.span(), 1), 1e-9);
}

TEST(GaussianFit, HandComputedAndRidge) {
  FeatureSet fs{Eigen::MatrixXd(2, 1)};
  fs.features << 0, 2;
  const auto g = fit_gaussian(fs);
  EXPECT_DOUBLE_EQ(g.mean(0), 1.0);
  EXPECT_NEAR(g.cov(0, 0), 2.0, 1e-6 + 1e-12);
  FeatureSet dup{Eigen::MatrixXd(4, 2)};
  dup.features << 1, 2, 1, 2, 1, 2, 3, 4;
  const auto d = fit_gaussian(dup);
  EXPECT_TRUE(d.ridge_applied);
  EXPECT_TRUE(d.cov.allFinite());
  FeatureSet one{Eigen::MatrixXd(1, 2)};
  EXPECT_THROW(fit_gaussian(one), InvalidInput);
}

TEST(Frechet, SameSetIsZeroAndSymmetric) {
  const auto a = gaussian_cloud(500, {0, 1, 2}, {1, 2, 0.5}, 1);
  const auto b = gaussian_cloud(500, {0.5, 1, 2}, {1, 1, 0.5}, 2);
  EXPECT_NEAR(frechet_score(a, a), 0.0, 1e-6);
  EXPECT_NEAR(frechet_score(a, b), frechet_score(b, a), 1e-6);
}

TEST(Frechet, OneDimensionalUnitShift) {
  const int n = 100000;
  const double d = frechet_score(stratified_cloud(n, {0}, {1}, 11), stratified_cloud(n, {1}, {1}, 12));
  EXPECT_NEAR(d, 1.0, 3.0 / std::sqrt(double(n)));
}

TEST(Frechet, KnownCloudsMatchClosedForm) {
  const int n = 100000;
  // Diagonal covariances: sum over dims of (mu_a - mu_b)^2 + (sd_a - sd_b)^2.
  const double expected = (0 - 1) * (0 - 1) + (1 - 2) * (1 - 2) + (2 - 2) * (2 - 2) + (0.5 - 1) * (0.5 - 1);
  ASSERT_EQ(expected, 2.25);
  const double d = frechet_score(stratified_cloud(n, {0, 2}, {1, 0.5}, 3), stratified_cloud(n, {1, 2}, {2, 1}, 4));
  EXPECT_NEAR(d, expected, 3.0 / std::sqrt(double(n)));
}

TEST(NearestNeighbors, MatchesExhaustiveScanWithTies) {
  SyntheticSpec spec;
  spec.n_images = 30;
  spec.resolution = 16;
  auto ds = generate_synthetic(spec);
  const auto q = std::vector<float>(ds.image(7).begin(), ds.image(7).end());
  ds.add("copy_of_7", q);
  const auto nn = nearest_neighbors_l1<float>(q, ds, ds.size());
  ASSERT_EQ(nn.size(), 31u);
  EXPECT_EQ(nn[0].index, 7);
  EXPECT_EQ(nn[0].distance, 0.0);
  EXPECT_EQ(nn[1].index, 30);  // tie broken by lower index
  // Exhaustive oracle: recompute and sort independently.
  std::vector<std::pair<double, int>> ref;
  for (int i = 0; i < ds.size(); ++i) {
    double d = 0;
    for (std::size_t p = 0; p < q.size(); ++p) d += std::abs(double(q[p]) - double(ds.image(i)[p]));
    ref.emplace_back(d, i);
  }
  std::sort(ref.begin(), ref.end());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_EQ(nn[i].index, ref[i].second);
    EXPECT_EQ(nn[i].distance, ref[i].first);
  }
  EXPECT_THROW(nearest_neighbors_l1<float>(q, ds, 0), ConfigError);
  EXPECT_THROW(nearest_neighbors_l1<float>(q, ds, 99), ConfigError);
}

TEST(FeatureFile, RoundTrip) {
  const auto fs_in = gaussian_cloud(5, {0, 1, 2}, {1, 1, 1}, 1);
  const auto p = std::filesystem::temp_directory_path() / "introvae_features.txt";
  write_feature_file(p, fs_in);
  const auto back = read_feature_file(p);
  EXPECT_EQ(back.provenance, FeatureProvenance::external_file);
  EXPECT_TRUE(back.features.isApprox(fs_in.features, 1e-15));
}
