#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "introvae/adam.hpp"
#include "introvae/networks.hpp"

using namespace introvae;

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  std::vector<double> p{1.0, -2.0, 0.5}, g{0.3, -7.0, 1e-3}, m(3, 0), v(3, 0);
  AdamSettings s;
  s.eps = 0;
  adam_update<double>(p, g, m, v, 1, s);
  EXPECT_NEAR(p[0], 1.0 - 2e-4, 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 2e-4, 1e-15);
  EXPECT_NEAR(p[2], 0.5 - 2e-4, 1e-15);
}

TEST(Adam, MatchesHandComputedSecondStep) {
  AdamSettings s;
  s.learning_rate = 0.1;
  std::vector<double> p{0.0}, m{0}, v{0};
  adam_update<double>(p, std::vector<double>{1.0}, m, v, 1, s);
  adam_update<double>(p, std::vector<double>{-2.0}, m, v, 2, s);
  // Independent recomputation of the bias-corrected moments.
  double mm = 0, vv = 0, x = 0;
  const double gs[2] = {1.0, -2.0};
  for (int t = 1; t <= 2; ++t) {
    mm = 0.9 * mm + 0.1 * gs[t - 1];
    vv = 0.999 * vv + 0.001 * gs[t - 1] * gs[t - 1];
    x -= 0.1 * (mm / (1 - std::pow(0.9, t))) / (std::sqrt(vv / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p[0], x, 1e-14);
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  std::vector<float> p{3.0f}, g{0.0f}, m{0}, v{0};
  adam_update<float>(p, g, m, v, 1, {});
  EXPECT_EQ(p[0], 3.0f);
}

TEST(Adam, SizeMismatchThrows) {
  std::vector<double> p(2), g(3), m(2), v(2);
  EXPECT_THROW(adam_update<double>(p, g, m, v, 1, {}), ShapeError);
}

TEST(Adam, StepCountsAndTouchesEveryArray) {
  NetConfig cfg;
  cfg.resolution = 16;
  cfg.channels = {4, 4, 4};
  cfg.latent_dim = 4;
  auto ps = build_encoder<double>(cfg, 1);
  const auto before = ps;
  AdamState<double> st(ps);
  for (auto& p : ps.params()) std::fill(p.grad.begin(), p.grad.end(), 1.0);
  adam_step(ps, st, {});
  EXPECT_EQ(st.step, 1);
  for (std::size_t i = 0; i < ps.params().size(); ++i)
    EXPECT_NEAR(ps.params()[i].value[0], before.params()[i].value[0] - 2e-4 / (1 + 1e-8), 1e-15) << ps.params()[i].name;
}
