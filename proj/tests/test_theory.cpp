#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "introvae/theory.hpp"

using namespace introvae;
using namespace introvae::theory;

TEST(Phi, MinimizerCases) {
  const auto lt = phi_minimizer({1, 2, 3});
  ASSERT_EQ(lt.points, std::vector<double>{3});
  EXPECT_DOUBLE_EQ(lt.value, 3);
  const auto gt = phi_minimizer({2, 1, 3});
  ASSERT_EQ(gt.points, std::vector<double>{0});
  EXPECT_DOUBLE_EQ(gt.value, 3);
  const auto eq = phi_minimizer({1, 1, 3});
  EXPECT_EQ(eq.points, (std::vector<double>{0, 3}));
  EXPECT_TRUE(eq.contains(1.5));
  EXPECT_FALSE(eq.contains(3.5));
  EXPECT_DOUBLE_EQ(eq.value, 3);
}

TEST(Phi, ZeroLinearTermHasUnboundedArgmin) {
  const auto r = phi_minimizer({0, 1, 2});
  EXPECT_EQ(r.value, 0);
  EXPECT_EQ(r.lo, 2);
  EXPECT_EQ(r.hi, std::numeric_limits<double>::infinity());
  EXPECT_TRUE(r.contains(100));
}

TEST(Phi, RejectsInvalidInput) {
  EXPECT_THROW(phi_minimizer({-1, 1, 1}), InvalidInput);
  EXPECT_THROW(phi_minimizer({1, 1, 0}), InvalidInput);
  EXPECT_THROW(phi_minimizer({1, NAN, 1}), InvalidInput);
}

TEST(Phi, ClosedFormMatchesGridScan) {
  const auto r = lemma1_fuzz(200, 10000, 4);
  EXPECT_EQ(r.disagreements, 0);
  EXPECT_LT(r.max_value_gap, 1e-9);
}

TEST(Game, ValuesOnHandExample) {
  DiscreteGame g{{0.5, 0.5}, {0.25, 0.75}, {1.0, 3.0}, 2.0};
  // V = sum p_data E + p_G [m - E]^+ = 0.5 + 1.5 + 0.25 * 1 + 0.75 * 0
  EXPECT_DOUBLE_EQ(game_value_V(g), 2.25);
  EXPECT_DOUBLE_EQ(game_value_U(g), 0.25 + 2.25);
}

TEST(Game, BestResponseEnergy) {
  EXPECT_EQ(best_response_energy({0.2, 0.5, 0.3}, {0.4, 0.5, 0.1}, 2.0), (std::vector<double>{2, 0, 0}));
  EXPECT_THROW(best_response_energy({0.5, 0.5}, {1.0}, 1), ShapeError);
}

TEST(Game, ValidationErrors) {
  EXPECT_THROW(game_value_V({{0.5, 0.6}, {0.5, 0.5}, {0, 0}, 1}), InvalidInput);
  EXPECT_THROW(game_value_V({{1.0, 0.0}, {0.5, 0.5}, {0, 0}, 1}), InvalidInput);
  EXPECT_THROW(game_value_V({{0.5, 0.5}, {0.5, 0.5}, {-1, 0}, 1}), InvalidInput);
  EXPECT_THROW(game_value_V({{0.5, 0.5}, {0.5, 0.5}, {0}, 1}), ShapeError);
}

TEST(Saddle, ConstantEnergyWithinMarginIsSaddle) {
  const auto r = verify_saddle({0.1, 0.2, 0.7}, 3.0, 1.5, 1e-9, 500, 1);
  EXPECT_TRUE(r.is_saddle);
  EXPECT_TRUE(r.v_equals_margin);
  EXPECT_NEAR(r.value_v, 3.0, 1e-12);
  EXPECT_GE(r.min_v_over_perturbations, 3.0 - 1e-9);
  EXPECT_TRUE(r.u_constant_in_generator);
  ASSERT_TRUE(r.gamma_estimate);
  EXPECT_DOUBLE_EQ(*r.gamma_estimate, 1.5);
}

TEST(Saddle, EnergyAboveMarginIsNotSaddle) {
  const auto r = verify_saddle({0.5, 0.5}, 1.0, 1.5, 1e-9, 0);
  EXPECT_FALSE(r.is_saddle);
  EXPECT_GT(r.max_violation, 0.4);
}

TEST(Saddle, NonConstantEnergyAdmitsGeneratorDeviation) {
  const auto r = check_candidate({{0.5, 0.5}, {0.5, 0.5}, {0.2, 0.8}, 1.0}, 1e-9);
  EXPECT_FALSE(r.is_saddle);
  ASSERT_TRUE(r.generator_deviation_gain);
  EXPECT_NEAR(*r.generator_deviation_gain, 0.3, 1e-12);
}

TEST(Saddle, FuzzHasNoFailures) {
  const auto r = saddle_fuzz(100, 2.0, 9, 1e-9, 200);
  EXPECT_EQ(r.failures(), 0);
  EXPECT_LT(r.max_abs_v_minus_m, 1e-9);
  EXPECT_GE(r.min_perturbed_v_minus_m, -1e-9);
}
