#include <gtest/gtest.h>

#include "cast/metrics.hpp"
#include "cast/theory.hpp"
#include "cast/transport.hpp"

using namespace cast;

TEST(ApplyTransport, IdentityShiftAndClip) {
  const Dist a({0.2, 0.5, 0.3});
  EXPECT_EQ(apply_transport(TransportKernel::identity(3), a).vec(), a.vec());
  EXPECT_EQ(apply_transport(TransportKernel::right_shift(3), Dist::point_mass(3, 0)).vec(), Dist::point_mass(3, 1).vec());
  EXPECT_EQ(apply_transport(TransportKernel::left_shift(3), Dist::point_mass(3, 0)).vec(), Dist::point_mass(3, 0).vec());
}

TEST(Kernel, RejectsNonStochasticRows) {
  EXPECT_THROW(TransportKernel::constant(3, {0.5, 0.6, 0.0}), Error);
  EXPECT_THROW(TransportKernel::constant(3, {-0.1, 1.1, 0.0}), Error);
  const auto f = TransportKernel::fixed_local(4);
  EXPECT_DOUBLE_EQ(f[1][1], 0.5);
  EXPECT_DOUBLE_EQ(f[0][0], 0.0);
  EXPECT_NEAR(f[0][1] + f[0][2], 1.0, 1e-15);
}

TEST(BudgetGate, Examples) {
  BudgetParams b;
  b.delta_sigma = 0.0;
  const Dist a = Dist::uniform(4);
  EXPECT_DOUBLE_EQ(budget_gate(a, a, 0.2, b).rho_effective, 0.2);
  // A unit mean shift: point mass moved one bin to the right.
  const auto g = budget_gate(Dist::point_mass(4, 1), Dist::point_mass(4, 2), 0.2, b);
  EXPECT_NEAR(g.delta_mu, 1.0, 1e-15);
  EXPECT_NEAR(g.rho_effective, 0.2 * 0.25 / (1.0 + b.epsilon), 1e-15);
  std::vector<double> ta = {0.0, 0.9, 0.1, 0.0};
  const auto small = budget_gate(Dist::point_mass(4, 1).values(), ta, 0.2, b);
  EXPECT_NEAR(small.delta_mu, 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(small.rho_effective, 0.2);
}

TEST(CastStep, IdentityContainment) {
  const Dist p({0.1, 0.2, 0.7}), r({0.5, 0.4, 0.1});
  const auto k = TransportKernel::right_shift(3);
  const BudgetParams b;
  EXPECT_EQ(cast_step(p, r, 1.0, k, 0.0, b, true).vec(), p.vec());
  EXPECT_EQ(cast_step(p, r, 0.0, k, 0.0, b, true).vec(), r.vec());
  const Dist a = convex_mix(p, r, 0.4);
  const auto id = cast_step(p, r, 0.4, TransportKernel::identity(3), 0.9, b, true);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(id[j], a[j]);
  // Unordered supports never transport.
  EXPECT_EQ(cast_step(p, r, 0.4, k, 0.9, b, false).vec(), a.vec());
}

TEST(CastStep, DriftInvariantsProperty) {
  Philox rng(17, 0);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t d = 2 + rng.below(20);
    const Dist p = random_simplex_point(rng, d), r = random_simplex_point(rng, d);
    BudgetParams b;
    b.delta_mu = rng.uniform();
    const double rho = rng.uniform();
    const auto st = cast_step_traced(p, r, rng.uniform(), random_kernel(rng, d), rho, b, true);
    ASSERT_NEAR(st.prediction.sum(), 1.0, 1e-12);
    ASSERT_LE(w1_ordered(st.anchor, st.prediction), st.gate.rho_effective + 1e-12);
    ASSERT_LE(std::abs(mean_support(st.prediction) - mean_support(st.anchor)), rho * st.gate.budget + 1e-12);
  }
}

TEST(OperatorRegularizer, Examples) {
  BudgetParams b;
  b.delta_sigma = 0.0;
  EXPECT_EQ(operator_regularizer(TransportKernel::identity(5), Dist::uniform(5), 0.0, b), 0.0);
  const auto t = operator_regularizer_terms(TransportKernel::constant(4, {0.2, 0.5, 0.3}), Dist::uniform(4).values(),
                                            0.1, b);
  EXPECT_EQ(t.smoothness, 0.0);
  const auto rs = operator_regularizer_terms(TransportKernel::right_shift(3), Dist::uniform(3).values(), 0.1, b);
  EXPECT_DOUBLE_EQ(rs.off_identity, 3.0);
  EXPECT_NEAR(rs.mean_shift, std::pow((2.0 / 3.0) / 0.25, 2), 1e-12);
  EXPECT_DOUBLE_EQ(rs.strength, 0.1);
}
