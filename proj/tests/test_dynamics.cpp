#include "klgame/dynamics.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

namespace klgame {
namespace {

TEST(BicycleStep, StraightLineMotion) {
  KinematicBicycle dynamics(1, 1, 0.1);
  Vec x(4);
  x << 0.0, 0.0, 0.0, 2.0;
  JointControl u(dynamics.dims());

  const Vec next = dynamics.step(x, u);
  EXPECT_NEAR(next(0), 0.2, 1e-15);
  EXPECT_DOUBLE_EQ(next(1), 0.0);
  EXPECT_DOUBLE_EQ(next(2), 0.0);
  EXPECT_DOUBLE_EQ(next(3), 2.0);
}

TEST(BicycleStep, HeadingAlignedMotion) {
  KinematicBicycle dynamics(1, 1, 0.1);
  Vec x(4);
  x << 0.0, 0.0, M_PI / 2.0, 1.0;
  JointControl u(dynamics.dims());

  const Vec next = dynamics.step(x, u);
  EXPECT_NEAR(next(0), 0.0, 1e-15);
  EXPECT_NEAR(next(1), 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(next(2), M_PI / 2.0);
  EXPECT_DOUBLE_EQ(next(3), 1.0);
}

TEST(BicycleStep, EulerUpdateWithInputs) {
  KinematicBicycle dynamics(1, 1, 0.1);
  Vec x(4);
  x << 0.0, 0.0, 0.0, 1.0;
  JointControl u(dynamics.dims());
  u.per_player[0] << 1.0, 0.5;

  const Vec next = dynamics.step(x, u);
  EXPECT_NEAR(next(0), 0.1, 1e-15);
  EXPECT_NEAR(next(1), 0.0, 1e-15);
  EXPECT_NEAR(next(2), 0.05, 1e-15);
  EXPECT_NEAR(next(3), 1.1, 1e-15);
}

TEST(BicycleStep, RejectsNonFinite) {
  KinematicBicycle dynamics(1, 1, 0.1);
  Vec x(4);
  x << 0.0, 0.0, 0.0, std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(dynamics.step(x, JointControl(dynamics.dims())), NumericalError);
}

TEST(BicycleStep, HeadingPeriodicity) {
  KinematicBicycle dynamics(1, 1, 0.1);
  Vec x(4), x_wrapped(4);
  x << 1.0, 2.0, 0.3, 5.0;
  x_wrapped = x;
  x_wrapped(2) += 2.0 * M_PI;
  JointControl u(dynamics.dims());
  u.per_player[0] << 0.5, -0.2;

  const Vec a = dynamics.step(x, u);
  const Vec b = dynamics.step(x_wrapped, u);
  EXPECT_NEAR(a(0), b(0), 1e-9);
  EXPECT_NEAR(a(1), b(1), 1e-9);
}

TEST(Linearize, SingleIntegratorIsExact) {
  GameDims dims;
  dims.n_players = 2;
  dims.state_dim = 4;
  dims.control_dims = {2, 2};
  dims.horizon = 1;
  dims.dt = 0.1;
  SingleIntegrator dynamics(dims);

  Rng rng(1);
  const Vec x = rng.gaussian_vec(4);
  JointControl u(dims);
  u.per_player[0] = rng.gaussian_vec(2);
  u.per_player[1] = rng.gaussian_vec(2);

  const LinearGameStage stage = dynamics.linearize(x, u);
  EXPECT_TRUE(stage.A.isApprox(Mat::Identity(4, 4)));
  Mat b0_expected = Mat::Zero(4, 2);
  b0_expected.block(0, 0, 2, 2) = 0.1 * Mat::Identity(2, 2);
  EXPECT_TRUE(stage.B[0].isApprox(b0_expected));
  EXPECT_NEAR(stage.drift.cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(Linearize, BicycleHeadingColumn) {
  // At theta = 0, v = 1: d(x')/d(theta) = 0, d(y')/d(theta) = dt.
  KinematicBicycle dynamics(1, 1, 0.1);
  Vec x(4);
  x << 0.0, 0.0, 0.0, 1.0;
  const LinearGameStage stage = dynamics.linearize(x, JointControl(dynamics.dims()));
  EXPECT_NEAR(stage.A(0, 2), 0.0, 1e-15);
  EXPECT_NEAR(stage.A(1, 2), 0.1, 1e-15);
}

TEST(Linearize, MatchesFiniteDifferencesAtRandomPoints) {
  KinematicBicycle dynamics(2, 1, 0.1);
  const GameDims& dims = dynamics.dims();

  // Finite-difference fallback witnesses the analytic Jacobians.
  struct RawBicycle : Dynamics {
    const KinematicBicycle& inner;
    RawBicycle(const KinematicBicycle& b) : Dynamics(b.dims()), inner(b) {}
    Vec step(const Vec& x, const JointControl& u) const override {
      return inner.step(x, u);
    }
  } raw(dynamics);

  Rng rng(11);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    Vec x = rng.gaussian_vec(dims.state_dim);
    x(3) = 1.0 + rng.uniform() * 9.0;
    x(7) = 1.0 + rng.uniform() * 9.0;
    JointControl u(dims);
    u.per_player[0] = rng.gaussian_vec(2);
    u.per_player[1] = rng.gaussian_vec(2);

    const LinearGameStage a = dynamics.linearize(x, u);
    const LinearGameStage fd = raw.linearize(x, u);
    worst = std::max(worst, (a.A - fd.A).cwiseAbs().maxCoeff());
    for (int i = 0; i < 2; ++i)
      worst = std::max(worst, (a.B[i] - fd.B[i]).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Linearize, DriftMakesLinearModelExactAtNominal) {
  KinematicBicycle dynamics(1, 1, 0.1);
  Rng rng(5);
  Vec x = rng.gaussian_vec(4);
  x(3) = 4.0;
  JointControl u(dynamics.dims());
  u.per_player[0] << 0.7, -0.3;

  const LinearGameStage stage = dynamics.linearize(x, u);
  const Vec linear_step = stage.A * x + stage.B[0] * u.per_player[0] + stage.drift;
  EXPECT_TRUE(linear_step.isApprox(dynamics.step(x, u), 1e-14));
}

TEST(LinearDynamics, StepMatchesMatrices) {
  GameDims dims;
  dims.n_players = 2;
  dims.state_dim = 3;
  dims.control_dims = {1, 2};
  dims.horizon = 1;
  dims.dt = 0.1;

  Rng rng(2);
  Mat A = Mat::Random(3, 3);
  std::vector<Mat> B = {Mat::Random(3, 1), Mat::Random(3, 2)};
  Vec c = rng.gaussian_vec(3);
  LinearDynamics dynamics(dims, A, B, c);

  const Vec x = rng.gaussian_vec(3);
  JointControl u(dims);
  u.per_player[0] = rng.gaussian_vec(1);
  u.per_player[1] = rng.gaussian_vec(2);

  const Vec expected = A * x + B[0] * u.per_player[0] + B[1] * u.per_player[1] + c;
  EXPECT_TRUE(dynamics.step(x, u).isApprox(expected));

  // Exact linearization independent of the expansion point.
  const LinearGameStage stage = dynamics.linearize(x, u);
  EXPECT_TRUE(stage.A.isApprox(A));
  EXPECT_TRUE(stage.drift.isApprox(c));
}

}  // namespace
}  // namespace klgame
