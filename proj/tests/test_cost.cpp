#include "klgame/cost.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

namespace klgame {
namespace {

GameDims two_player_bicycle_dims() {
  GameDims dims;
  dims.n_players = 2;
  dims.state_dim = 8;
  dims.control_dims = {2, 2};
  dims.horizon = 1;
  dims.dt = 0.1;
  return dims;
}

TEST(QuadraticCost, DirectSubstitution) {
  // Q = I, q = 0, R = I, x = (1, 0), u = (1): cost = 1/2 + 1/2 = 1.
  GameDims dims;
  dims.n_players = 1;
  dims.state_dim = 2;
  dims.control_dims = {1};
  dims.horizon = 1;
  dims.dt = 0.1;

  PlayerCost cost(dims, 0);
  cost.add_term(std::make_shared<QuadraticGameCostTerm>(
      Mat::Identity(2, 2), Vec::Zero(2), std::vector<Mat>{Mat::Identity(1, 1)},
      std::vector<Vec>{Vec::Zero(1)}));

  Vec x(2);
  x << 1.0, 0.0;
  JointControl u(dims);
  u.per_player[0](0) = 1.0;
  EXPECT_DOUBLE_EQ(cost.evaluate(x, u), 1.0);
}

TEST(QuadraticCost, QuadraticizeIsExact) {
  GameDims dims;
  dims.n_players = 2;
  dims.state_dim = 3;
  dims.control_dims = {2, 1};
  dims.horizon = 1;
  dims.dt = 0.1;

  Rng rng(4);
  Mat Q = Mat::Identity(3, 3) * 2.0 + 0.5 * Mat::Ones(3, 3);
  Vec q = rng.gaussian_vec(3);
  std::vector<Mat> R = {3.0 * Mat::Identity(2, 2), Mat::Identity(1, 1)};
  std::vector<Vec> r = {rng.gaussian_vec(2), rng.gaussian_vec(1)};

  PlayerCost cost(dims, 0);
  cost.add_term(std::make_shared<QuadraticGameCostTerm>(Q, q, R, r));

  const Vec x = rng.gaussian_vec(3);
  JointControl u(dims);
  u.per_player[0] = rng.gaussian_vec(2);
  u.per_player[1] = rng.gaussian_vec(1);

  const QuadraticStageCost quad = cost.quadraticize(x, u);
  EXPECT_TRUE(quad.Q.isApprox(Q, 1e-12));
  EXPECT_TRUE(quad.q.isApprox(Q * x + q, 1e-12));
  EXPECT_TRUE(quad.R[0].isApprox(R[0], 1e-12));
  EXPECT_TRUE(quad.r[0].isApprox(R[0] * u.per_player[0] + r[0], 1e-12));
  EXPECT_TRUE(quad.R[1].isApprox(R[1], 1e-12));
}

TEST(CollisionTerm, DecaysFarApart) {
  const GameDims dims = two_player_bicycle_dims();
  const double radius = 2.0;
  CollisionTerm term(0, 4, 1.0, radius);

  Vec x = Vec::Zero(8);
  x(4) = 10.0 * radius;  // 20 m longitudinal separation
  EXPECT_LT(term.evaluate(x, JointControl(dims)), 1e-6);
}

TEST(TollboothCost, CoordinatedBeatsUncoordinated) {
  const GameDims dims = two_player_bicycle_dims();
  TollboothCostConfig cfg;
  const PlayerCost cost0 = make_tollbooth_cost(cfg, 0, dims);
  const PlayerCost cost1 = make_tollbooth_cost(cfg, 1, dims);

  // Same progress and speed; only the lane allocation differs.
  Vec coordinated(8), uncoordinated(8);
  coordinated << 10.0, 1.85, 0.0, 10.0, 18.0, -1.85, 0.0, 10.0;
  uncoordinated << 10.0, 1.85, 0.0, 10.0, 18.0, 1.85, 0.0, 10.0;
  JointControl u(dims);

  const double c_coord =
      cost0.evaluate(coordinated, u) + cost1.evaluate(coordinated, u);
  const double c_same =
      cost0.evaluate(uncoordinated, u) + cost1.evaluate(uncoordinated, u);
  EXPECT_LT(c_coord, c_same);
}

TEST(TollboothCost, GradientsMatchFiniteDifferences) {
  const GameDims dims = two_player_bicycle_dims();
  TollboothCostConfig cfg;
  cfg.preferred_lane = 0;
  cfg.preference_weight = 2.0;
  const PlayerCost cost = make_tollbooth_cost(cfg, 0, dims);

  Rng rng(9);
  double worst_rel = 0.0;
  for (int k = 0; k < 100; ++k) {
    Vec x = rng.gaussian_vec(8);
    x(1) = 4.0 * (rng.uniform() - 0.5);  // lateral positions on the road
    x(5) = 4.0 * (rng.uniform() - 0.5);
    x(3) = 8.0 + 4.0 * rng.uniform();
    x(7) = 8.0 + 4.0 * rng.uniform();
    JointControl u(dims);
    u.per_player[0] = rng.gaussian_vec(2);
    u.per_player[1] = rng.gaussian_vec(2);

    const QuadraticStageCost quad = cost.quadraticize_raw(x, u);
    const Vec fd = test::fd_gradient(
        [&](const Vec& xs) { return cost.evaluate(xs, u); }, x);
    const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
    worst_rel = std::max(worst_rel, (quad.q - fd).cwiseAbs().maxCoeff() / scale);

    const Vec fd_u = test::fd_gradient(
        [&](const Vec& us) {
          JointControl uu = u;
          uu.per_player[0] = us;
          return cost.evaluate(x, uu);
        },
        u.per_player[0]);
    worst_rel = std::max(worst_rel,
                         (quad.r[0] - fd_u).cwiseAbs().maxCoeff() /
                             std::max(1.0, fd_u.cwiseAbs().maxCoeff()));
  }
  EXPECT_LT(worst_rel, 1e-5);
}

TEST(CollisionTerm, HessianMatchesFiniteDifferences) {
  const GameDims dims = two_player_bicycle_dims();
  CollisionTerm term(0, 4, 5.0, 2.0);

  Rng rng(17);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    Vec x = Vec::Zero(8);
    x(0) = rng.gaussian();
    x(1) = rng.gaussian();
    x(4) = x(0) + 1.0 + 3.0 * rng.uniform();
    x(5) = x(1) + rng.gaussian();

    QuadraticStageCost quad = QuadraticStageCost::zero(dims);
    term.accumulate(x, JointControl(dims), &quad);

    const Mat fd = test::fd_hessian(
        [&](const Vec& xs) { return term.evaluate(xs, JointControl(dims)); }, x);
    worst = std::max(worst, (quad.Q - fd).cwiseAbs().maxCoeff() /
                                std::max(1.0, fd.cwiseAbs().maxCoeff()));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Quadraticize, ProjectsIndefiniteHessians) {
  // Near the collision saddle the raw Hessian is indefinite; the projected
  // output must satisfy the PSD floor.
  const GameDims dims = two_player_bicycle_dims();
  TollboothCostConfig cfg;
  const PlayerCost cost = make_tollbooth_cost(cfg, 0, dims);

  Vec x = Vec::Zero(8);
  x(0) = 0.0;
  x(4) = 1.0;  // within the collision radius
  x(3) = x(7) = 10.0;

  const QuadraticStageCost raw = cost.quadraticize_raw(x, JointControl(dims));
  Eigen::SelfAdjointEigenSolver<Mat> raw_eigs(raw.Q);
  ASSERT_LT(raw_eigs.eigenvalues().minCoeff(), 0.0);

  const QuadraticStageCost quad = cost.quadraticize(x, JointControl(dims));
  Eigen::SelfAdjointEigenSolver<Mat> eigs(quad.Q);
  EXPECT_GE(eigs.eigenvalues().minCoeff(), kPsdFloor - 1e-12);
  EXPECT_NO_THROW(quad.check_invariants(dims, 0));
}

TEST(Quadraticize, GradientUnchangedByProjection) {
  const GameDims dims = two_player_bicycle_dims();
  TollboothCostConfig cfg;
  const PlayerCost cost = make_tollbooth_cost(cfg, 0, dims);

  Vec x = Vec::Zero(8);
  x(4) = 1.0;
  x(3) = x(7) = 10.0;
  const QuadraticStageCost raw = cost.quadraticize_raw(x, JointControl(dims));
  const QuadraticStageCost projected = cost.quadraticize(x, JointControl(dims));
  EXPECT_TRUE(raw.q.isApprox(projected.q));
}

TEST(PairwiseTerms, IgnoreUninvolvedPlayers) {
  GameDims dims;
  dims.n_players = 3;
  dims.state_dim = 12;
  dims.control_dims = {2, 2, 2};
  dims.horizon = 1;
  dims.dt = 0.1;

  CollisionTerm term(0, 4, 3.0, 2.0);
  Rng rng(23);
  Vec x = rng.gaussian_vec(12);
  Vec x_relabel = x;
  x_relabel.segment(8, 4) = rng.gaussian_vec(4);  // perturb player 3 only

  JointControl u(dims);
  EXPECT_DOUBLE_EQ(term.evaluate(x, u), term.evaluate(x_relabel, u));
}

TEST(LaneCenterTerm, ZeroNearCentersPositiveBetween) {
  LaneCenterTerm term(0, {1.85, -1.85}, 0.3, 0.1, 1.0);
  EXPECT_NEAR(term.value_1d(1.85), 0.0, 0.08);   // softmin offset only
  EXPECT_NEAR(term.value_1d(-1.85), 0.0, 0.08);
  EXPECT_GT(term.value_1d(0.0), 0.5);            // barrier between lanes
  EXPECT_GT(term.value_1d(3.5), term.value_1d(1.85) + 0.5);
}

TEST(TollboothConfig, RejectsNegativeWeights) {
  TollboothCostConfig cfg;
  cfg.lane_weight = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);

  TollboothCostConfig cfg2;
  cfg2.collision_radius = 0.0;
  EXPECT_THROW(cfg2.validate(), ConfigError);
}

}  // namespace
}  // namespace klgame
