#include "klgame/klqg.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace klgame {
namespace {

using test::expected_cost;
using test::make_random_game;
using test::RandomGame;
using test::riccati_residual;

// Scalar LQR, A = B = Q = R = 1, lambda = 0, two stages: the last-stage gain
// is zero (no cost beyond it), then K = 0.5, Z walks 1 -> 1.5.
TEST(SolveKlqg, HandRiccatiScalarLqr) {
  RandomGame game;
  game.dims.n_players = 1;
  game.dims.state_dim = 1;
  game.dims.control_dims = {1};
  game.dims.horizon = 2;
  game.dims.dt = 1.0;

  LinearGameStage stage;
  stage.A = Mat::Ones(1, 1);
  stage.B = {Mat::Ones(1, 1)};
  stage.drift = Vec::Zero(1);
  stage.noise_cov = Mat::Zero(1, 1);
  game.stages.assign(2, stage);

  QuadraticStageCost cost;
  cost.Q = Mat::Ones(1, 1);
  cost.q = Vec::Zero(1);
  cost.R = {Mat::Ones(1, 1)};
  cost.r = {Vec::Zero(1)};
  game.costs.assign(2, {cost});
  game.lambda.lambda = {0.0};

  const auto refs = stagerefs_maxent(game.dims);
  const KlqgSolution sol = solve_klqg_stagerefs(game.stages, game.costs, refs,
                                                game.lambda);

  EXPECT_NEAR(sol.policies[0].K[1](0, 0), 0.0, 1e-14);
  EXPECT_NEAR(sol.values[0].Z[1](0, 0), 1.0, 1e-14);
  EXPECT_NEAR(sol.policies[0].K[0](0, 0), 0.5, 1e-14);
  EXPECT_NEAR(sol.values[0].Z[0](0, 0), 1.5, 1e-14);
  // lambda = 0 marks a deterministic policy.
  EXPECT_DOUBLE_EQ(sol.policies[0].cov[0].cwiseAbs().maxCoeff(), 0.0);
}

// Direct substitution into the covariance formula: lambda = 1, R = 1,
// B'Z B = 0 (terminal stage), cov(ref) = 1: cov = [(1)(1+0) + 1]^-1 = 0.5.
TEST(SolveKlqg, CovarianceFormulaScalar) {
  Rng rng(0);
  RandomGame game = make_random_game(1, 1, 1, rng);
  game.stages[0].A = Mat::Ones(1, 1);
  game.stages[0].B = {Mat::Ones(1, 1)};
  game.stages[0].drift = Vec::Zero(1);
  game.costs[0][0].R = {Mat::Ones(1, 1)};
  game.costs[0][0].r = {Vec::Zero(1)};
  game.lambda.lambda = {1.0};
  game.gaussian_refs[0].mean = {Vec::Zero(1)};
  game.gaussian_refs[0].cov = {Mat::Ones(1, 1)};

  const KlqgSolution sol =
      solve_klqg(game.stages, game.costs, game.gaussian_refs, game.lambda);
  EXPECT_NEAR(sol.policies[0].cov[0](0, 0), 0.5, 1e-12);
}

TEST(SolveKlqg, RiccatiResidualOnRandomGames) {
  Rng rng(21);
  for (int k = 0; k < 20; ++k) {
    const int N = 1 + k % 3;
    const int n = 2 + 2 * (k % 3);
    RandomGame game = make_random_game(N, n, 6, rng);
    const auto refs = stagerefs_from_gaussian(game.gaussian_refs, n, 6);
    const KlqgSolution sol =
        solve_klqg(game.stages, game.costs, game.gaussian_refs, game.lambda);
    EXPECT_LT(riccati_residual(game, sol, refs), 1e-8);
    EXPECT_LT(sol.max_asymmetry, 1e-9);
  }
}

TEST(SolveKlqgFeedback, RiccatiResidualOnRandomGames) {
  Rng rng(22);
  for (int k = 0; k < 10; ++k) {
    RandomGame game = make_random_game(2, 2, 5, rng);
    const auto refs = stagerefs_from_feedback(game.feedback_refs, 5);
    const KlqgSolution sol = solve_klqg_feedback(game.stages, game.costs,
                                                 game.feedback_refs, game.lambda);
    EXPECT_LT(riccati_residual(game, sol, refs), 1e-8);
  }
}

TEST(SolveKlqg, CovarianceSpdWhenRegularized) {
  Rng rng(23);
  RandomGame game = make_random_game(2, 4, 6, rng);
  const KlqgSolution sol =
      solve_klqg(game.stages, game.costs, game.gaussian_refs, game.lambda);
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 6; ++t) {
      Eigen::SelfAdjointEigenSolver<Mat> es(sol.policies[i].cov[t]);
      EXPECT_GT(es.eigenvalues().minCoeff(), 1e-12);
    }
  }
}

// Corollary: reduction to the reference policy as lambda -> infinity.
TEST(SolveKlqg, LargeLambdaReproducesReference) {
  Rng rng(24);
  RandomGame game = make_random_game(2, 3, 5, rng);
  game.lambda.lambda = {1e12, 1e12};

  const KlqgSolution sol =
      solve_klqg(game.stages, game.costs, game.gaussian_refs, game.lambda);
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 5; ++t) {
      const Vec x = rng.gaussian_vec(3);
      const Vec mu = -(sol.policies[i].K[t] * x) - sol.policies[i].kappa[t];
      const Vec ref_mu = game.gaussian_refs[i].mean[t];
      EXPECT_LT((mu - ref_mu).cwiseAbs().maxCoeff() /
                    std::max(1.0, ref_mu.cwiseAbs().maxCoeff()),
                1e-4);
      EXPECT_LT((sol.policies[i].cov[t] - game.gaussian_refs[i].cov[t])
                        .cwiseAbs()
                        .maxCoeff() /
                    game.gaussian_refs[i].cov[t].cwiseAbs().maxCoeff(),
                1e-4);
    }
  }
}

TEST(SolveKlqgFeedback, LargeLambdaReproducesFeedbackReference) {
  Rng rng(25);
  RandomGame game = make_random_game(2, 3, 4, rng);
  game.lambda.lambda = {1e12, 1e12};

  const KlqgSolution sol = solve_klqg_feedback(game.stages, game.costs,
                                               game.feedback_refs, game.lambda);
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 4; ++t) {
      const Mat& Ktil = game.feedback_refs[i].K[t];
      const Vec& ktil = game.feedback_refs[i].kappa[t];
      EXPECT_LT((sol.policies[i].K[t] - Ktil).cwiseAbs().maxCoeff() /
                    std::max(1.0, Ktil.cwiseAbs().maxCoeff()),
                1e-4);
      EXPECT_LT((sol.policies[i].kappa[t] - ktil).cwiseAbs().maxCoeff() /
                    std::max(1.0, ktil.cwiseAbs().maxCoeff()),
                1e-4);
    }
  }
}

// Corollary: with zero reference gains the feedback path collapses onto the
// open-loop path with mu~ = -kappa~.
TEST(SolveKlqgFeedback, ZeroGainsMatchOpenLoop) {
  Rng rng(26);
  RandomGame game = make_random_game(2, 3, 5, rng);

  std::vector<FeedbackGaussianRef> zero_gain = game.feedback_refs;
  std::vector<GaussianRef> open_loop(2);
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 5; ++t) {
      zero_gain[i].K[t].setZero();
      open_loop[i].mean.push_back(-zero_gain[i].kappa[t]);
      open_loop[i].cov.push_back(zero_gain[i].cov[t]);
    }
  }

  const KlqgSolution a =
      solve_klqg_feedback(game.stages, game.costs, zero_gain, game.lambda);
  const KlqgSolution b = solve_klqg(game.stages, game.costs, open_loop, game.lambda);

  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 5; ++t) {
      EXPECT_LT((a.policies[i].K[t] - b.policies[i].K[t]).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LT((a.policies[i].kappa[t] - b.policies[i].kappa[t]).cwiseAbs().maxCoeff(),
                1e-10);
      EXPECT_LT((a.policies[i].cov[t] - b.policies[i].cov[t]).cwiseAbs().maxCoeff(),
                1e-10);
    }
  }
}

// Corollary: uninformative reference recovers the maximum-entropy solution.
TEST(SolveKlqg, UninformativeReferenceIsMaxEnt) {
  Rng rng(27);
  RandomGame game = make_random_game(2, 3, 5, rng, {.affine_terms = false});

  const KlqgSolution maxent = solve_maxent(game.stages, game.costs, game.lambda);

  double prev_dev = std::numeric_limits<double>::infinity();
  for (const double sigma2 : {1e2, 1e4, 1e6}) {
    std::vector<GaussianRef> refs(2);
    for (int i = 0; i < 2; ++i) {
      refs[i] = GaussianRef::constant(Vec::Zero(2), sigma2 * Mat::Identity(2, 2), 5);
    }
    const KlqgSolution sol = solve_klqg(game.stages, game.costs, refs, game.lambda);

    double dev = 0.0;
    for (int i = 0; i < 2; ++i) {
      for (int t = 0; t < 5; ++t) {
        dev = std::max(dev, (sol.policies[i].K[t] - maxent.policies[i].K[t])
                                    .cwiseAbs()
                                    .maxCoeff() /
                                std::max(1.0, maxent.policies[i].K[t]
                                                  .cwiseAbs()
                                                  .maxCoeff()));
        dev = std::max(dev, (sol.policies[i].cov[t] - maxent.policies[i].cov[t])
                                    .cwiseAbs()
                                    .maxCoeff() /
                                maxent.policies[i].cov[t].cwiseAbs().maxCoeff());
      }
    }
    EXPECT_LT(dev, prev_dev);
    prev_dev = dev;
  }
  EXPECT_LT(prev_dev, 1e-4);
}

// Corollary: lambda -> 0 recovers the deterministic LQ game solution.
TEST(SolveKlqg, SmallLambdaRecoversDeterministicGame) {
  Rng rng(28);
  RandomGame game = make_random_game(2, 3, 5, rng);

  KLWeights zero;
  zero.lambda = {0.0, 0.0};
  const KlqgSolution det =
      solve_klqg(game.stages, game.costs, game.gaussian_refs, zero);

  double prev_dev = std::numeric_limits<double>::infinity();
  for (const double lam : {1e-2, 1e-4, 1e-6}) {
    KLWeights w;
    w.lambda = {lam, lam};
    const KlqgSolution sol =
        solve_klqg(game.stages, game.costs, game.gaussian_refs, w);
    double dev = 0.0;
    for (int i = 0; i < 2; ++i) {
      for (int t = 0; t < 5; ++t) {
        dev = std::max(dev,
                       (sol.policies[i].K[t] - det.policies[i].K[t]).cwiseAbs().maxCoeff());
        dev = std::max(dev, (sol.policies[i].kappa[t] - det.policies[i].kappa[t])
                                    .cwiseAbs()
                                    .maxCoeff());
      }
    }
    EXPECT_LT(dev, prev_dev);
    prev_dev = dev;
  }
  EXPECT_LT(prev_dev, 1e-5);
}

TEST(SolveKlqg, ProcessNoiseDoesNotChangePolicies) {
  Rng rng(29);
  RandomGame game = make_random_game(2, 3, 5, rng);
  RandomGame noisy = game;
  for (auto& stage : noisy.stages)
    stage.noise_cov = Mat::Identity(3, 3);

  const KlqgSolution a =
      solve_klqg(game.stages, game.costs, game.gaussian_refs, game.lambda);
  const KlqgSolution b =
      solve_klqg(noisy.stages, noisy.costs, noisy.gaussian_refs, noisy.lambda);
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 5; ++t) {
      EXPECT_TRUE((a.policies[i].K[t].array() == b.policies[i].K[t].array()).all());
      EXPECT_TRUE(
          (a.policies[i].kappa[t].array() == b.policies[i].kappa[t].array()).all());
      EXPECT_TRUE((a.policies[i].cov[t].array() == b.policies[i].cov[t].array()).all());
    }
  }
}

TEST(SolveKlqg, SingularSystemThrowsWithTimestep) {
  Rng rng(30);
  RandomGame game = make_random_game(1, 2, 3, rng);
  game.lambda.lambda = {0.0};
  // Zero own-control cost and B makes the gain block exactly singular.
  for (int t = 0; t < 3; ++t) {
    game.costs[t][0].R[0].setZero();
    game.stages[t].B[0].setZero();
  }
  try {
    solve_klqg(game.stages, game.costs, game.gaussian_refs, game.lambda);
    FAIL() << "expected SingularRiccatiError";
  } catch (const SingularRiccatiError& e) {
    EXPECT_EQ(e.timestep, 2);  // backward sweep hits the last stage first
  }
}

TEST(VerifyStationarity, SolvedPoliciesAreStationary) {
  Rng rng(31);
  RandomGame game = make_random_game(2, 3, 4, rng);
  const auto refs = stagerefs_from_gaussian(game.gaussian_refs, 3, 4);
  const KlqgSolution sol =
      solve_klqg(game.stages, game.costs, game.gaussian_refs, game.lambda);

  for (int t = 0; t < 4; ++t)
    for (int i = 0; i < 2; ++i)
      EXPECT_LT(verify_stationarity(sol, game.stages, game.costs, refs, game.lambda,
                                    t, i),
                1e-6);
}

TEST(VerifyStationarity, DetectsPerturbedGain) {
  Rng rng(32);
  RandomGame game = make_random_game(2, 3, 4, rng);
  const auto refs = stagerefs_from_gaussian(game.gaussian_refs, 3, 4);
  KlqgSolution sol =
      solve_klqg(game.stages, game.costs, game.gaussian_refs, game.lambda);

  sol.policies[0].K[2].array() += 1e-2;
  EXPECT_GT(verify_stationarity(sol, game.stages, game.costs, refs, game.lambda, 2, 0),
            1e-4);
}

TEST(VerifyStationarity, DeterministicPathSkipsCovariance) {
  Rng rng(33);
  RandomGame game = make_random_game(1, 2, 3, rng);
  game.lambda.lambda = {0.0};
  const auto refs = stagerefs_maxent(game.dims);
  const KlqgSolution sol =
      solve_klqg_stagerefs(game.stages, game.costs, refs, game.lambda);
  for (int t = 0; t < 3; ++t)
    EXPECT_LT(verify_stationarity(sol, game.stages, game.costs, refs, game.lambda,
                                  t, 0),
              1e-6);
}

// Unilateral gain perturbations never reduce the perturbing player's exact
// expected cost: the Nash property, checked against the forward-propagation
// oracle that never touches the backward recursion.
TEST(SolveKlqg, NashDeviationSpotCheck) {
  Rng rng(34);
  for (int k = 0; k < 5; ++k) {
    RandomGame game = make_random_game(2, 3, 4, rng);
    const auto refs = stagerefs_from_gaussian(game.gaussian_refs, 3, 4);
    const KlqgSolution sol =
        solve_klqg(game.stages, game.costs, game.gaussian_refs, game.lambda);

    for (int i = 0; i < 2; ++i) {
      const double base = expected_cost(game, sol.policies, refs, i);
      for (int trial = 0; trial < 20; ++trial) {
        auto perturbed = sol.policies;
        for (int t = 0; t < 4; ++t) {
          Mat noise(2, 3);
          for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) noise(r, c) = 1e-2 * rng.gaussian();
          perturbed[i].K[t] += noise;
        }
        EXPECT_GT(expected_cost(game, perturbed, refs, i), base - 1e-8);
      }
    }
  }
}

// Same property under state-feedback references; pins the sign of the
// reference terms in the value recursion.
TEST(SolveKlqgFeedback, NashDeviationSpotCheck) {
  Rng rng(35);
  RandomGame game = make_random_game(2, 3, 4, rng);
  const auto refs = stagerefs_from_feedback(game.feedback_refs, 4);
  const KlqgSolution sol = solve_klqg_feedback(game.stages, game.costs,
                                               game.feedback_refs, game.lambda);
  for (int i = 0; i < 2; ++i) {
    const double base = expected_cost(game, sol.policies, refs, i);
    for (int trial = 0; trial < 20; ++trial) {
      auto perturbed = sol.policies;
      for (int t = 0; t < 4; ++t) {
        Mat noise(2, 3);
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < 3; ++c) noise(r, c) = 1e-2 * rng.gaussian();
        perturbed[i].K[t] += noise;
      }
      EXPECT_GT(expected_cost(game, perturbed, refs, i), base - 1e-8);
    }
  }
}

// Also perturb the feedforward terms: kappa is where a sign error in the
// z-recursion's reference coupling would surface.
TEST(SolveKlqg, NashDeviationInFeedforward) {
  Rng rng(36);
  RandomGame game = make_random_game(2, 3, 4, rng);
  const auto refs = stagerefs_from_gaussian(game.gaussian_refs, 3, 4);
  const KlqgSolution sol =
      solve_klqg(game.stages, game.costs, game.gaussian_refs, game.lambda);
  for (int i = 0; i < 2; ++i) {
    const double base = expected_cost(game, sol.policies, refs, i);
    for (int trial = 0; trial < 50; ++trial) {
      auto perturbed = sol.policies;
      for (int t = 0; t < 4; ++t)
        perturbed[i].kappa[t] += 1e-2 * rng.gaussian_vec(2);
      EXPECT_GT(expected_cost(game, perturbed, refs, i), base - 1e-8);
    }
  }
}

// ---- Lemma-1 minimizer density -------------------------------------------------

TEST(BellmanDensity, ZeroQEqualsReference) {
  const Vec mean = Vec::Constant(1, 0.3);
  const Mat cov = 0.7 * Mat::Identity(1, 1);
  for (double u = -2.0; u <= 2.0; u += 0.25) {
    const Vec uv = Vec::Constant(1, u);
    const double d = bellman_optimal_policy_density(
        [](const Vec&) { return 0.0; }, mean, cov, 1.3, uv);
    EXPECT_NEAR(d, std::exp(gaussian_log_density(uv, mean, cov)), 1e-10);
  }
}

TEST(BellmanDensity, HugeLambdaEqualsReference) {
  const Vec mean = Vec::Zero(1);
  const Mat cov = Mat::Identity(1, 1);
  for (double u = -2.0; u <= 2.0; u += 0.5) {
    const Vec uv = Vec::Constant(1, u);
    const double d = bellman_optimal_policy_density(
        [](const Vec& x) { return 0.5 * x(0) * x(0) + x(0); }, mean, cov, 1e9, uv);
    EXPECT_NEAR(d, std::exp(gaussian_log_density(uv, mean, cov)), 1e-8);
  }
}

TEST(BellmanDensity, QuadraticQMatchesCompletedSquare) {
  // exp(-(a u^2/2 + b u)/lambda) N(u; m, s) is Gaussian with precision
  // a/lambda + 1/s and mean prec^-1 (m/s - b/lambda).
  const double a = 2.0, b = -0.7, lambda = 1.4, m = 0.3, s = 0.6;
  const double prec = a / lambda + 1.0 / s;
  const double mean_post = (m / s - b / lambda) / prec;

  const Vec ref_mean = Vec::Constant(1, m);
  const Mat ref_cov = s * Mat::Identity(1, 1);
  for (double u = -2.0; u <= 2.0; u += 0.2) {
    const Vec uv = Vec::Constant(1, u);
    const double actual = bellman_optimal_policy_density(
        [&](const Vec& x) { return 0.5 * a * x(0) * x(0) + b * x(0); }, ref_mean,
        ref_cov, lambda, uv);
    const double expected = std::exp(gaussian_log_density(
        uv, Vec::Constant(1, mean_post), Mat::Constant(1, 1, 1.0 / prec)));
    EXPECT_NEAR(actual, expected, 1e-8 * std::max(1.0, expected));
  }
}

TEST(BellmanDensity, RejectsHighDimensionalControls) {
  EXPECT_THROW(bellman_optimal_policy_density([](const Vec&) { return 0.0; },
                                              Vec::Zero(3), Mat::Identity(3, 3), 1.0,
                                              Vec::Zero(3)),
               UnsupportedError);
}

TEST(GaussHermite, IntegratesPolynomialsExactly) {
  std::vector<double> nodes, weights;
  gauss_hermite(20, &nodes, &weights);
  // integral e^{-x^2} x^2 dx = sqrt(pi)/2.
  double acc = 0.0;
  for (size_t k = 0; k < nodes.size(); ++k) acc += weights[k] * nodes[k] * nodes[k];
  EXPECT_NEAR(acc, std::sqrt(M_PI) / 2.0, 1e-12);
}

}  // namespace
}  // namespace klgame
