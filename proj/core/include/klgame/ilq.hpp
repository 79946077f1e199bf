// Iterative linear-quadratic-Laplace solver: linearize dynamics, quadraticize
// costs, fit the reference as a Gaussian around the nominal trajectory, solve
// the resulting KL-LQG game, and update the nominal with a backtracking line
// search until the social cost stalls or the trajectory stops moving.
//
// The stage game is posed in deviation coordinates (dx, du) around the
// nominal; policies returned here are deviation-feedback laws
//   du_t = -K_t (x_t - xbar_t) - kappa_t.
#pragma once

#include "klgame/cost.hpp"
#include "klgame/dynamics.hpp"
#include "klgame/klqg.hpp"
#include "klgame/reference.hpp"
#include "klgame/types.hpp"

namespace klgame {

struct LQLConfig {
  int max_iterations = 100;
  double trajectory_tolerance = 1e-3;
  double cost_tolerance = 1e-4;
  int linesearch_max_halvings = 15;
  double initial_step = 1.0;
  // Include the lambda-weighted KL terms in the line-search social cost
  // (stage costs only when false).
  bool kl_in_social_cost = true;

  void validate() const;
};

// A complete game instance: dynamics, per-player costs, per-player reference
// policies and regularization weights.
struct GameProblem {
  std::shared_ptr<const Dynamics> dynamics;
  std::vector<PlayerCost> costs;
  std::vector<ReferencePolicy> refs;
  KLWeights lambda;

  const GameDims& dims() const { return dynamics->dims(); }
  void validate() const;
};

struct BackwardPassResult {
  std::vector<LinearGameStage> stages;
  std::vector<std::vector<QuadraticStageCost>> costs;  // [t][player]
  std::vector<std::vector<StageRef>> refs;             // [t][player], deviation coords
  KlqgSolution solution;
};

// Builds the KL-LQG approximation of `problem` at the nominal trajectory and
// solves it. References are mapped into deviation coordinates; stochastic
// references are Laplace-fitted at the nominal.
BackwardPassResult backward_pass(const Trajectory& nominal, const GameProblem& problem,
                                 const KLWeights& lambda);

// Mean-policy rollout with step scaling:
//   u_t = ubar_t - eps*K_t (x_t - xbar_t) - eps*kappa_t
// through the exact nonlinear dynamics.
Trajectory forward_pass(const Trajectory& nominal,
                        const std::vector<AffineGaussianPolicy>& policies,
                        double step, const Dynamics& dynamics);

// Sum over players of rollout stage costs plus, when enabled, the
// lambda-weighted KL from the (eps-scaled) policies to the fitted references
// along the rollout. Policies/refs are in deviation coordinates around
// `nominal`; `rollout` is the trajectory they produced.
double social_cost(const GameProblem& problem, const Trajectory& nominal,
                   const Trajectory& rollout,
                   const std::vector<AffineGaussianPolicy>& policies,
                   const std::vector<std::vector<StageRef>>& refs, double step,
                   bool include_kl);

struct LQLSolution {
  std::vector<AffineGaussianPolicy> policies;
  Trajectory nominal;
  int iterations_used = 0;
  bool converged = false;
  std::vector<double> social_cost_history;  // accepted iterates only
  std::vector<ValueQuadratic> values;
  std::vector<std::vector<StageRef>> refs;  // deviation refs at the final nominal
};

// Full LQL iteration. `initial_controls` may be empty for the zero-control
// nominal. Returns converged = false with the best iterate when the
// iteration budget is exhausted.
LQLSolution solve(const GameProblem& problem, const Vec& x0,
                  const std::vector<JointControl>& initial_controls,
                  const KLWeights& lambda, const LQLConfig& config);

}  // namespace klgame
