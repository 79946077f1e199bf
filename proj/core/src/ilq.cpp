#include "klgame/ilq.hpp"

#include <cmath>
#include <limits>

namespace klgame {

void LQLConfig::validate() const {
  if (max_iterations < 1) throw ConfigError("LQLConfig: max_iterations must be >= 1");
  if (!(trajectory_tolerance > 0.0))
    throw ConfigError("LQLConfig: trajectory_tolerance must be > 0");
  if (!(cost_tolerance > 0.0))
    throw ConfigError("LQLConfig: cost_tolerance must be > 0");
  if (linesearch_max_halvings < 0)
    throw ConfigError("LQLConfig: linesearch_max_halvings must be >= 0");
  if (!(initial_step > 0.0 && initial_step <= 1.0))
    throw ConfigError("LQLConfig: initial_step must be in (0, 1]");
}

void GameProblem::validate() const {
  if (!dynamics) throw ConfigError("GameProblem: dynamics missing");
  const GameDims& d = dims();
  d.validate();
  if (static_cast<int>(costs.size()) != d.n_players)
    throw DimensionError("GameProblem: need one cost per player");
  if (static_cast<int>(refs.size()) != d.n_players)
    throw DimensionError("GameProblem: need one reference entry per player");
  lambda.validate(d.n_players);
}

namespace {

// Maps player `i`'s reference into deviation coordinates at stage t.
StageRef deviation_ref(const ReferencePolicy& ref, const GameDims& dims,
                       const Trajectory& nominal,
                       const GaussianRef* laplace_cache, int i, int t) {
  const Vec& xbar = nominal.states[t];
  const Vec& ubar = nominal.controls[t].per_player[i];
  const int mi = dims.control_dims[i];

  if (std::holds_alternative<std::monostate>(ref) ||
      std::holds_alternative<MaxEntRef>(ref)) {
    return StageRef::maxent(mi, dims.state_dim);
  }
  if (const auto* g = std::get_if<GaussianRef>(&ref)) {
    return StageRef::from_gaussian(g->mean[t] - ubar, g->cov[t], dims.state_dim);
  }
  if (const auto* f = std::get_if<FeedbackGaussianRef>(&ref)) {
    // mu(x) = -K x - kappa in absolute coordinates becomes
    // dmu(dx) = -K dx - (kappa + K xbar + ubar).
    return StageRef::from_feedback(f->K[t], f->kappa[t] + f->K[t] * xbar + ubar,
                                   f->cov[t]);
  }
  if (std::holds_alternative<std::shared_ptr<const StochasticPolicy>>(ref)) {
    return StageRef::from_gaussian(laplace_cache->mean[t] - ubar,
                                   laplace_cache->cov[t], dims.state_dim);
  }
  throw UnsupportedError("backward_pass: unsupported reference kind for the "
                         "unimodal solver");
}

}  // namespace

BackwardPassResult backward_pass(const Trajectory& nominal, const GameProblem& problem,
                                 const KLWeights& lambda) {
  const GameDims& dims = problem.dims();
  nominal.check_invariants(dims);
  const int T = dims.horizon;
  const int N = dims.n_players;

  BackwardPassResult out;
  out.stages.reserve(T);
  out.costs.resize(T);
  out.refs.resize(T);

  // Laplace-fit stochastic references once per pass.
  std::vector<GaussianRef> laplace(N);
  for (int i = 0; i < N; ++i) {
    if (const auto* p =
            std::get_if<std::shared_ptr<const StochasticPolicy>>(&problem.refs[i]))
      laplace[i] = laplace_fit(**p, nominal, i);
  }

  for (int t = 0; t < T; ++t) {
    out.stages.push_back(
        problem.dynamics->linearize(nominal.states[t], nominal.controls[t]));
    out.costs[t].reserve(N);
    out.refs[t].reserve(N);
    for (int i = 0; i < N; ++i) {
      out.costs[t].push_back(
          problem.costs[i].quadraticize(nominal.states[t], nominal.controls[t]));
      out.refs[t].push_back(
          deviation_ref(problem.refs[i], dims, nominal, &laplace[i], i, t));
    }
  }

  out.solution = solve_klqg_stagerefs(out.stages, out.costs, out.refs, lambda);
  return out;
}

Trajectory forward_pass(const Trajectory& nominal,
                        const std::vector<AffineGaussianPolicy>& policies,
                        double step, const Dynamics& dynamics) {
  if (!(step > 0.0 && step <= 1.0))
    throw NumericalError("forward_pass: step must be in (0, 1]");
  const GameDims& dims = dynamics.dims();
  const int T = nominal.horizon();
  const int N = dims.n_players;

  Trajectory out;
  out.states.reserve(T + 1);
  out.controls.reserve(T);
  out.states.push_back(nominal.states[0]);

  for (int t = 0; t < T; ++t) {
    const Vec dx = out.states[t] - nominal.states[t];
    JointControl u(dims);
    for (int i = 0; i < N; ++i) {
      u.per_player[i] = nominal.controls[t].per_player[i] -
                        step * (policies[i].K[t] * dx) - step * policies[i].kappa[t];
    }
    Vec next = dynamics.step(out.states[t], u);
    if (!next.allFinite())
      throw NumericalError("forward_pass: non-finite state at step " +
                           std::to_string(t));
    out.controls.push_back(std::move(u));
    out.states.push_back(std::move(next));
  }
  return out;
}

double social_cost(const GameProblem& problem, const Trajectory& nominal,
                   const Trajectory& rollout,
                   const std::vector<AffineGaussianPolicy>& policies,
                   const std::vector<std::vector<StageRef>>& refs, double step,
                   bool include_kl) {
  const GameDims& dims = problem.dims();
  const int T = dims.horizon;
  const int N = dims.n_players;
  constexpr double kLog2PiE = 2.8378770664093454835606594728112;

  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    const Vec dx = rollout.states[t] - nominal.states[t];
    for (int i = 0; i < N; ++i) {
      total += problem.costs[i].evaluate(rollout.states[t], rollout.controls[t]);

      const double lam = problem.lambda.lambda[i];
      if (!include_kl || lam <= 0.0) continue;

      const Vec mean_dev = -step * (policies[i].K[t] * dx) - step * policies[i].kappa[t];
      const Mat cov = step * policies[i].cov[t];
      const StageRef& ref = refs[t][i];
      if (ref.informative) {
        const Vec ref_mean_dev = -(ref.Ktil * dx) - ref.ktil;
        total += lam * gaussian_kl(mean_dev, cov, ref_mean_dev, ref.cov);
      } else {
        // Maximum-entropy objective: negative differential entropy.
        const Eigen::LLT<Mat> llt(cov);
        if (llt.info() != Eigen::Success)
          throw NumericalError("social_cost: policy covariance not SPD");
        double logdet = 0.0;
        for (int k = 0; k < cov.rows(); ++k)
          logdet += 2.0 * std::log(llt.matrixL()(k, k));
        total += -lam * 0.5 * (cov.rows() * kLog2PiE + logdet);
      }
    }
  }
  return total;
}

LQLSolution solve(const GameProblem& problem, const Vec& x0,
                  const std::vector<JointControl>& initial_controls,
                  const KLWeights& lambda, const LQLConfig& config) {
  problem.validate();
  config.validate();
  const GameDims& dims = problem.dims();

  std::vector<JointControl> controls = initial_controls;
  if (controls.empty()) controls.assign(dims.horizon, JointControl(dims));

  Trajectory nominal = make_trajectory(dims, x0, controls, *problem.dynamics);

  LQLSolution sol;
  double prev_cost = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;

  for (int iter = 0; iter < config.max_iterations && !converged; ++iter) {
    ++iterations;
    BackwardPassResult bp = backward_pass(nominal, problem, lambda);

    bool accepted = false;
    bool stationary = false;
    double eps = config.initial_step;
    int numerical_failures = 0;

    for (int h = 0; h <= config.linesearch_max_halvings; ++h, eps *= 0.5) {
      Trajectory candidate;
      try {
        candidate = forward_pass(nominal, bp.solution.policies, eps, *problem.dynamics);
      } catch (const NumericalError&) {
        ++numerical_failures;
        continue;
      }

      double traj_change = 0.0;
      for (int t = 0; t <= dims.horizon; ++t)
        traj_change = std::max(
            traj_change, (candidate.states[t] - nominal.states[t]).cwiseAbs().maxCoeff());

      const double cost = social_cost(problem, nominal, candidate,
                                      bp.solution.policies, bp.refs, eps,
                                      config.kl_in_social_cost);
      if (!std::isfinite(cost)) {
        ++numerical_failures;
        continue;
      }

      if (cost < prev_cost) {
        const bool close = traj_change < config.trajectory_tolerance;
        const bool cost_stalled =
            std::isfinite(prev_cost) &&
            std::abs(prev_cost - cost) < config.cost_tolerance * std::max(1.0, std::abs(prev_cost));
        nominal = std::move(candidate);
        prev_cost = cost;
        sol.social_cost_history.push_back(cost);
        accepted = true;
        converged = close || cost_stalled;
        break;
      }
      if (traj_change < config.trajectory_tolerance) {
        // No descent step left and the update no longer moves the
        // trajectory: stationary point.
        stationary = true;
        break;
      }
    }

    if (stationary) {
      converged = true;
    } else if (!accepted) {
      if (numerical_failures > config.linesearch_max_halvings)
        throw LineSearchFailure("line search: rollout diverged at every step size");
      break;  // finite but non-improving and still moving; give up on budget
    }
  }

  // Final pass so the returned policies are expressed around the returned
  // nominal.
  BackwardPassResult bp = backward_pass(nominal, problem, lambda);
  sol.policies = std::move(bp.solution.policies);
  sol.values = std::move(bp.solution.values);
  sol.refs = std::move(bp.refs);
  sol.nominal = std::move(nominal);
  sol.iterations_used = iterations;
  sol.converged = converged;
  return sol;
}

}  // namespace klgame
