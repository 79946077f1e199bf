#include "klgame/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace klgame {

std::vector<int> ScenarioTree::leaves() const {
  std::vector<int> out;
  for (size_t k = 0; k < nodes.size(); ++k)
    if (nodes[k].children.empty()) out.push_back(static_cast<int>(k));
  return out;
}

std::vector<int> ScenarioTree::branch(int leaf) const {
  std::vector<int> path;
  for (int idx = leaf; idx >= 0; idx = nodes[idx].parent) path.push_back(idx);
  std::reverse(path.begin(), path.end());
  return path;
}

void ScenarioTree::check_invariants() const {
  if (nodes.empty() || nodes[0].timestep != 0 || nodes[0].parent != -1)
    throw DimensionError("ScenarioTree: root must be node 0 at timestep 0");
  for (size_t k = 0; k < nodes.size(); ++k) {
    const TreeNode& nd = nodes[k];
    if (nd.children.empty()) {
      if (nd.timestep != horizon)
        throw DimensionError("ScenarioTree: every leaf must sit at the horizon");
      continue;
    }
    for (int i = 0; i < n_players; ++i) {
      double sum = 0.0;
      for (int c : nd.children) sum += nodes[c].weight[i];
      if (std::abs(sum - 1.0) > 1e-9)
        throw NumericalError("ScenarioTree: children weights must sum to 1");
    }
  }
}

void GMMPolicy::check_invariants() const {
  if (components.empty())
    throw DimensionError("GMMPolicy: need at least one component");
  const int N = static_cast<int>(components[0].weight.size());
  for (int i = 0; i < N; ++i) {
    double sum = 0.0;
    for (const auto& c : components) sum += c.weight[i];
    if (std::abs(sum - 1.0) > 1e-9)
      throw NumericalError("GMMPolicy: component weights must sum to 1");
  }
}

namespace {

int ref_mode_count(const ReferencePolicy& ref) {
  if (const auto* g = std::get_if<GMMRef>(&ref)) return g->n_modes();
  return 1;
}

// Player i's mode-m reference mean at (x, t); zero for unreferenced players.
Vec mode_mean(const ReferencePolicy& ref, int mode, const Vec& x, int t, int mi) {
  if (const auto* g = std::get_if<GMMRef>(&ref)) {
    return std::visit(
        [&](const auto& comp) -> Vec {
          if constexpr (std::is_same_v<std::decay_t<decltype(comp)>, GaussianRef>)
            return comp.mean[t];
          else
            return comp.mean_at(x, t);
        },
        g->modes[mode]);
  }
  if (const auto* g = std::get_if<GaussianRef>(&ref)) return g->mean[t];
  if (const auto* f = std::get_if<FeedbackGaussianRef>(&ref)) return f->mean_at(x, t);
  if (const auto* p = std::get_if<std::shared_ptr<const StochasticPolicy>>(&ref)) {
    Vec mean;
    Mat cov;
    laplace_fit_point(**p, x, Vec::Zero(mi), t, {}, &mean, &cov);
    return mean;
  }
  return Vec::Zero(mi);
}

// Deviation-coordinate stage reference for player i's mode-m component at the
// edge nominal (x, u_i).
StageRef edge_stage_ref(const ReferencePolicy& ref, int mode, const Vec& x,
                        const Vec& u_i, int t, int state_dim) {
  if (const auto* g = std::get_if<GMMRef>(&ref)) {
    return std::visit(
        [&](const auto& comp) -> StageRef {
          if constexpr (std::is_same_v<std::decay_t<decltype(comp)>, GaussianRef>)
            return StageRef::from_gaussian(comp.mean[t] - u_i, comp.cov[t], state_dim);
          else
            return StageRef::from_feedback(
                comp.K[t], comp.kappa[t] + comp.K[t] * x + u_i, comp.cov[t]);
        },
        g->modes[mode]);
  }
  if (const auto* g = std::get_if<GaussianRef>(&ref))
    return StageRef::from_gaussian(g->mean[t] - u_i, g->cov[t], state_dim);
  if (const auto* f = std::get_if<FeedbackGaussianRef>(&ref))
    return StageRef::from_feedback(f->K[t], f->kappa[t] + f->K[t] * x + u_i,
                                   f->cov[t]);
  if (const auto* p = std::get_if<std::shared_ptr<const StochasticPolicy>>(&ref)) {
    Vec mean;
    Mat cov;
    laplace_fit_point(**p, x, u_i, t, {}, &mean, &cov);
    return StageRef::from_gaussian(mean - u_i, cov, state_dim);
  }
  return StageRef::maxent(static_cast<int>(u_i.size()), state_dim);
}

// Player-averaged mode weights at a branch timestep, used for selection.
std::vector<double> averaged_mode_weights(const GameProblem& problem, int t, int M) {
  std::vector<double> avg(M, 0.0);
  int contributors = 0;
  for (const auto& ref : problem.refs) {
    if (const auto* g = std::get_if<GMMRef>(&ref)) {
      for (int m = 0; m < M; ++m) avg[m] += g->weights[t][m];
      ++contributors;
    }
  }
  if (contributors == 0) {
    std::fill(avg.begin(), avg.end(), 1.0 / M);
  } else {
    for (double& w : avg) w /= contributors;
  }
  return avg;
}

std::vector<double> renormalize_over(const std::vector<double>& row,
                                     const std::vector<int>& selected) {
  double sum = 0.0;
  for (int m : selected) sum += row[m];
  std::vector<double> out;
  out.reserve(selected.size());
  if (!(sum > 0.0)) {
    out.assign(selected.size(), 1.0 / selected.size());
    return out;
  }
  for (int m : selected) out.push_back(row[m] / sum);
  return out;
}

}  // namespace

ScenarioTree build_tree(const GameProblem& problem, const Vec& x0,
                        const MMConfig& config) {
  problem.validate();
  const GameDims& dims = problem.dims();
  check_state_dim(x0, dims, "build_tree");

  int M = 1;
  for (const auto& ref : problem.refs) M = std::max(M, ref_mode_count(ref));
  for (const auto& ref : problem.refs) {
    const int mi = ref_mode_count(ref);
    if (mi != 1 && mi != M)
      throw DimensionError("build_tree: mixture players must agree on mode count");
  }
  if (config.branching < 1 || config.branching > M)
    throw DimensionError("build_tree: branching must be in [1, n_modes]");

  std::vector<int> schedule = config.branch_schedule;
  std::sort(schedule.begin(), schedule.end());
  schedule.erase(std::unique(schedule.begin(), schedule.end()), schedule.end());
  for (int t : schedule)
    if (t < 0 || t >= dims.horizon)
      throw DimensionError("build_tree: branch timestep outside horizon");

  ScenarioTree tree;
  tree.horizon = dims.horizon;
  tree.n_players = dims.n_players;

  // Mode selection: forced list, or top-branching by player-averaged weight
  // with ties broken toward the lower mode index.
  std::vector<int> selected;
  if (config.forced_modes) {
    selected = *config.forced_modes;
    if (static_cast<int>(selected.size()) != config.branching)
      throw DimensionError("build_tree: forced mode list size must equal branching");
    for (int m : selected)
      if (m < 0 || m >= M) throw DimensionError("build_tree: forced mode out of range");
  } else {
    const int t0 = schedule.empty() ? 0 : schedule.front();
    const std::vector<double> avg = averaged_mode_weights(problem, t0, M);
    std::vector<int> order(M);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return avg[a] > avg[b]; });
    selected.assign(order.begin(), order.begin() + config.branching);
    std::sort(selected.begin(), selected.end());
  }
  tree.selected_modes = selected;

  TreeNode root;
  root.timestep = 0;
  root.state = x0;
  root.weight.assign(dims.n_players, 1.0);
  tree.nodes.push_back(std::move(root));

  // Breadth-first construction so parents precede children and timesteps are
  // nondecreasing in index order.
  std::vector<int> frontier = {0};
  for (int t = 0; t < dims.horizon; ++t) {
    const bool branch_here =
        std::find(schedule.begin(), schedule.end(), t) != schedule.end();
    std::vector<int> next_frontier;

    const std::vector<double> avg = averaged_mode_weights(problem, t, M);
    const std::vector<double> avg_renorm = renormalize_over(avg, selected);

    for (int parent_idx : frontier) {
      const TreeNode parent = tree.nodes[parent_idx];
      std::vector<int> child_modes =
          branch_here ? selected : std::vector<int>{parent.mode_id};

      for (size_t ci = 0; ci < child_modes.size(); ++ci) {
        const int mode = child_modes[ci];
        TreeNode child;
        child.parent = parent_idx;
        child.timestep = t + 1;
        child.mode_id = mode;

        child.weight.resize(dims.n_players);
        for (int i = 0; i < dims.n_players; ++i) {
          if (!branch_here) {
            child.weight[i] = 1.0;
          } else if (const auto* g = std::get_if<GMMRef>(&problem.refs[i]);
                     g != nullptr && g->n_modes() == M) {
            child.weight[i] = renormalize_over(g->weights[t], selected)[ci];
          } else {
            child.weight[i] = avg_renorm[ci];
          }
        }

        child.control = JointControl(dims);
        for (int i = 0; i < dims.n_players; ++i)
          child.control.per_player[i] = mode_mean(problem.refs[i], mode, parent.state,
                                                  t, dims.control_dims[i]);
        child.state = problem.dynamics->step(parent.state, child.control);
        if (!child.state.allFinite())
          throw NumericalError("build_tree: non-finite nominal state");

        const int child_idx = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(std::move(child));
        tree.nodes[parent_idx].children.push_back(child_idx);
        next_frontier.push_back(child_idx);
      }
    }
    frontier = std::move(next_frontier);
  }

  tree.check_invariants();
  return tree;
}

void mm_backward_pass(ScenarioTree* tree, const GameProblem& problem,
                      const KLWeights& lambda) {
  const GameDims& dims = problem.dims();
  const int N = dims.n_players;
  const int n = dims.state_dim;

  for (int idx = static_cast<int>(tree->nodes.size()) - 1; idx >= 0; --idx) {
    TreeNode& nd = tree->nodes[idx];

    if (nd.children.empty()) {
      nd.Z.assign(N, Mat::Zero(n, n));
      nd.z.assign(N, Vec::Zero(n));
      continue;
    }

    const int t = nd.timestep;
    StageSolve single_child_solve;
    int top_child = nd.children[0];
    double top_weight = -1.0;

    // Cached stage model of the top-weight child for the value solve.
    LinearGameStage top_stage;
    std::vector<QuadraticStageCost> top_costs;
    std::vector<StageRef> top_refs;

    for (int c_idx : nd.children) {
      TreeNode& child = tree->nodes[c_idx];

      LinearGameStage stage = problem.dynamics->linearize(nd.state, child.control);
      std::vector<QuadraticStageCost> costs_t;
      std::vector<StageRef> refs_t;
      costs_t.reserve(N);
      refs_t.reserve(N);
      for (int i = 0; i < N; ++i) {
        costs_t.push_back(problem.costs[i].quadraticize(nd.state, child.control));
        refs_t.push_back(edge_stage_ref(problem.refs[i], child.mode_id, nd.state,
                                        child.control.per_player[i], t, n));
      }

      StageSolve st = solve_klqg_stage(stage, costs_t, refs_t, lambda.lambda,
                                       child.Z, child.z, t);
      child.K = st.K;
      child.kappa = st.kappa;
      child.cov = st.cov;
      child.ref = refs_t;

      const double w = std::accumulate(child.weight.begin(), child.weight.end(), 0.0);
      if (w > top_weight) {
        top_weight = w;
        top_child = c_idx;
        top_stage = std::move(stage);
        top_costs = std::move(costs_t);
        top_refs = std::move(refs_t);
      }
      if (nd.children.size() == 1) single_child_solve = std::move(st);
    }

    if (nd.children.size() == 1) {
      nd.Z = std::move(single_child_solve.Z);
      nd.z = std::move(single_child_solve.z);
    } else {
      // Successor value parameters are the weighted sum of children values.
      std::vector<Mat> Z_bar(N, Mat::Zero(n, n));
      std::vector<Vec> z_bar(N, Vec::Zero(n));
      for (int c_idx : nd.children) {
        const TreeNode& child = tree->nodes[c_idx];
        for (int i = 0; i < N; ++i) {
          Z_bar[i] += child.weight[i] * child.Z[i];
          z_bar[i] += child.weight[i] * child.z[i];
        }
      }
      (void)top_child;
      StageSolve st = solve_klqg_stage(top_stage, top_costs, top_refs, lambda.lambda,
                                       Z_bar, z_bar, t);
      nd.Z = std::move(st.Z);
      nd.z = std::move(st.z);
    }
  }
}

ScenarioTree mm_forward_pass(const ScenarioTree& tree, double step,
                             const Dynamics& dynamics) {
  if (!(step > 0.0 && step <= 1.0))
    throw NumericalError("mm_forward_pass: step must be in (0, 1]");
  const GameDims& dims = dynamics.dims();

  ScenarioTree out = tree;
  for (size_t idx = 1; idx < out.nodes.size(); ++idx) {
    TreeNode& child = out.nodes[idx];
    const TreeNode& old_child = tree.nodes[idx];
    const Vec& parent_new = out.nodes[child.parent].state;
    const Vec& parent_old = tree.nodes[child.parent].state;
    const Vec dx = parent_new - parent_old;

    for (int i = 0; i < dims.n_players; ++i) {
      child.control.per_player[i] = old_child.control.per_player[i] -
                                    step * (old_child.K[i] * dx) -
                                    step * old_child.kappa[i];
    }
    child.state = dynamics.step(parent_new, child.control);
    if (!child.state.allFinite())
      throw NumericalError("mm_forward_pass: non-finite state on branch");
  }
  return out;
}

double mm_social_cost(const GameProblem& problem, const ScenarioTree& base,
                      const ScenarioTree& rollout, double step, bool include_kl) {
  const GameDims& dims = problem.dims();
  const int N = dims.n_players;
  constexpr double kLog2PiE = 2.8378770664093454835606594728112;

  double total = 0.0;
  for (int leaf : base.leaves()) {
    const std::vector<int> path = base.branch(leaf);

    std::vector<double> branch_weight(N, 1.0);
    double branch_cost = 0.0;
    for (size_t k = 1; k < path.size(); ++k) {
      const TreeNode& child_old = base.nodes[path[k]];
      const TreeNode& parent_old = base.nodes[path[k - 1]];
      const TreeNode& child_new = rollout.nodes[path[k]];
      const TreeNode& parent_new = rollout.nodes[path[k - 1]];

      for (int i = 0; i < N; ++i) branch_weight[i] *= child_old.weight[i];

      const Vec dx = parent_new.state - parent_old.state;
      for (int i = 0; i < N; ++i) {
        branch_cost += problem.costs[i].evaluate(parent_new.state, child_new.control);

        const double lam = problem.lambda.lambda[i];
        if (!include_kl || lam <= 0.0) continue;

        const Vec mean_dev = -step * (child_old.K[i] * dx) - step * child_old.kappa[i];
        const Mat cov = step * child_old.cov[i];
        const StageRef& ref = child_old.ref[i];
        if (ref.informative) {
          const Vec ref_mean_dev = -(ref.Ktil * dx) - ref.ktil;
          branch_cost += lam * gaussian_kl(mean_dev, cov, ref_mean_dev, ref.cov);
        } else {
          const Eigen::LLT<Mat> llt(cov);
          if (llt.info() != Eigen::Success)
            throw NumericalError("mm_social_cost: policy covariance not SPD");
          double logdet = 0.0;
          for (int r = 0; r < cov.rows(); ++r)
            logdet += 2.0 * std::log(llt.matrixL()(r, r));
          branch_cost += -lam * 0.5 * (cov.rows() * kLog2PiE + logdet);
        }
      }
    }

    const double w =
        std::accumulate(branch_weight.begin(), branch_weight.end(), 0.0) / N;
    total += w * branch_cost;
  }
  return total;
}

namespace {

std::vector<GMMPolicy> extract_policies(const ScenarioTree& tree) {
  std::vector<GMMPolicy> out(tree.nodes.size());
  for (size_t idx = 0; idx < tree.nodes.size(); ++idx) {
    const TreeNode& nd = tree.nodes[idx];
    if (nd.children.empty()) continue;
    GMMPolicy& pol = out[idx];
    pol.nominal_state = nd.state;
    for (int c_idx : nd.children) {
      const TreeNode& child = tree.nodes[c_idx];
      GMMPolicyComponent comp;
      comp.mode_id = child.mode_id;
      comp.weight = child.weight;
      comp.nominal_control = child.control;
      comp.K = child.K;
      comp.kappa = child.kappa;
      comp.cov = child.cov;
      pol.components.push_back(std::move(comp));
    }
    pol.check_invariants();
  }
  return out;
}

}  // namespace

MMSolution solve_mm(const GameProblem& problem, const Vec& x0,
                    const KLWeights& lambda, const MMConfig& config,
                    const std::optional<ScenarioTree>& warm_tree) {
  problem.validate();
  config.lql.validate();

  ScenarioTree tree;
  if (warm_tree && warm_tree->horizon == problem.dims().horizon &&
      warm_tree->n_players == problem.dims().n_players) {
    tree = *warm_tree;
    tree.nodes[0].state = x0;
    // Re-roll nominals from the new root state along the warm controls.
    for (size_t idx = 1; idx < tree.nodes.size(); ++idx) {
      TreeNode& child = tree.nodes[idx];
      child.state = problem.dynamics->step(tree.nodes[child.parent].state,
                                           child.control);
    }
  } else {
    tree = build_tree(problem, x0, config);
  }

  MMSolution sol;
  double prev_cost = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;

  for (int iter = 0; iter < config.lql.max_iterations && !converged; ++iter) {
    ++iterations;
    mm_backward_pass(&tree, problem, lambda);

    bool accepted = false;
    bool stationary = false;
    double eps = config.lql.initial_step;
    int numerical_failures = 0;

    for (int h = 0; h <= config.lql.linesearch_max_halvings; ++h, eps *= 0.5) {
      ScenarioTree candidate;
      try {
        candidate = mm_forward_pass(tree, eps, *problem.dynamics);
      } catch (const NumericalError&) {
        ++numerical_failures;
        continue;
      }

      double traj_change = 0.0;
      for (size_t k = 0; k < tree.nodes.size(); ++k)
        traj_change = std::max(traj_change, (candidate.nodes[k].state -
                                             tree.nodes[k].state)
                                                .cwiseAbs()
                                                .maxCoeff());

      const double cost = mm_social_cost(problem, tree, candidate, eps,
                                         config.lql.kl_in_social_cost);
      if (!std::isfinite(cost)) {
        ++numerical_failures;
        continue;
      }

      if (cost < prev_cost) {
        const bool close = traj_change < config.lql.trajectory_tolerance;
        const bool stalled =
            std::isfinite(prev_cost) &&
            std::abs(prev_cost - cost) <
                config.lql.cost_tolerance * std::max(1.0, std::abs(prev_cost));
        // Carry policies/references over so the accepted tree stays solvable.
        for (size_t k = 0; k < tree.nodes.size(); ++k) {
          candidate.nodes[k].K = tree.nodes[k].K;
          candidate.nodes[k].kappa = tree.nodes[k].kappa;
          candidate.nodes[k].cov = tree.nodes[k].cov;
          candidate.nodes[k].ref = tree.nodes[k].ref;
          candidate.nodes[k].Z = tree.nodes[k].Z;
          candidate.nodes[k].z = tree.nodes[k].z;
        }
        tree = std::move(candidate);
        prev_cost = cost;
        sol.social_cost_history.push_back(cost);
        accepted = true;
        converged = close || stalled;
        break;
      }
      if (traj_change < config.lql.trajectory_tolerance) {
        stationary = true;
        break;
      }
    }

    if (stationary) {
      converged = true;
    } else if (!accepted) {
      if (numerical_failures > config.lql.linesearch_max_halvings)
        throw LineSearchFailure("mm line search: rollout diverged on every branch");
      break;
    }
  }

  mm_backward_pass(&tree, problem, lambda);
  sol.node_policies = extract_policies(tree);
  sol.tree = std::move(tree);
  sol.iterations_used = iterations;
  sol.converged = converged;
  return sol;
}

JointControl sample_root_action(const GMMPolicy& policy, const Vec& x, Rng& rng) {
  policy.check_invariants();
  const int N = static_cast<int>(policy.components[0].weight.size());
  const Vec dx = x - policy.nominal_state;

  JointControl u;
  u.per_player.resize(N);
  for (int i = 0; i < N; ++i) {
    const double pick = rng.uniform();
    double acc = 0.0;
    size_t m = policy.components.size() - 1;
    for (size_t k = 0; k < policy.components.size(); ++k) {
      acc += policy.components[k].weight[i];
      if (pick <= acc) {
        m = k;
        break;
      }
    }
    const GMMPolicyComponent& comp = policy.components[m];
    Vec du = -(comp.K[i] * dx) - comp.kappa[i];
    if (comp.cov[i].cwiseAbs().maxCoeff() > 0.0) {
      const Eigen::LLT<Mat> llt(comp.cov[i]);
      if (llt.info() != Eigen::Success)
        throw NumericalError("sample_root_action: component covariance not SPD");
      du += llt.matrixL() * rng.gaussian_vec(static_cast<int>(du.size()));
    }
    u.per_player[i] = comp.nominal_control.per_player[i] + du;
  }
  return u;
}

JointControl mean_root_action(const GMMPolicy& policy, const Vec& x) {
  policy.check_invariants();
  const int N = static_cast<int>(policy.components[0].weight.size());
  const Vec dx = x - policy.nominal_state;

  JointControl u;
  u.per_player.resize(N);
  for (int i = 0; i < N; ++i) {
    size_t best = 0;
    for (size_t k = 1; k < policy.components.size(); ++k)
      if (policy.components[k].weight[i] > policy.components[best].weight[i]) best = k;
    const GMMPolicyComponent& comp = policy.components[best];
    u.per_player[i] =
        comp.nominal_control.per_player[i] - (comp.K[i] * dx) - comp.kappa[i];
  }
  return u;
}

}  // namespace klgame
