#include "klgame/sim.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

namespace klgame {

using nlohmann::json;

Method method_from_string(const std::string& name) {
  if (name == "ilqgames") return Method::ILQGames;
  if (name == "maxent") return Method::MaxEnt;
  if (name == "klgame") return Method::KLGame;
  if (name == "mm-klgame") return Method::MMKLGame;
  throw ConfigError("method: expected one of ilqgames|maxent|klgame|mm-klgame, got '" +
                    name + "'");
}

std::string method_name(Method method) {
  switch (method) {
    case Method::ILQGames: return "ilqgames";
    case Method::MaxEnt: return "maxent";
    case Method::KLGame: return "klgame";
    case Method::MMKLGame: return "mm-klgame";
  }
  return "unknown";
}

void ScenarioSpec::validate() const {
  if (n_players < 1) throw ConfigError("scenario: n_players must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("scenario: dt must be > 0");
  if (static_cast<int>(initial_states.size()) != n_players)
    throw ConfigError("scenario: need one initial state per player");
  for (const auto& s : initial_states)
    if (s.size() != 4) throw ConfigError("scenario: initial states must be 4-D");
  if (static_cast<int>(costs.size()) != n_players)
    throw ConfigError("scenario: need one cost config per player");
  for (const auto& c : costs) c.validate();
  if (static_cast<int>(lambda.size()) != n_players)
    throw ConfigError("scenario: need one lambda per player");
  for (double l : lambda)
    if (l < 0.0) throw ConfigError("scenario: lambda must be >= 0");
  if (static_cast<int>(refs.size()) != n_players)
    throw ConfigError("scenario: need one reference spec per player");
  for (const auto& r : refs) r.validate();
  if (replan_interval < 1) throw ConfigError("scenario: replan_interval must be >= 1");
  if (planning_horizon < replan_interval)
    throw ConfigError("scenario: planning_horizon must be >= replan_interval");
  if (sim_length < 1) throw ConfigError("scenario: sim_length must be >= 1");
  lql.validate();
  if (mm_branching < 1) throw ConfigError("scenario: mm_branching must be >= 1");
}

GameDims ScenarioSpec::dims(int horizon) const {
  GameDims d;
  d.n_players = n_players;
  d.state_dim = 4 * n_players;
  d.control_dims.assign(n_players, 2);
  d.horizon = horizon;
  d.dt = dt;
  return d;
}

Vec ScenarioSpec::joint_initial_state() const {
  Vec x0(4 * n_players);
  for (int i = 0; i < n_players; ++i) x0.segment(4 * i, 4) = initial_states[i];
  return x0;
}

std::vector<double> TrialResult::per_step_total_cost() const {
  std::vector<double> out;
  out.reserve(stage_costs.size());
  for (const auto& row : stage_costs) {
    double sum = 0.0;
    for (double c : row) sum += c;
    out.push_back(sum);
  }
  return out;
}

// ---- metrics ----------------------------------------------------------------

namespace {
int nearest_lane(double y, const std::vector<double>& centers) {
  int best = 0;
  for (size_t k = 1; k < centers.size(); ++k)
    if (std::abs(y - centers[k]) < std::abs(y - centers[best]))
      best = static_cast<int>(k);
  return best;
}
}  // namespace

bool metric_coordinated(const Trajectory& traj, const std::vector<double>& lane_centers) {
  const Vec& xT = traj.states.back();
  const int n_players = static_cast<int>(xT.size()) / 4;
  std::vector<int> lanes(n_players);
  for (int i = 0; i < n_players; ++i) lanes[i] = nearest_lane(xT(4 * i + 1), lane_centers);
  for (int i = 0; i < n_players; ++i)
    for (int j = i + 1; j < n_players; ++j)
      if (lanes[i] == lanes[j]) return false;
  return true;
}

bool metric_safe(const Trajectory& traj, double collision_radius,
                 double road_half_width) {
  for (const Vec& x : traj.states) {
    const int n_players = static_cast<int>(x.size()) / 4;
    for (int i = 0; i < n_players; ++i) {
      if (std::abs(x(4 * i + 1)) > road_half_width) return false;
      for (int j = i + 1; j < n_players; ++j) {
        const double dx = x(4 * i) - x(4 * j);
        const double dy = x(4 * i + 1) - x(4 * j + 1);
        if (std::hypot(dx, dy) <= collision_radius) return false;
      }
    }
  }
  return true;
}

double metric_progress(const Trajectory& traj) {
  return traj.states.back()(0) - traj.states.front()(0);
}

double metric_cost(const std::vector<std::vector<double>>& stage_costs) {
  if (stage_costs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& row : stage_costs)
    for (double c : row) total += c;
  return total / static_cast<double>(stage_costs.size());
}

// ---- problem construction -----------------------------------------------------

namespace {

ReferencePolicy build_reference(const ScenarioSpec& spec, Method method, int player,
                                const Vec& state, int horizon) {
  const int state_dim = 4 * spec.n_players;
  if (method == Method::ILQGames) return std::monostate{};
  if (method == Method::MaxEnt) {
    // Uninformative Gaussian reference: the KL-LQG solution approaches the
    // maximum-entropy equilibrium as the reference covariance grows.
    return GaussianRef::constant(Vec::Zero(2), 1e6 * Mat::Identity(2, 2), horizon);
  }

  const ReferenceSpec& ref = spec.refs[player];
  const Vec agent = state.segment(4 * player, 4);
  if (ref.type == "none") return std::monostate{};
  if (ref.type == "maxent")
    return GaussianRef::constant(Vec::Zero(2), 1e6 * Mat::Identity(2, 2), horizon);
  if (ref.type == "gaussian") {
    return GaussianRef::constant(ref.gaussian_mean,
                                 Mat(ref.gaussian_cov_diag.asDiagonal()), horizon);
  }
  if (ref.type == "lane_guidance") {
    const double center = spec.costs[player].lane_centers[ref.guidance.target_lane];
    return make_lane_guidance_ref(ref.guidance, center, agent, horizon, spec.dt,
                                  state_dim);
  }
  if (ref.type == "gmm_lanes") {
    GMMRef gmm;
    for (const auto& mode : ref.modes) {
      const double center = spec.costs[player].lane_centers[mode.target_lane];
      gmm.modes.emplace_back(
          make_lane_guidance_ref(mode, center, agent, horizon, spec.dt, state_dim));
    }
    gmm.weights.assign(horizon, GMMRef::normalized(ref.mode_weights));
    return gmm;
  }
  throw ConfigError("reference: unknown type '" + ref.type + "'");
}

}  // namespace

GameProblem build_tollbooth_problem(const ScenarioSpec& spec, Method method,
                                    const Vec& state, int horizon) {
  GameProblem problem;
  problem.dynamics = std::make_shared<KinematicBicycle>(spec.n_players, horizon, spec.dt);
  const GameDims& dims = problem.dynamics->dims();

  problem.costs.reserve(spec.n_players);
  problem.refs.reserve(spec.n_players);
  problem.lambda.lambda.resize(spec.n_players);
  for (int i = 0; i < spec.n_players; ++i) {
    problem.costs.push_back(make_tollbooth_cost(spec.costs[i], i, dims));
    problem.refs.push_back(build_reference(spec, method, i, state, horizon));

    double lam = spec.lambda[i];
    if (method == Method::ILQGames) lam = 0.0;
    // A positive weight without any reference carries no KL term.
    if (method == Method::KLGame && spec.refs[i].type == "none") lam = 0.0;
    problem.lambda.lambda[i] = lam;
  }
  return problem;
}

// ---- trial execution -----------------------------------------------------------

namespace {

JointControl sample_unimodal_action(const LQLSolution& sol, int t, const Vec& state,
                                    bool sampled, Rng& rng) {
  const int N = static_cast<int>(sol.policies.size());
  const Vec dx = state - sol.nominal.states[t];
  JointControl u;
  u.per_player.resize(N);
  for (int i = 0; i < N; ++i) {
    Vec du = -(sol.policies[i].K[t] * dx) - sol.policies[i].kappa[t];
    const Mat& cov = sol.policies[i].cov[t];
    if (sampled && cov.size() > 0 && cov.cwiseAbs().maxCoeff() > 0.0) {
      const Eigen::LLT<Mat> llt(cov);
      if (llt.info() != Eigen::Success)
        throw NumericalError("run_trial: policy covariance not SPD");
      du += llt.matrixL() * rng.gaussian_vec(static_cast<int>(du.size()));
    }
    u.per_player[i] = sol.nominal.controls[t].per_player[i] + du;
  }
  return u;
}

}  // namespace

TrialResult run_trial(const ScenarioSpec& spec, Method method, std::uint64_t seed) {
  spec.validate();
  TrialResult result;
  Rng rng(seed);

  KinematicBicycle exec_dynamics(spec.n_players, spec.sim_length, spec.dt);
  Vec state = spec.joint_initial_state();
  result.executed.states.push_back(state);

  // Realized costs are evaluated against each player's own stage cost.
  const GameDims exec_dims = spec.dims(spec.sim_length);
  std::vector<PlayerCost> realized_costs;
  for (int i = 0; i < spec.n_players; ++i)
    realized_costs.push_back(make_tollbooth_cost(spec.costs[i], i, exec_dims));

  std::vector<JointControl> warm_controls;
  std::optional<ScenarioTree> warm_tree;

  try {
    int step = 0;
    while (step < spec.sim_length) {
      const int horizon = spec.planning_horizon;
      GameProblem problem = build_tollbooth_problem(spec, method, state, horizon);

      const int exec_steps = std::min(spec.replan_interval, spec.sim_length - step);

      if (method == Method::MMKLGame) {
        MMConfig mm;
        mm.branching = spec.mm_branching;
        mm.branch_schedule = spec.mm_branch_schedule;
        mm.lql = spec.lql;
        MMSolution sol = solve_mm(problem, state, problem.lambda, mm, warm_tree);

        int node = 0;  // root
        for (int k = 0; k < exec_steps; ++k) {
          const GMMPolicy& pol = sol.node_policies[node];
          const JointControl u = spec.sampled_execution
                                     ? sample_root_action(pol, state, rng)
                                     : mean_root_action(pol, state);
          std::vector<double> row(spec.n_players);
          for (int i = 0; i < spec.n_players; ++i)
            row[i] = realized_costs[i].evaluate(state, u);
          result.stage_costs.push_back(std::move(row));

          state = exec_dynamics.step(state, u);
          result.executed.controls.push_back(u);
          result.executed.states.push_back(state);
          ++step;

          // Descend toward the top-weight child for intra-interval steps.
          const auto& children = sol.tree.nodes[node].children;
          int next = children.empty() ? node : children[0];
          for (int c : children) {
            const double wa = std::accumulate(sol.tree.nodes[c].weight.begin(),
                                              sol.tree.nodes[c].weight.end(), 0.0);
            const double wb = std::accumulate(sol.tree.nodes[next].weight.begin(),
                                              sol.tree.nodes[next].weight.end(), 0.0);
            if (wa > wb) next = c;
          }
          node = next;
          if (sol.tree.nodes[node].children.empty()) break;
        }
        warm_tree = std::move(sol.tree);
      } else {
        LQLSolution sol =
            solve(problem, state, warm_controls, problem.lambda, spec.lql);

        for (int k = 0; k < exec_steps; ++k) {
          const JointControl u =
              sample_unimodal_action(sol, k, state, spec.sampled_execution, rng);
          std::vector<double> row(spec.n_players);
          for (int i = 0; i < spec.n_players; ++i)
            row[i] = realized_costs[i].evaluate(state, u);
          result.stage_costs.push_back(std::move(row));

          state = exec_dynamics.step(state, u);
          result.executed.controls.push_back(u);
          result.executed.states.push_back(state);
          ++step;
        }

        // Warm start: shift the accepted nominal controls.
        warm_controls.assign(sol.nominal.controls.begin() + exec_steps,
                             sol.nominal.controls.end());
        while (static_cast<int>(warm_controls.size()) < spec.planning_horizon)
          warm_controls.push_back(warm_controls.empty() ? JointControl(spec.dims(1))
                                                        : warm_controls.back());
      }
    }
  } catch (const std::exception& e) {
    result.failed = true;
    result.failure = e.what();
    return result;
  }

  result.coordinated = metric_coordinated(result.executed, spec.costs[0].lane_centers);
  result.safe = metric_safe(result.executed, spec.costs[0].collision_radius,
                            spec.costs[0].road_half_width);
  result.progress = metric_progress(result.executed);
  result.time_avg_cost = metric_cost(result.stage_costs);
  return result;
}

// ---- batches -------------------------------------------------------------------

namespace {

int batch_thread_cap() {
  if (const char* env = std::getenv("KLGAME_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

MetricStats stats_of(const std::vector<double>& values) {
  MetricStats s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / values.size();
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = values.size() > 1 ? std::sqrt(var / (values.size() - 1)) : 0.0;
  return s;
}

}  // namespace

BatchResult run_batch(const ScenarioSpec& spec, Method method, int n_trials,
                      std::uint64_t seed) {
  if (n_trials < 1) throw ConfigError("run_batch: n_trials must be >= 1");
  spec.validate();

  BatchResult batch;
  batch.method = method;
  batch.n_trials = n_trials;
  batch.trials.resize(n_trials);

  const int threads = std::min(batch_thread_cap(), n_trials);
  std::atomic<int> next_index{0};
  auto worker = [&]() {
    for (;;) {
      const int k = next_index.fetch_add(1);
      if (k >= n_trials) return;
      batch.trials[k] = run_trial(spec, method, split_seed(seed, k));
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<double> cr, sr, prog, cost;
  for (const TrialResult& trial : batch.trials) {
    if (trial.failed) {
      ++batch.n_failed;
      continue;
    }
    cr.push_back(trial.coordinated ? 1.0 : 0.0);
    sr.push_back(trial.safe ? 1.0 : 0.0);
    prog.push_back(trial.progress);
    cost.push_back(trial.time_avg_cost);
  }
  batch.coordination = stats_of(cr);
  batch.safety = stats_of(sr);
  batch.progress = stats_of(prog);
  batch.cost = stats_of(cost);
  return batch;
}

// ---- persistence ----------------------------------------------------------------

void write_trajectory_csv(std::ostream& os, const Trajectory& traj, int n_players) {
  os << "t";
  for (int i = 0; i < n_players; ++i)
    os << ",x" << i << ",y" << i << ",theta" << i << ",v" << i;
  for (int i = 0; i < n_players; ++i) os << ",accel" << i << ",yaw_rate" << i;
  os << "\n";

  os.precision(17);
  for (size_t t = 0; t < traj.states.size(); ++t) {
    os << t;
    const Vec& x = traj.states[t];
    for (int i = 0; i < n_players; ++i)
      os << "," << x(4 * i) << "," << x(4 * i + 1) << "," << x(4 * i + 2) << ","
         << x(4 * i + 3);
    if (t < traj.controls.size()) {
      for (int i = 0; i < n_players; ++i)
        os << "," << traj.controls[t].per_player[i](0) << ","
           << traj.controls[t].per_player[i](1);
    } else {
      for (int i = 0; i < n_players; ++i) os << ",,";
    }
    os << "\n";
  }
}

namespace {

json trial_json(const TrialResult& trial) {
  json j;
  j["failed"] = trial.failed;
  if (trial.failed) {
    j["failure"] = trial.failure;
    return j;
  }
  j["coordinated"] = trial.coordinated;
  j["safe"] = trial.safe;
  j["progress_m"] = trial.progress;
  j["time_avg_cost"] = trial.time_avg_cost;
  j["per_step_total_cost"] = trial.per_step_total_cost();

  json states = json::array();
  for (const Vec& x : trial.executed.states) {
    json row = json::array();
    for (int k = 0; k < x.size(); ++k) row.push_back(x(k));
    states.push_back(std::move(row));
  }
  j["states"] = std::move(states);
  return j;
}

json stats_json(const MetricStats& s) {
  return json{{"mean", s.mean}, {"std", s.stddev}};
}

}  // namespace

std::string trial_to_json(const TrialResult& trial) { return trial_json(trial).dump(2); }

std::string batch_to_json(const BatchResult& batch) {
  json j;
  j["method"] = method_name(batch.method);
  j["n_trials"] = batch.n_trials;
  j["n_failed"] = batch.n_failed;
  j["coordination_rate"] = stats_json(batch.coordination);
  j["safety_rate"] = stats_json(batch.safety);
  j["progress_m"] = stats_json(batch.progress);
  j["time_avg_cost"] = stats_json(batch.cost);
  json trials = json::array();
  for (const TrialResult& trial : batch.trials) trials.push_back(trial_json(trial));
  j["trials"] = std::move(trials);
  return j.dump(2);
}

ScenarioSpec default_tollbooth_spec() {
  ScenarioSpec spec;
  spec.n_players = 2;
  spec.dt = 0.1;

  // Both players start in Lane 1 (upper lane) at speed, 8 m apart.
  Vec p1(4), p2(4);
  p1 << 0.0, 1.85, 0.0, 10.0;
  p2 << 8.0, 1.85, 0.0, 10.0;
  spec.initial_states = {p1, p2};

  TollboothCostConfig base;
  spec.costs = {base, base};
  // Player 2 strongly prefers Lane 1.
  spec.costs[1].preferred_lane = 0;
  spec.costs[1].preference_weight = 6.0;

  spec.lambda = {8.0, 8.0};

  ReferenceSpec r1;
  r1.type = "lane_guidance";
  r1.guidance.target_lane = 1;  // merge into Lane 2
  ReferenceSpec r2;
  r2.type = "lane_guidance";
  r2.guidance.target_lane = 0;  // hold Lane 1
  spec.refs = {r1, r2};

  spec.planning_horizon = 20;
  spec.sim_length = 45;
  spec.replan_interval = 1;
  spec.sampled_execution = true;
  spec.lql.max_iterations = 40;
  return spec;
}

}  // namespace klgame
