// Receding-horizon simulation harness and metrics for the tollbooth
// benchmark: per-trial execution with warm-started replanning, seeded Monte
// Carlo batches, and the coordination/safety/progress/cost metrics.
#pragma once

#include "klgame/tollbooth.hpp"

#include <cstdint>
#include <iosfwd>

namespace klgame {

enum class Method { ILQGames, MaxEnt, KLGame, MMKLGame };

Method method_from_string(const std::string& name);
std::string method_name(Method method);

struct ScenarioSpec {
  int n_players = 2;
  double dt = 0.1;
  std::vector<Vec> initial_states;  // per player: [pos_x, pos_y, heading, speed]

  std::vector<TollboothCostConfig> costs;  // per player
  std::vector<double> lambda;              // per player
  std::vector<ReferenceSpec> refs;         // per player

  int planning_horizon = 20;
  int sim_length = 45;
  int replan_interval = 1;
  std::uint64_t seed = 0;
  bool sampled_execution = true;

  LQLConfig lql;
  int mm_branching = 2;
  std::vector<int> mm_branch_schedule = {0};

  void validate() const;
  GameDims dims(int horizon) const;
  Vec joint_initial_state() const;
};

struct TrialResult {
  Trajectory executed;
  std::vector<std::vector<double>> stage_costs;  // [t][player]
  bool coordinated = false;
  bool safe = false;
  double progress = 0.0;
  double time_avg_cost = 0.0;
  bool failed = false;
  std::string failure;

  std::vector<double> per_step_total_cost() const;
};

// ---- metrics ----------------------------------------------------------------

// Terminal lateral positions in distinct lane bands (nearest lane center).
bool metric_coordinated(const Trajectory& traj, const std::vector<double>& lane_centers);
// No inter-agent distance below the collision radius and every lateral
// position within the road half-width, at every step.
bool metric_safe(const Trajectory& traj, double collision_radius, double road_half_width);
// Player 1 longitudinal displacement.
double metric_progress(const Trajectory& traj);
// Mean over steps of the summed realized stage costs.
double metric_cost(const std::vector<std::vector<double>>& stage_costs);

// ---- trials -----------------------------------------------------------------

// Builds the game instance for a single receding-horizon solve from `state`.
GameProblem build_tollbooth_problem(const ScenarioSpec& spec, Method method,
                                    const Vec& state, int horizon);

TrialResult run_trial(const ScenarioSpec& spec, Method method, std::uint64_t seed);

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;
};

struct BatchResult {
  Method method = Method::ILQGames;
  int n_trials = 0;
  int n_failed = 0;
  MetricStats coordination, safety, progress, cost;
  std::vector<TrialResult> trials;
};

// Per-trial seeds derive deterministically from `seed`; trials run in
// parallel up to the KLGAME_THREADS cap, aggregation is index-ordered.
BatchResult run_batch(const ScenarioSpec& spec, Method method, int n_trials,
                      std::uint64_t seed);

// ---- persistence --------------------------------------------------------------

// CSV columns: t, then per-agent x, y, theta, v, then per-agent controls.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj, int n_players);

std::string trial_to_json(const TrialResult& trial);
std::string batch_to_json(const BatchResult& batch);

// Default two-player tollbooth scenario (geometry and weights reproduce the
// coordinate-or-yield structure; see README).
ScenarioSpec default_tollbooth_spec();

}  // namespace klgame
