// Multi-modal KLGame over a scenario tree: the root carries the initial
// state and descends into one chain per selected reference mode. Backward
// value backups run over the tree with weighted children; the per-node output
// policy is a Gaussian mixture with one component per child, each solved
// against that child's value parameters.
//
// Edge data (nominal control, mode weight, policy component, fitted
// reference) lives on the child node; the root has no incoming edge.
#pragma once

#include "klgame/ilq.hpp"

#include <optional>

namespace klgame {

struct TreeNode {
  int parent = -1;
  std::vector<int> children;
  int timestep = 0;
  int mode_id = 0;

  Vec state;             // nominal state at this node's timestep
  JointControl control;  // nominal control on the edge from the parent

  std::vector<double> weight;  // per player, edge weight (1.0 on chain edges)

  // Per-player policy component on the incoming edge (deviation coords).
  std::vector<Mat> K;
  std::vector<Vec> kappa;
  std::vector<Mat> cov;
  std::vector<StageRef> ref;  // fitted per-player reference on the edge

  // Per-player value parameters at this node.
  std::vector<Mat> Z;
  std::vector<Vec> z;
};

struct ScenarioTree {
  std::vector<TreeNode> nodes;  // index 0 is the root; sorted by timestep
  int horizon = 0;
  int n_players = 0;
  std::vector<int> selected_modes;

  std::vector<int> leaves() const;
  // Root-to-leaf node index path.
  std::vector<int> branch(int leaf) const;
  void check_invariants() const;
};

struct MMConfig {
  int branching = 1;
  std::vector<int> branch_schedule = {0};  // timesteps at which nodes branch
  std::optional<std::vector<int>> forced_modes;  // overrides top-weight selection
  LQLConfig lql;
};

// One component of a node's mixture policy (per child mode).
struct GMMPolicyComponent {
  int mode_id = 0;
  std::vector<double> weight;  // per player
  JointControl nominal_control;
  std::vector<Mat> K;
  std::vector<Vec> kappa;
  std::vector<Mat> cov;
};

struct GMMPolicy {
  Vec nominal_state;
  std::vector<GMMPolicyComponent> components;

  void check_invariants() const;
};

// Builds the tree: the top `branching` modes by (player-averaged) weight are
// selected at each scheduled branch timestep, weights renormalized over the
// selection; chains elsewhere. Initial nominals roll out each branch's mode
// mean through the dynamics.
ScenarioTree build_tree(const GameProblem& problem, const Vec& x0,
                        const MMConfig& config);

// Tree-structured backward pass: leaves carry Z = z = 0, each edge is solved
// against its child's value parameters, and a node's own value parameters use
// the weight-averaged children values.
void mm_backward_pass(ScenarioTree* tree, const GameProblem& problem,
                      const KLWeights& lambda);

// Tree forward pass with step scaling; the root state stays fixed. Returns
// the updated tree, leaving the input untouched.
ScenarioTree mm_forward_pass(const ScenarioTree& tree, double step,
                             const Dynamics& dynamics);

// Weight-averaged social cost over branches of `rollout`, with policies and
// fitted references taken from `base` (the tree the backward pass ran on).
double mm_social_cost(const GameProblem& problem, const ScenarioTree& base,
                      const ScenarioTree& rollout, double step, bool include_kl);

struct MMSolution {
  ScenarioTree tree;
  std::vector<GMMPolicy> node_policies;  // per node index; empty for leaves
  int iterations_used = 0;
  bool converged = false;
  std::vector<double> social_cost_history;
};

// Algorithm: iterate mm_backward_pass and line-searched mm_forward_pass until
// the weight-averaged social cost converges. `warm_tree` reuses a previous
// tree's nominals (receding-horizon warm start).
MMSolution solve_mm(const GameProblem& problem, const Vec& x0,
                    const KLWeights& lambda, const MMConfig& config,
                    const std::optional<ScenarioTree>& warm_tree = std::nullopt);

// Samples one joint control from a node's mixture policy at state x: each
// player draws its mode by weight, then the Gaussian component, and the
// result is that mode's nominal control plus the sampled deviation.
JointControl sample_root_action(const GMMPolicy& policy, const Vec& x, Rng& rng);

// Deterministic variant: every player takes its top-weight mode's mean.
JointControl mean_root_action(const GMMPolicy& policy, const Vec& x);

}  // namespace klgame
