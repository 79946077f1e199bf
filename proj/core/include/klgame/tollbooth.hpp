// Tollbooth coordination scenario: two-lane road geometry, per-player costs,
// and the constant-turn-rate lane guidance used as the reference policy.
#pragma once

#include "klgame/ilq.hpp"
#include "klgame/scenario.hpp"

#include <string>

namespace klgame {

// Guidance-law parameters for the lane-change reference. The generated
// reference is a FeedbackGaussianRef with zero gains: a fixed
// yaw-rate/acceleration profile toward the target lane, recomputed from the
// player's state at plan time.
struct LaneGuidanceConfig {
  int target_lane = 1;        // index into the cost's lane_centers
  double accel = 0.0;         // constant feedforward acceleration
  double lateral_gain = 0.4;  // desired heading per meter of lateral error
  double heading_gain = 3.0;  // yaw-rate per radian of heading error
  double max_heading = 0.3;   // rad
  double max_yaw_rate = 0.5;  // rad/s
  double cov_accel = 0.05 * 0.05;
  double cov_yaw = 0.02 * 0.02;
};

// Per-player reference selection for trial construction.
struct ReferenceSpec {
  // "none" | "maxent" | "gaussian" | "lane_guidance" | "gmm_lanes"
  std::string type = "none";

  // type == "gaussian"
  Vec gaussian_mean;
  Vec gaussian_cov_diag;

  // type == "lane_guidance"
  LaneGuidanceConfig guidance;

  // type == "gmm_lanes"
  std::vector<LaneGuidanceConfig> modes;
  std::vector<double> mode_weights;

  void validate() const;
};

// Builds the guidance reference for one bicycle agent from its current
// sub-state by simulating the pursuit law over the horizon. Gains are zero;
// kappa carries the commanded profile (mean = -kappa). `state_dim` is the
// joint state dimension the zero gain matrices must span.
FeedbackGaussianRef make_lane_guidance_ref(const LaneGuidanceConfig& cfg,
                                           double lane_center_y, const Vec& agent_state,
                                           int horizon, double dt, int state_dim);

}  // namespace klgame
