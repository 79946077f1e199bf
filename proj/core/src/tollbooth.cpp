#include "klgame/tollbooth.hpp"

#include <cmath>

namespace klgame {

void ReferenceSpec::validate() const {
  if (type != "none" && type != "maxent" && type != "gaussian" &&
      type != "lane_guidance" && type != "gmm_lanes")
    throw ConfigError("reference: unknown type '" + type + "'");
  if (type == "gaussian") {
    if (gaussian_mean.size() == 0 || gaussian_cov_diag.size() != gaussian_mean.size())
      throw ConfigError("reference: gaussian mean/cov_diag must match");
    for (int k = 0; k < gaussian_cov_diag.size(); ++k)
      if (!(gaussian_cov_diag(k) > 0.0))
        throw ConfigError("reference: gaussian cov_diag entries must be > 0");
  }
  if (type == "gmm_lanes") {
    if (modes.empty()) throw ConfigError("reference: gmm_lanes needs modes");
    if (mode_weights.size() != modes.size())
      throw ConfigError("reference: gmm_lanes weights must match modes");
    double sum = 0.0;
    for (double w : mode_weights) {
      if (w < 0.0) throw ConfigError("reference: negative mode weight");
      sum += w;
    }
    if (!(sum > 0.0)) throw ConfigError("reference: zero total mode weight");
  }
}

FeedbackGaussianRef make_lane_guidance_ref(const LaneGuidanceConfig& cfg,
                                           double lane_center_y, const Vec& agent_state,
                                           int horizon, double dt, int state_dim) {
  if (agent_state.size() != 4)
    throw DimensionError("make_lane_guidance_ref: agent sub-state must be 4-D");

  FeedbackGaussianRef ref;
  ref.K.assign(horizon, Mat::Zero(2, state_dim));
  ref.kappa.assign(horizon, Vec());
  Mat cov = Mat::Zero(2, 2);
  cov(0, 0) = cfg.cov_accel;
  cov(1, 1) = cfg.cov_yaw;
  ref.cov.assign(horizon, cov);

  auto clamp = [](double v, double lim) { return std::max(-lim, std::min(lim, v)); };

  double y = agent_state(1), th = agent_state(2), v = agent_state(3);
  for (int t = 0; t < horizon; ++t) {
    const double heading_des = clamp(cfg.lateral_gain * (lane_center_y - y),
                                     cfg.max_heading);
    const double yaw = clamp(cfg.heading_gain * (heading_des - th), cfg.max_yaw_rate);
    const double accel = cfg.accel;

    Vec u(2);
    u << accel, yaw;
    ref.kappa[t] = -u;  // mean = -kappa with zero gains

    // Euler-predict the agent forward under the commanded profile.
    y += dt * v * std::sin(th);
    th += dt * yaw;
    v += dt * accel;
  }
  return ref;
}

}  // namespace klgame
