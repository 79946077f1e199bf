// Per-player stage costs: a small library of smooth driving cost terms plus
// quadraticization into the per-stage form
//   l(x+dx, u+du) ~= const + q'dx + 1/2 dx'Q dx
//                    + sum_j r_j'du_j + 1/2 du_j'R_j du_j
// with Q and the own-control block PSD-projected for the backward pass.
#pragma once

#include "klgame/types.hpp"

#include <memory>

namespace klgame {

// Quadratic model of one player's stage cost in deviation coordinates.
// R[j], r[j] refer to player j's control block.
struct QuadraticStageCost {
  Mat Q;
  Vec q;
  std::vector<Mat> R;
  std::vector<Vec> r;

  static QuadraticStageCost zero(const GameDims& dims);
  void check_invariants(const GameDims& dims, int own_player) const;
};

// Eigenvalue floor used when projecting quadraticized Hessians.
inline constexpr double kPsdFloor = 1e-6;

// Clamp eigenvalues of a symmetric matrix below `floor` up to `floor`.
// Returns the input (symmetrized) untouched when no clamping is needed.
Mat psd_project(const Mat& sym, double floor);

class CostTerm {
 public:
  virtual ~CostTerm() = default;

  virtual double evaluate(const Vec& x, const JointControl& u) const = 0;

  // Adds this term's gradient/Hessian at (x, u) into `out` (no projection).
  virtual void accumulate(const Vec& x, const JointControl& u,
                          QuadraticStageCost* out) const = 0;
};

// All cost terms for one player.
class PlayerCost {
 public:
  PlayerCost() = default;
  PlayerCost(GameDims dims, int player) : dims_(std::move(dims)), player_(player) {}

  void add_term(std::shared_ptr<const CostTerm> term) { terms_.push_back(std::move(term)); }

  double evaluate(const Vec& x, const JointControl& u) const;

  // Raw accumulation (exact local model, no projection); used by tests.
  QuadraticStageCost quadraticize_raw(const Vec& x, const JointControl& u) const;

  // Projected model satisfying the QuadraticStageCost invariants.
  QuadraticStageCost quadraticize(const Vec& x, const JointControl& u) const;

  int player() const { return player_; }
  const GameDims& dims() const { return dims_; }
  const std::vector<std::shared_ptr<const CostTerm>>& terms() const { return terms_; }

 private:
  GameDims dims_;
  int player_ = 0;
  std::vector<std::shared_ptr<const CostTerm>> terms_;
};

// ---- term library ----------------------------------------------------------

// 1/2 x'Qx + q'x + sum_j (1/2 u_j'R_j u_j + r_j'u_j); exact quadratic game cost.
class QuadraticGameCostTerm final : public CostTerm {
 public:
  QuadraticGameCostTerm(Mat Q, Vec q, std::vector<Mat> R, std::vector<Vec> r);

  double evaluate(const Vec& x, const JointControl& u) const override;
  void accumulate(const Vec& x, const JointControl& u,
                  QuadraticStageCost* out) const override;

 private:
  Mat Q_;
  Vec q_;
  std::vector<Mat> R_;
  std::vector<Vec> r_;
};

// 1/2 w (x[index] - target)^2.
class StateTrackTerm final : public CostTerm {
 public:
  StateTrackTerm(int index, double weight, double target)
      : index_(index), weight_(weight), target_(target) {}

  double evaluate(const Vec& x, const JointControl& u) const override;
  void accumulate(const Vec& x, const JointControl& u,
                  QuadraticStageCost* out) const override;

 private:
  int index_;
  double weight_, target_;
};

// 1/2 u_p' diag(w) u_p.
class ControlEffortTerm final : public CostTerm {
 public:
  ControlEffortTerm(int player, Vec diag_weights)
      : player_(player), w_(std::move(diag_weights)) {}

  double evaluate(const Vec& x, const JointControl& u) const override;
  void accumulate(const Vec& x, const JointControl& u,
                  QuadraticStageCost* out) const override;

 private:
  int player_;
  Vec w_;
};

// Soft-min over lane centers of the semiquadratic barrier
// max(0, |y - c_k| - margin)^2, blended with smoothing `s` so the composite
// stays C1 between lanes. Acts on the given player's lateral coordinate.
class LaneCenterTerm final : public CostTerm {
 public:
  LaneCenterTerm(int y_index, std::vector<double> centers, double margin,
                 double smoothing, double weight);

  double evaluate(const Vec& x, const JointControl& u) const override;
  void accumulate(const Vec& x, const JointControl& u,
                  QuadraticStageCost* out) const override;

  double value_1d(double y) const;
  double grad_1d(double y) const;
  double hess_1d(double y) const;

 private:
  int y_index_;
  std::vector<double> centers_;
  double margin_, smoothing_, weight_;
};

// w * max(0, |y| - (half_width - margin))^2: zero inside the road, quadratic
// outside.
class RoadBoundaryTerm final : public CostTerm {
 public:
  RoadBoundaryTerm(int y_index, double half_width, double margin, double weight)
      : y_index_(y_index), limit_(half_width - margin), weight_(weight) {}

  double evaluate(const Vec& x, const JointControl& u) const override;
  void accumulate(const Vec& x, const JointControl& u,
                  QuadraticStageCost* out) const override;

 private:
  int y_index_;
  double limit_, weight_;
};

// Smooth proximity penalty w * exp(-(d^2 - r^2)/s), s = r^2/4, on the planar
// distance d between two agents' positions.
class CollisionTerm final : public CostTerm {
 public:
  CollisionTerm(int agent_a_offset, int agent_b_offset, double weight, double radius)
      : oa_(agent_a_offset), ob_(agent_b_offset), weight_(weight), radius_(radius),
        scale_(radius * radius / 4.0) {}

  double evaluate(const Vec& x, const JointControl& u) const override;
  void accumulate(const Vec& x, const JointControl& u,
                  QuadraticStageCost* out) const override;

 private:
  int oa_, ob_;
  double weight_, radius_, scale_;
};

// w * exp(-(y_a - y_b)^2 / sigma^2): penalizes lateral-offset agreement, i.e.
// rewards taking opposite lanes.
class CoordinationTerm final : public CostTerm {
 public:
  CoordinationTerm(int ya_index, int yb_index, double weight, double sigma)
      : ya_(ya_index), yb_(yb_index), weight_(weight), sigma2_(sigma * sigma) {}

  double evaluate(const Vec& x, const JointControl& u) const override;
  void accumulate(const Vec& x, const JointControl& u,
                  QuadraticStageCost* out) const override;

 private:
  int ya_, yb_;
  double weight_, sigma2_;
};

// ---- tollbooth cost --------------------------------------------------------

// Weights of the two-lane tollbooth coordination cost. All weights >= 0.
struct TollboothCostConfig {
  std::vector<double> lane_centers = {1.85, -1.85};  // lane 1 (upper), lane 2
  double lane_weight = 4.0;
  double lane_margin = 0.3;
  double lane_smoothing = 0.1;
  double coordination_weight = 8.0;
  double coordination_sigma = 1.85;
  double collision_weight = 50.0;
  double collision_radius = 2.0;
  double boundary_weight = 60.0;
  double road_half_width = 3.7;
  double boundary_margin = 0.6;
  double control_weight_accel = 1.0;
  double control_weight_yaw = 4.0;
  double speed_weight = 1.0;
  double target_speed = 10.0;
  double heading_weight = 0.5;
  int preferred_lane = -1;  // index into lane_centers, or -1 for none
  double preference_weight = 0.0;

  void validate() const;
};

// Builds the per-player tollbooth cost on a joint kinematic-bicycle state.
PlayerCost make_tollbooth_cost(const TollboothCostConfig& cfg, int player,
                               const GameDims& dims);

}  // namespace klgame
