// Joint dynamics models: exact nonlinear stepping plus linearization into the
// affine stage form  x' = A x + sum_i B^i u^i + drift  consumed by the
// backward pass. Built-in models provide analytic Jacobians; the base class
// falls back to central finite differences.
#pragma once

#include "klgame/types.hpp"

#include <memory>

namespace klgame {

// Per-timestep linearized dynamics. `drift` is the affine residual of the
// linearization, chosen so that stepping the linear model at the nominal
// point reproduces the nonlinear step exactly.
struct LinearGameStage {
  Mat A;
  std::vector<Mat> B;
  Vec drift;
  Mat noise_cov;

  void check_invariants(const GameDims& dims) const;
};

class Dynamics {
 public:
  explicit Dynamics(GameDims dims) : dims_(std::move(dims)) { dims_.validate(); }
  virtual ~Dynamics() = default;

  const GameDims& dims() const { return dims_; }

  virtual Vec step(const Vec& x, const JointControl& u) const = 0;

  // A = df/dx, B^i = df/du^i at (x, u); drift = f(x,u) - A x - sum_i B^i u^i.
  virtual LinearGameStage linearize(const Vec& x, const JointControl& u) const;

 protected:
  // Central finite differences, h = 1e-5 * max(1, |entry|).
  LinearGameStage linearize_fd(const Vec& x, const JointControl& u) const;

  GameDims dims_;
};

// x' = x + dt * u with the stacked joint control; state_dim must equal the
// total control dimension.
class SingleIntegrator final : public Dynamics {
 public:
  explicit SingleIntegrator(GameDims dims);

  Vec step(const Vec& x, const JointControl& u) const override;
  LinearGameStage linearize(const Vec& x, const JointControl& u) const override;
};

// Generic linear system x' = A x + sum_i B^i u^i + c, mostly for tests.
class LinearDynamics final : public Dynamics {
 public:
  LinearDynamics(GameDims dims, Mat A, std::vector<Mat> B, Vec c);

  Vec step(const Vec& x, const JointControl& u) const override;
  LinearGameStage linearize(const Vec& x, const JointControl& u) const override;

  const Mat& A() const { return A_; }
  const std::vector<Mat>& B() const { return B_; }

 private:
  Mat A_;
  std::vector<Mat> B_;
  Vec c_;
};

// 4D kinematic bicycle per agent: sub-state [pos_x, pos_y, heading, speed],
// controls [accel, yaw_rate]. Euler update:
//   x' = x + dt v cos(th),  y' = y + dt v sin(th),
//   th' = th + dt w,        v' = v + dt a.
// Heading is not wrapped; costs consume it through trig terms.
class KinematicBicycle final : public Dynamics {
 public:
  KinematicBicycle(int n_players, int horizon, double dt);

  Vec step(const Vec& x, const JointControl& u) const override;
  LinearGameStage linearize(const Vec& x, const JointControl& u) const override;

  static constexpr int kStatePerAgent = 4;
  static constexpr int kControlPerAgent = 2;
};

// Rolls controls out through the dynamics: states[0] = x0,
// states[t+1] = dynamics.step(states[t], controls[t]).
Trajectory make_trajectory(const GameDims& dims, const Vec& x0,
                           const std::vector<JointControl>& controls,
                           const Dynamics& dynamics);

}  // namespace klgame
