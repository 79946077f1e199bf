#include "klgame/dynamics.hpp"

#include <cmath>

namespace klgame {

void LinearGameStage::check_invariants(const GameDims& dims) const {
  if (A.rows() != dims.state_dim || A.cols() != dims.state_dim)
    throw DimensionError("LinearGameStage: A must be n x n");
  if (static_cast<int>(B.size()) != dims.n_players)
    throw DimensionError("LinearGameStage: need one B per player");
  for (int i = 0; i < dims.n_players; ++i)
    if (B[i].rows() != dims.state_dim || B[i].cols() != dims.control_dims[i])
      throw DimensionError("LinearGameStage: B[i] must be n x m_i");
  if (drift.size() != dims.state_dim)
    throw DimensionError("LinearGameStage: drift must be n-vector");
  if (!A.allFinite() || !drift.allFinite())
    throw NumericalError("LinearGameStage: non-finite entries");
  if (noise_cov.size() > 0) {
    if (noise_cov.rows() != dims.state_dim || noise_cov.cols() != dims.state_dim)
      throw DimensionError("LinearGameStage: noise_cov must be n x n");
    if ((noise_cov - noise_cov.transpose()).cwiseAbs().maxCoeff() > 1e-10)
      throw NumericalError("LinearGameStage: noise_cov must be symmetric");
  }
}

LinearGameStage Dynamics::linearize(const Vec& x, const JointControl& u) const {
  return linearize_fd(x, u);
}

LinearGameStage Dynamics::linearize_fd(const Vec& x, const JointControl& u) const {
  check_finite(x, "linearize");
  const int n = dims_.state_dim;

  LinearGameStage stage;
  stage.A.resize(n, n);
  stage.noise_cov = Mat::Zero(n, n);

  for (int k = 0; k < n; ++k) {
    const double h = 1e-5 * std::max(1.0, std::abs(x(k)));
    Vec xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    stage.A.col(k) = (step(xp, u) - step(xm, u)) / (2.0 * h);
  }

  stage.B.resize(dims_.n_players);
  for (int i = 0; i < dims_.n_players; ++i) {
    const int mi = dims_.control_dims[i];
    stage.B[i].resize(n, mi);
    for (int k = 0; k < mi; ++k) {
      const double h = 1e-5 * std::max(1.0, std::abs(u.per_player[i](k)));
      JointControl up = u, um = u;
      up.per_player[i](k) += h;
      um.per_player[i](k) -= h;
      stage.B[i].col(k) = (step(x, up) - step(x, um)) / (2.0 * h);
    }
  }

  stage.drift = step(x, u) - stage.A * x;
  for (int i = 0; i < dims_.n_players; ++i)
    stage.drift -= stage.B[i] * u.per_player[i];
  return stage;
}

SingleIntegrator::SingleIntegrator(GameDims dims) : Dynamics(std::move(dims)) {
  if (dims_.total_control_dim() != dims_.state_dim)
    throw DimensionError("SingleIntegrator: total control dim must equal state dim");
}

Vec SingleIntegrator::step(const Vec& x, const JointControl& u) const {
  check_state_dim(x, dims_, "SingleIntegrator::step");
  u.check_dims(dims_, "SingleIntegrator::step");
  if (!x.allFinite() || !u.all_finite())
    throw NumericalError("SingleIntegrator::step: non-finite input");
  return x + dims_.dt * u.stacked();
}

LinearGameStage SingleIntegrator::linearize(const Vec& x, const JointControl& u) const {
  (void)x;
  (void)u;
  const int n = dims_.state_dim;
  LinearGameStage stage;
  stage.A = Mat::Identity(n, n);
  stage.B.resize(dims_.n_players);
  for (int i = 0; i < dims_.n_players; ++i) {
    stage.B[i] = Mat::Zero(n, dims_.control_dims[i]);
    stage.B[i].block(dims_.control_offset(i), 0, dims_.control_dims[i],
                     dims_.control_dims[i]) =
        dims_.dt * Mat::Identity(dims_.control_dims[i], dims_.control_dims[i]);
  }
  stage.drift = Vec::Zero(n);
  stage.noise_cov = Mat::Zero(n, n);
  return stage;
}

LinearDynamics::LinearDynamics(GameDims dims, Mat A, std::vector<Mat> B, Vec c)
    : Dynamics(std::move(dims)), A_(std::move(A)), B_(std::move(B)), c_(std::move(c)) {
  LinearGameStage probe{A_, B_, c_, Mat::Zero(dims_.state_dim, dims_.state_dim)};
  probe.check_invariants(dims_);
}

Vec LinearDynamics::step(const Vec& x, const JointControl& u) const {
  check_state_dim(x, dims_, "LinearDynamics::step");
  u.check_dims(dims_, "LinearDynamics::step");
  if (!x.allFinite() || !u.all_finite())
    throw NumericalError("LinearDynamics::step: non-finite input");
  Vec out = A_ * x + c_;
  for (int i = 0; i < dims_.n_players; ++i) out += B_[i] * u.per_player[i];
  return out;
}

LinearGameStage LinearDynamics::linearize(const Vec& x, const JointControl& u) const {
  (void)x;
  (void)u;
  return LinearGameStage{A_, B_, c_, Mat::Zero(dims_.state_dim, dims_.state_dim)};
}

namespace {
GameDims bicycle_dims(int n_players, int horizon, double dt) {
  GameDims dims;
  dims.n_players = n_players;
  dims.state_dim = KinematicBicycle::kStatePerAgent * n_players;
  dims.control_dims.assign(n_players, KinematicBicycle::kControlPerAgent);
  dims.horizon = horizon;
  dims.dt = dt;
  return dims;
}
}  // namespace

KinematicBicycle::KinematicBicycle(int n_players, int horizon, double dt)
    : Dynamics(bicycle_dims(n_players, horizon, dt)) {}

Vec KinematicBicycle::step(const Vec& x, const JointControl& u) const {
  check_state_dim(x, dims_, "KinematicBicycle::step");
  u.check_dims(dims_, "KinematicBicycle::step");
  if (!x.allFinite() || !u.all_finite())
    throw NumericalError("KinematicBicycle::step: non-finite input");

  const double dt = dims_.dt;
  Vec out(dims_.state_dim);
  for (int i = 0; i < dims_.n_players; ++i) {
    const int o = kStatePerAgent * i;
    const double th = x(o + 2), v = x(o + 3);
    const double a = u.per_player[i](0), w = u.per_player[i](1);
    out(o + 0) = x(o + 0) + dt * v * std::cos(th);
    out(o + 1) = x(o + 1) + dt * v * std::sin(th);
    out(o + 2) = th + dt * w;
    out(o + 3) = v + dt * a;
  }
  return out;
}

LinearGameStage KinematicBicycle::linearize(const Vec& x, const JointControl& u) const {
  check_state_dim(x, dims_, "KinematicBicycle::linearize");
  check_finite(x, "KinematicBicycle::linearize");

  const int n = dims_.state_dim;
  const double dt = dims_.dt;

  LinearGameStage stage;
  stage.A = Mat::Identity(n, n);
  stage.B.resize(dims_.n_players);
  stage.noise_cov = Mat::Zero(n, n);

  for (int i = 0; i < dims_.n_players; ++i) {
    const int o = kStatePerAgent * i;
    const double th = x(o + 2), v = x(o + 3);
    stage.A(o + 0, o + 2) = -dt * v * std::sin(th);
    stage.A(o + 0, o + 3) = dt * std::cos(th);
    stage.A(o + 1, o + 2) = dt * v * std::cos(th);
    stage.A(o + 1, o + 3) = dt * std::sin(th);

    stage.B[i] = Mat::Zero(n, kControlPerAgent);
    stage.B[i](o + 3, 0) = dt;  // accel
    stage.B[i](o + 2, 1) = dt;  // yaw rate
  }

  stage.drift = step(x, u) - stage.A * x;
  for (int i = 0; i < dims_.n_players; ++i)
    stage.drift -= stage.B[i] * u.per_player[i];
  return stage;
}

Trajectory make_trajectory(const GameDims& dims, const Vec& x0,
                           const std::vector<JointControl>& controls,
                           const Dynamics& dynamics) {
  check_state_dim(x0, dims, "make_trajectory");
  check_finite(x0, "make_trajectory");
  if (static_cast<int>(controls.size()) != dims.horizon)
    throw DimensionError("make_trajectory: controls length must equal horizon");

  Trajectory traj;
  traj.states.reserve(dims.horizon + 1);
  traj.controls = controls;
  traj.states.push_back(x0);
  for (int t = 0; t < dims.horizon; ++t) {
    controls[t].check_dims(dims, "make_trajectory");
    Vec next = dynamics.step(traj.states.back(), controls[t]);
    if (!next.allFinite())
      throw NumericalError("make_trajectory: non-finite state at step " +
                           std::to_string(t));
    traj.states.push_back(std::move(next));
  }
  return traj;
}

}  // namespace klgame
