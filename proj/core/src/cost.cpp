#include "klgame/cost.hpp"

#include <cmath>
#include <limits>

namespace klgame {

QuadraticStageCost QuadraticStageCost::zero(const GameDims& dims) {
  QuadraticStageCost c;
  c.Q = Mat::Zero(dims.state_dim, dims.state_dim);
  c.q = Vec::Zero(dims.state_dim);
  c.R.reserve(dims.n_players);
  c.r.reserve(dims.n_players);
  for (int mi : dims.control_dims) {
    c.R.emplace_back(Mat::Zero(mi, mi));
    c.r.emplace_back(Vec::Zero(mi));
  }
  return c;
}

void QuadraticStageCost::check_invariants(const GameDims& dims, int own_player) const {
  if (Q.rows() != dims.state_dim || Q.cols() != dims.state_dim)
    throw DimensionError("QuadraticStageCost: Q shape");
  if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw NumericalError("QuadraticStageCost: Q not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> esq(Q);
  if (esq.eigenvalues().minCoeff() < -1e-10)
    throw NumericalError("QuadraticStageCost: Q not PSD");
  for (int j = 0; j < dims.n_players; ++j) {
    if ((R[j] - R[j].transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw NumericalError("QuadraticStageCost: R not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> esr(R[j]);
    const double floor = (j == own_player) ? 1e-9 : -1e-10;
    if (esr.eigenvalues().minCoeff() < floor)
      throw NumericalError("QuadraticStageCost: R[" + std::to_string(j) +
                           "] violates definiteness requirement");
  }
}

Mat psd_project(const Mat& sym, double floor) {
  Mat s = 0.5 * (sym + sym.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  if (es.eigenvalues().minCoeff() >= floor) return s;
  Vec d = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

double PlayerCost::evaluate(const Vec& x, const JointControl& u) const {
  check_state_dim(x, dims_, "PlayerCost::evaluate");
  u.check_dims(dims_, "PlayerCost::evaluate");
  double total = 0.0;
  for (const auto& term : terms_) total += term->evaluate(x, u);
  return total;
}

QuadraticStageCost PlayerCost::quadraticize_raw(const Vec& x, const JointControl& u) const {
  check_state_dim(x, dims_, "PlayerCost::quadraticize");
  u.check_dims(dims_, "PlayerCost::quadraticize");
  QuadraticStageCost out = QuadraticStageCost::zero(dims_);
  for (const auto& term : terms_) term->accumulate(x, u, &out);
  if (!out.Q.allFinite() || !out.q.allFinite())
    throw NumericalError("quadraticize: non-finite state derivatives");
  for (int j = 0; j < dims_.n_players; ++j)
    if (!out.R[j].allFinite() || !out.r[j].allFinite())
      throw NumericalError("quadraticize: non-finite control derivatives");
  return out;
}

QuadraticStageCost PlayerCost::quadraticize(const Vec& x, const JointControl& u) const {
  QuadraticStageCost out = quadraticize_raw(x, u);
  out.Q = psd_project(out.Q, kPsdFloor);
  for (int j = 0; j < dims_.n_players; ++j)
    out.R[j] = psd_project(out.R[j], j == player_ ? kPsdFloor : 0.0);
  return out;
}

QuadraticGameCostTerm::QuadraticGameCostTerm(Mat Q, Vec q, std::vector<Mat> R,
                                             std::vector<Vec> r)
    : Q_(std::move(Q)), q_(std::move(q)), R_(std::move(R)), r_(std::move(r)) {}

double QuadraticGameCostTerm::evaluate(const Vec& x, const JointControl& u) const {
  double val = 0.5 * x.dot(Q_ * x) + q_.dot(x);
  for (int j = 0; j < u.n_players(); ++j) {
    const Vec& uj = u.per_player[j];
    val += 0.5 * uj.dot(R_[j] * uj) + r_[j].dot(uj);
  }
  return val;
}

void QuadraticGameCostTerm::accumulate(const Vec& x, const JointControl& u,
                                       QuadraticStageCost* out) const {
  out->Q += Q_;
  out->q += Q_ * x + q_;
  for (int j = 0; j < u.n_players(); ++j) {
    out->R[j] += R_[j];
    out->r[j] += R_[j] * u.per_player[j] + r_[j];
  }
}

double StateTrackTerm::evaluate(const Vec& x, const JointControl&) const {
  const double e = x(index_) - target_;
  return 0.5 * weight_ * e * e;
}

void StateTrackTerm::accumulate(const Vec& x, const JointControl&,
                                QuadraticStageCost* out) const {
  out->Q(index_, index_) += weight_;
  out->q(index_) += weight_ * (x(index_) - target_);
}

double ControlEffortTerm::evaluate(const Vec&, const JointControl& u) const {
  const Vec& up = u.per_player[player_];
  return 0.5 * up.dot(w_.asDiagonal() * up);
}

void ControlEffortTerm::accumulate(const Vec&, const JointControl& u,
                                   QuadraticStageCost* out) const {
  out->R[player_] += Mat(w_.asDiagonal());
  out->r[player_] += w_.asDiagonal() * u.per_player[player_];
}

LaneCenterTerm::LaneCenterTerm(int y_index, std::vector<double> centers, double margin,
                               double smoothing, double weight)
    : y_index_(y_index), centers_(std::move(centers)), margin_(margin),
      smoothing_(smoothing), weight_(weight) {}

namespace {
// Semiquadratic barrier b(y) = max(0, |y - c| - margin)^2 and derivatives.
struct Barrier {
  double value, grad, hess;
};
Barrier lane_barrier(double y, double c, double margin) {
  const double d = y - c;
  const double a = std::abs(d) - margin;
  if (a <= 0.0) return {0.0, 0.0, 0.0};
  const double s = d >= 0.0 ? 1.0 : -1.0;
  return {a * a, 2.0 * a * s, 2.0};
}
}  // namespace

double LaneCenterTerm::value_1d(double y) const {
  // softmin_s(b_1..b_K) = -s ln sum_k exp(-b_k / s)
  double m = std::numeric_limits<double>::infinity();
  for (double c : centers_) m = std::min(m, lane_barrier(y, c, margin_).value);
  double acc = 0.0;
  for (double c : centers_)
    acc += std::exp(-(lane_barrier(y, c, margin_).value - m) / smoothing_);
  return weight_ * (m - smoothing_ * std::log(acc));
}

double LaneCenterTerm::grad_1d(double y) const {
  double m = std::numeric_limits<double>::infinity();
  for (double c : centers_) m = std::min(m, lane_barrier(y, c, margin_).value);
  double acc = 0.0, g = 0.0;
  for (double c : centers_) {
    const Barrier b = lane_barrier(y, c, margin_);
    const double w = std::exp(-(b.value - m) / smoothing_);
    acc += w;
    g += w * b.grad;
  }
  return weight_ * g / acc;
}

double LaneCenterTerm::hess_1d(double y) const {
  double m = std::numeric_limits<double>::infinity();
  for (double c : centers_) m = std::min(m, lane_barrier(y, c, margin_).value);
  double acc = 0.0, g = 0.0, h = 0.0, g2 = 0.0;
  for (double c : centers_) {
    const Barrier b = lane_barrier(y, c, margin_);
    const double w = std::exp(-(b.value - m) / smoothing_);
    acc += w;
    g += w * b.grad;
    h += w * b.hess;
    g2 += w * b.grad * b.grad;
  }
  const double mean_g = g / acc;
  return weight_ * (h / acc - (g2 / acc - mean_g * mean_g) / smoothing_);
}

double LaneCenterTerm::evaluate(const Vec& x, const JointControl&) const {
  return value_1d(x(y_index_));
}

void LaneCenterTerm::accumulate(const Vec& x, const JointControl&,
                                QuadraticStageCost* out) const {
  const double y = x(y_index_);
  out->q(y_index_) += grad_1d(y);
  out->Q(y_index_, y_index_) += hess_1d(y);
}

double RoadBoundaryTerm::evaluate(const Vec& x, const JointControl&) const {
  const double a = std::abs(x(y_index_)) - limit_;
  return a > 0.0 ? weight_ * a * a : 0.0;
}

void RoadBoundaryTerm::accumulate(const Vec& x, const JointControl&,
                                  QuadraticStageCost* out) const {
  const double y = x(y_index_);
  const double a = std::abs(y) - limit_;
  if (a <= 0.0) return;
  const double s = y >= 0.0 ? 1.0 : -1.0;
  out->q(y_index_) += weight_ * 2.0 * a * s;
  out->Q(y_index_, y_index_) += weight_ * 2.0;
}

double CollisionTerm::evaluate(const Vec& x, const JointControl&) const {
  const double dx = x(oa_ + 0) - x(ob_ + 0);
  const double dy = x(oa_ + 1) - x(ob_ + 1);
  const double d2 = dx * dx + dy * dy;
  return weight_ * std::exp(-(d2 - radius_ * radius_) / scale_);
}

void CollisionTerm::accumulate(const Vec& x, const JointControl& u,
                               QuadraticStageCost* out) const {
  const double e = evaluate(x, u);
  const double dx = x(oa_ + 0) - x(ob_ + 0);
  const double dy = x(oa_ + 1) - x(ob_ + 1);
  const Eigen::Vector2d delta(dx, dy);

  // grad wrt delta: -2 e delta / s; hess: e (4/s^2 dd' - 2/s I)
  const Eigen::Vector2d gd = (-2.0 * e / scale_) * delta;
  const Eigen::Matrix2d hd =
      e * ((4.0 / (scale_ * scale_)) * delta * delta.transpose() -
           (2.0 / scale_) * Eigen::Matrix2d::Identity());

  const int idx[4] = {oa_ + 0, oa_ + 1, ob_ + 0, ob_ + 1};
  const double sign[4] = {1.0, 1.0, -1.0, -1.0};
  for (int a = 0; a < 4; ++a) {
    out->q(idx[a]) += sign[a] * gd(a % 2);
    for (int b = 0; b < 4; ++b)
      out->Q(idx[a], idx[b]) += sign[a] * sign[b] * hd(a % 2, b % 2);
  }
}

double CoordinationTerm::evaluate(const Vec& x, const JointControl&) const {
  const double d = x(ya_) - x(yb_);
  return weight_ * std::exp(-d * d / sigma2_);
}

void CoordinationTerm::accumulate(const Vec& x, const JointControl& u,
                                  QuadraticStageCost* out) const {
  const double d = x(ya_) - x(yb_);
  const double e = evaluate(x, u);
  const double g = e * (-2.0 * d / sigma2_);
  const double h = e * (4.0 * d * d / (sigma2_ * sigma2_) - 2.0 / sigma2_);
  out->q(ya_) += g;
  out->q(yb_) -= g;
  out->Q(ya_, ya_) += h;
  out->Q(yb_, yb_) += h;
  out->Q(ya_, yb_) -= h;
  out->Q(yb_, ya_) -= h;
}

void TollboothCostConfig::validate() const {
  if (lane_centers.empty()) throw ConfigError("tollbooth cost: need lane centers");
  auto nonneg = [](double v, const char* name) {
    if (v < 0.0) throw ConfigError(std::string("tollbooth cost: ") + name + " must be >= 0");
  };
  nonneg(lane_weight, "lane_weight");
  nonneg(coordination_weight, "coordination_weight");
  nonneg(collision_weight, "collision_weight");
  nonneg(boundary_weight, "boundary_weight");
  nonneg(control_weight_accel, "control_weight_accel");
  nonneg(control_weight_yaw, "control_weight_yaw");
  nonneg(speed_weight, "speed_weight");
  nonneg(heading_weight, "heading_weight");
  nonneg(preference_weight, "preference_weight");
  if (!(collision_radius > 0.0))
    throw ConfigError("tollbooth cost: collision_radius must be > 0");
  if (preferred_lane >= static_cast<int>(lane_centers.size()))
    throw ConfigError("tollbooth cost: preferred_lane out of range");
}

PlayerCost make_tollbooth_cost(const TollboothCostConfig& cfg, int player,
                               const GameDims& dims) {
  cfg.validate();
  const int o = 4 * player;
  PlayerCost cost(dims, player);

  cost.add_term(std::make_shared<LaneCenterTerm>(o + 1, cfg.lane_centers,
                                                 cfg.lane_margin, cfg.lane_smoothing,
                                                 cfg.lane_weight));
  cost.add_term(std::make_shared<RoadBoundaryTerm>(o + 1, cfg.road_half_width,
                                                   cfg.boundary_margin,
                                                   cfg.boundary_weight));
  cost.add_term(std::make_shared<StateTrackTerm>(o + 3, cfg.speed_weight,
                                                 cfg.target_speed));
  cost.add_term(std::make_shared<StateTrackTerm>(o + 2, cfg.heading_weight, 0.0));
  if (cfg.preferred_lane >= 0 && cfg.preference_weight > 0.0)
    cost.add_term(std::make_shared<StateTrackTerm>(
        o + 1, cfg.preference_weight, cfg.lane_centers[cfg.preferred_lane]));

  Vec cw(2);
  cw << cfg.control_weight_accel, cfg.control_weight_yaw;
  cost.add_term(std::make_shared<ControlEffortTerm>(player, cw));

  for (int other = 0; other < dims.n_players; ++other) {
    if (other == player) continue;
    const int oo = 4 * other;
    cost.add_term(std::make_shared<CollisionTerm>(o, oo, cfg.collision_weight,
                                                  cfg.collision_radius));
    cost.add_term(std::make_shared<CoordinationTerm>(o + 1, oo + 1,
                                                     cfg.coordination_weight,
                                                     cfg.coordination_sigma));
  }
  return cost;
}

}  // namespace klgame
