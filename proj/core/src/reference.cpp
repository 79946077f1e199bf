#include "klgame/reference.hpp"

#include <cmath>
#include <limits>

namespace klgame {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_spd(const Mat& cov, double floor, const char* where) {
  if (cov.rows() != cov.cols())
    throw DimensionError(std::string(where) + ": covariance must be square");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9)
    throw NumericalError(std::string(where) + ": covariance not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  if (es.eigenvalues().minCoeff() < floor - 1e-15)
    throw NumericalError(std::string(where) + ": covariance below SPD floor");
}
}  // namespace

void GaussianRef::check_invariants() const {
  if (mean.size() != cov.size())
    throw DimensionError("GaussianRef: mean/cov length mismatch");
  for (size_t t = 0; t < mean.size(); ++t) {
    if (mean[t].size() != cov[t].rows())
      throw DimensionError("GaussianRef: mean/cov dim mismatch");
    check_spd(cov[t], kCovFloor, "GaussianRef");
  }
}

GaussianRef GaussianRef::constant(const Vec& mean, const Mat& cov, int horizon) {
  GaussianRef ref;
  ref.mean.assign(horizon, mean);
  ref.cov.assign(horizon, cov);
  return ref;
}

void FeedbackGaussianRef::check_invariants() const {
  if (K.size() != kappa.size() || K.size() != cov.size())
    throw DimensionError("FeedbackGaussianRef: per-timestep length mismatch");
  for (size_t t = 0; t < K.size(); ++t) {
    if (K[t].rows() != kappa[t].size() || K[t].rows() != cov[t].rows())
      throw DimensionError("FeedbackGaussianRef: shape mismatch");
    check_spd(cov[t], kCovFloor, "FeedbackGaussianRef");
  }
}

FeedbackGaussianRef FeedbackGaussianRef::open_loop(const GaussianRef& ref,
                                                   int state_dim) {
  FeedbackGaussianRef out;
  const int T = ref.horizon();
  out.K.reserve(T);
  out.kappa.reserve(T);
  out.cov = ref.cov;
  for (int t = 0; t < T; ++t) {
    out.K.emplace_back(Mat::Zero(ref.mean[t].size(), state_dim));
    out.kappa.emplace_back(-ref.mean[t]);
  }
  return out;
}

void GMMRef::check_invariants() const {
  if (modes.empty()) throw DimensionError("GMMRef: need at least one mode");
  for (const auto& wt : weights) {
    if (static_cast<int>(wt.size()) != n_modes())
      throw DimensionError("GMMRef: weight row size must equal n_modes");
    double sum = 0.0;
    for (double w : wt) {
      if (w < 0.0) throw NumericalError("GMMRef: negative mixture weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw NumericalError("GMMRef: mixture weights must sum to 1");
  }
}

std::vector<double> GMMRef::normalized(std::vector<double> w) {
  double sum = 0.0;
  for (double v : w) sum += v;
  if (!(sum > 0.0)) throw NumericalError("GMMRef: cannot normalize zero weights");
  for (double& v : w) v /= sum;
  return w;
}

GaussianStochasticPolicy::GaussianStochasticPolicy(GaussianRef ref)
    : ref_(std::move(ref)) {
  ref_.check_invariants();
}

double GaussianStochasticPolicy::log_density(const Vec& u, const Vec&, int t) const {
  return gaussian_log_density(u, ref_.mean[t], ref_.cov[t]);
}

Vec GaussianStochasticPolicy::sample(const Vec&, int t, Rng& rng) const {
  const Eigen::LLT<Mat> llt(ref_.cov[t]);
  return ref_.mean[t] + llt.matrixL() * rng.gaussian_vec(ref_.mean[t].size());
}

FeedbackStochasticPolicy::FeedbackStochasticPolicy(FeedbackGaussianRef ref)
    : ref_(std::move(ref)) {
  ref_.check_invariants();
}

double FeedbackStochasticPolicy::log_density(const Vec& u, const Vec& x, int t) const {
  return gaussian_log_density(u, ref_.mean_at(x, t), ref_.cov[t]);
}

Vec FeedbackStochasticPolicy::sample(const Vec& x, int t, Rng& rng) const {
  const Eigen::LLT<Mat> llt(ref_.cov[t]);
  return ref_.mean_at(x, t) + llt.matrixL() * rng.gaussian_vec(ref_.kappa[t].size());
}

GMMStochasticPolicy::GMMStochasticPolicy(GMMRef ref) : ref_(std::move(ref)) {
  ref_.check_invariants();
}

int GMMStochasticPolicy::control_dim() const {
  return std::visit(
      [](const auto& mode) {
        return static_cast<int>(mode.cov[0].rows());
      },
      ref_.modes[0]);
}

double GMMStochasticPolicy::log_density(const Vec& u, const Vec& x, int t) const {
  return klgame::log_density(ref_, u, x, t);
}

Vec GMMStochasticPolicy::sample(const Vec& x, int t, Rng& rng) const {
  const auto& wt = ref_.weights[t];
  double pick = rng.uniform(), acc = 0.0;
  size_t m = wt.size() - 1;
  for (size_t k = 0; k < wt.size(); ++k) {
    acc += wt[k];
    if (pick <= acc) {
      m = k;
      break;
    }
  }
  return std::visit(
      [&](const auto& mode) -> Vec {
        const Eigen::LLT<Mat> llt(mode.cov[t]);
        Vec mean;
        if constexpr (std::is_same_v<std::decay_t<decltype(mode)>, GaussianRef>)
          mean = mode.mean[t];
        else
          mean = mode.mean_at(x, t);
        return mean + llt.matrixL() * rng.gaussian_vec(mean.size());
      },
      ref_.modes[m]);
}

double gaussian_log_density(const Vec& u, const Vec& mean, const Mat& cov) {
  const Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NumericalError("gaussian_log_density: covariance not SPD");
  const Vec d = u - mean;
  const Vec w = llt.matrixL().solve(d);
  double logdet = 0.0;
  for (int i = 0; i < cov.rows(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * (w.squaredNorm() + logdet + cov.rows() * kLog2Pi);
}

double log_density(const RefMode& ref, const Vec& u, const Vec& x, int t) {
  return std::visit(
      [&](const auto& mode) {
        if constexpr (std::is_same_v<std::decay_t<decltype(mode)>, GaussianRef>)
          return gaussian_log_density(u, mode.mean[t], mode.cov[t]);
        else
          return gaussian_log_density(u, mode.mean_at(x, t), mode.cov[t]);
      },
      ref);
}

double log_density(const GMMRef& ref, const Vec& u, const Vec& x, int t) {
  const auto& wt = ref.weights[t];
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(wt.size(), -std::numeric_limits<double>::infinity());
  for (size_t m = 0; m < wt.size(); ++m) {
    if (wt[m] <= 0.0) continue;
    logs[m] = std::log(wt[m]) + log_density(ref.modes[m], u, x, t);
    best = std::max(best, logs[m]);
  }
  double acc = 0.0;
  for (double l : logs) acc += std::exp(l - best);
  return best + std::log(acc);
}

double gaussian_kl(const Vec& p_mean, const Mat& p_cov, const Vec& q_mean,
                   const Mat& q_cov) {
  const int n = static_cast<int>(p_mean.size());
  const Eigen::LLT<Mat> lp(p_cov), lq(q_cov);
  if (lp.info() != Eigen::Success || lq.info() != Eigen::Success)
    throw NumericalError("gaussian_kl: covariance not SPD");

  double logdet_p = 0.0, logdet_q = 0.0;
  for (int i = 0; i < n; ++i) {
    logdet_p += 2.0 * std::log(lp.matrixL()(i, i));
    logdet_q += 2.0 * std::log(lq.matrixL()(i, i));
  }
  const Mat q_inv_p = lq.solve(p_cov);
  const Vec d = p_mean - q_mean;
  const double maha = d.dot(lq.solve(d));
  return 0.5 * (logdet_q - logdet_p - n + q_inv_p.trace() + maha);
}

Mat spd_floor(const Mat& sym, double floor) {
  Mat s = 0.5 * (sym + sym.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  if (es.eigenvalues().minCoeff() >= floor) return s;
  Vec d = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

Vec fd_gradient(const StochasticPolicy& policy, const Vec& u, const Vec& x, int t) {
  const int m = static_cast<int>(u.size());
  Vec g(m);
  for (int i = 0; i < m; ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(u(i)));
    Vec up = u, um = u;
    up(i) += h;
    um(i) -= h;
    g(i) = (policy.log_density(up, x, t) - policy.log_density(um, x, t)) / (2.0 * h);
  }
  return g;
}

Mat fd_hessian(const StochasticPolicy& policy, const Vec& u, const Vec& x, int t) {
  const int m = static_cast<int>(u.size());
  const double f0 = policy.log_density(u, x, t);
  Mat H(m, m);
  Vec h(m);
  for (int i = 0; i < m; ++i) h(i) = 1e-4 * std::max(1.0, std::abs(u(i)));
  for (int i = 0; i < m; ++i) {
    Vec up = u, um = u;
    up(i) += h(i);
    um(i) -= h(i);
    H(i, i) = (policy.log_density(up, x, t) - 2.0 * f0 +
               policy.log_density(um, x, t)) /
              (h(i) * h(i));
    for (int j = i + 1; j < m; ++j) {
      Vec upp = u, upm = u, ump = u, umm = u;
      upp(i) += h(i); upp(j) += h(j);
      upm(i) += h(i); upm(j) -= h(j);
      ump(i) -= h(i); ump(j) += h(j);
      umm(i) -= h(i); umm(j) -= h(j);
      H(i, j) = (policy.log_density(upp, x, t) - policy.log_density(upm, x, t) -
                 policy.log_density(ump, x, t) + policy.log_density(umm, x, t)) /
                (4.0 * h(i) * h(j));
      H(j, i) = H(i, j);
    }
  }
  return H;
}

}  // namespace

void laplace_fit_point(const StochasticPolicy& policy, const Vec& x, const Vec& u_init,
                       int t, const LaplaceOptions& opts, Vec* mean, Mat* cov) {
  Vec u = u_init;
  double f = policy.log_density(u, x, t);

  for (int step = 0; step < opts.max_newton_steps; ++step) {
    const Vec g = fd_gradient(policy, u, x, t);
    if (g.cwiseAbs().maxCoeff() < opts.grad_tolerance) break;

    const Mat H = fd_hessian(policy, u, x, t);
    Vec dir;
    Eigen::LLT<Mat> llt(Mat(-H));
    if (llt.info() == Eigen::Success) {
      dir = llt.solve(g);  // Newton ascent step
    } else {
      dir = g;  // fall back to steepest ascent off the concave region
    }

    double alpha = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 40; ++bt) {
      const Vec cand = u + alpha * dir;
      const double fc = policy.log_density(cand, x, t);
      if (fc > f) {
        u = cand;
        f = fc;
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) break;
  }

  const Mat H = fd_hessian(policy, u, x, t);
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (H + H.transpose()));
  if (es.eigenvalues().maxCoeff() >= 0.0)
    throw SingularLaplaceError(
        "laplace_fit: log-density Hessian not negative definite at mode", t);

  *mean = u;
  *cov = spd_floor(Mat(-H).inverse(), kCovFloor);
}

GaussianRef laplace_fit(const StochasticPolicy& policy, const Trajectory& nominal,
                        int player, const LaplaceOptions& opts) {
  const int T = nominal.horizon();
  GaussianRef ref;
  ref.mean.resize(T);
  ref.cov.resize(T);
  for (int t = 0; t < T; ++t) {
    laplace_fit_point(policy, nominal.states[t],
                      nominal.controls[t].per_player[player], t, opts, &ref.mean[t],
                      &ref.cov[t]);
  }
  return ref;
}

FeedbackGaussianRef feedback_fit(const StochasticPolicy& policy,
                                 const Trajectory& nominal, int player,
                                 int n_samples, const Dynamics& dynamics, Rng& rng,
                                 const FeedbackFitOptions& opts) {
  if (n_samples < 2)
    throw DimensionError("feedback_fit: n_samples must be >= 2");

  const GameDims& dims = dynamics.dims();
  const int T = nominal.horizon();
  const int n = dims.state_dim;
  const int mi = dims.control_dims[player];

  // Sample means/covariances of the policy along the nominal states.
  std::vector<Vec> u_hat(T);
  std::vector<Mat> covs(T);
  for (int t = 0; t < T; ++t) {
    Mat samples(mi, n_samples);
    for (int s = 0; s < n_samples; ++s)
      samples.col(s) = policy.sample(nominal.states[t], t, rng);
    const Vec mean = samples.rowwise().mean();
    Mat centered = samples.colwise() - mean;
    Mat cov = centered * centered.transpose() / double(n_samples - 1);
    u_hat[t] = mean;
    covs[t] = spd_floor(cov, kCovFloor);
  }

  // Target states: roll the sample-mean controls through the linearization,
  // other players held at their nominal controls.
  std::vector<LinearGameStage> stages(T);
  std::vector<Vec> x_hat(T + 1);
  x_hat[0] = nominal.states[0];
  for (int t = 0; t < T; ++t) {
    stages[t] = dynamics.linearize(nominal.states[t], nominal.controls[t]);
    Vec next = stages[t].A * x_hat[t] + stages[t].drift +
               stages[t].B[player] * u_hat[t];
    for (int j = 0; j < dims.n_players; ++j) {
      if (j == player) continue;
      next += stages[t].B[j] * nominal.controls[t].per_player[j];
    }
    x_hat[t + 1] = next;
  }

  // Tracking LQR: state weight opts.tracking_weight toward x_hat, control
  // deviation weight toward u_hat; affine Riccati recursion.
  const Mat W = opts.tracking_weight * Mat::Identity(n, n);
  const Mat V = opts.control_deviation_weight * Mat::Identity(mi, mi);

  FeedbackGaussianRef ref;
  ref.K.resize(T);
  ref.kappa.resize(T);
  ref.cov = std::move(covs);

  Mat P = W;
  Vec p = -W * x_hat[T];
  for (int t = T - 1; t >= 0; --t) {
    const Mat& A = stages[t].A;
    const Mat& B = stages[t].B[player];
    Vec c = stages[t].drift;
    for (int j = 0; j < dims.n_players; ++j) {
      if (j == player) continue;
      c += stages[t].B[j] * nominal.controls[t].per_player[j];
    }

    const Mat D = V + B.transpose() * P * B;
    const Eigen::LLT<Mat> llt(D);
    const Mat K = llt.solve(B.transpose() * P * A);
    const Vec kap = llt.solve(B.transpose() * (P * c + p) - V * u_hat[t]);

    const Mat F = A - B * K;
    const Vec beta = c - B * kap;
    const Vec q_t = -W * x_hat[t];
    const Vec r_t = -V * u_hat[t];
    p = q_t + K.transpose() * (V * kap - r_t) + F.transpose() * (p + P * beta);
    P = W + K.transpose() * V * K + F.transpose() * P * F;

    ref.K[t] = K;
    ref.kappa[t] = kap;
  }
  return ref;
}

}  // namespace klgame
