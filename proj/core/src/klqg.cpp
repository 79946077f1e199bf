#include "klgame/klqg.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

namespace klgame {

namespace {
constexpr double kConditionLimit = 1e12;
}

void KLWeights::validate(int n_players) const {
  if (static_cast<int>(lambda.size()) != n_players)
    throw DimensionError("KLWeights: need one lambda per player");
  for (double l : lambda)
    if (!(l >= 0.0)) throw NumericalError("KLWeights: lambda must be >= 0");
}

StageRef StageRef::maxent(int control_dim, int state_dim) {
  StageRef ref;
  ref.precision = Mat::Zero(control_dim, control_dim);
  ref.Ktil = Mat::Zero(control_dim, state_dim);
  ref.ktil = Vec::Zero(control_dim);
  ref.cov = Mat();
  ref.informative = false;
  return ref;
}

StageRef StageRef::from_gaussian(const Vec& mean, const Mat& cov, int state_dim) {
  StageRef ref;
  const Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NumericalError("StageRef: reference covariance not SPD");
  ref.precision = llt.solve(Mat::Identity(cov.rows(), cov.cols()));
  ref.Ktil = Mat::Zero(mean.size(), state_dim);
  ref.ktil = -mean;
  ref.cov = cov;
  ref.informative = true;
  return ref;
}

StageRef StageRef::from_feedback(const Mat& Ktil, const Vec& ktil, const Mat& cov) {
  StageRef ref;
  const Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NumericalError("StageRef: reference covariance not SPD");
  ref.precision = llt.solve(Mat::Identity(cov.rows(), cov.cols()));
  ref.Ktil = Ktil;
  ref.ktil = ktil;
  ref.cov = cov;
  ref.informative = true;
  return ref;
}

StageSolve solve_klqg_stage(const LinearGameStage& stage,
                            const std::vector<QuadraticStageCost>& costs,
                            const std::vector<StageRef>& refs,
                            const std::vector<double>& lambda,
                            const std::vector<Mat>& Z_next,
                            const std::vector<Vec>& z_next, int timestep) {
  const int N = static_cast<int>(costs.size());
  const int n = static_cast<int>(stage.A.rows());

  std::vector<int> m(N), off(N + 1, 0);
  for (int i = 0; i < N; ++i) {
    m[i] = static_cast<int>(stage.B[i].cols());
    off[i + 1] = off[i] + m[i];
  }
  const int M = off[N];

  // Assemble the coupled block system S [K^1; ...; K^N] = Y and S kappa = y.
  Mat S = Mat::Zero(M, M);
  Mat Y = Mat::Zero(M, n);
  Vec y = Vec::Zero(M);

  std::vector<Mat> BiZ(N);
  for (int i = 0; i < N; ++i) {
    BiZ[i].noalias() = stage.B[i].transpose() * Z_next[i];

    for (int j = 0; j < N; ++j) {
      Mat blk = BiZ[i] * stage.B[j];
      if (j == i) {
        blk += costs[i].R[i];
        if (lambda[i] > 0.0 && refs[i].informative)
          blk += lambda[i] * refs[i].precision;
      }
      S.block(off[i], off[j], m[i], m[j]) = blk;
    }

    Y.block(off[i], 0, m[i], n) = BiZ[i] * stage.A;
    y.segment(off[i], m[i]) = stage.B[i].transpose() * z_next[i] +
                              BiZ[i] * stage.drift + costs[i].r[i];
    if (lambda[i] > 0.0 && refs[i].informative) {
      Y.block(off[i], 0, m[i], n) += lambda[i] * refs[i].precision * refs[i].Ktil;
      y.segment(off[i], m[i]) += lambda[i] * refs[i].precision * refs[i].ktil;
    }
  }

  // Row-block equilibration: large lambda inflates a player's diagonal block
  // without making the game ill-posed, so condition is monitored on the
  // scaled system.
  for (int i = 0; i < N; ++i) {
    const double scale =
        std::max(1.0, S.block(off[i], 0, m[i], M).cwiseAbs().maxCoeff());
    S.block(off[i], 0, m[i], M) /= scale;
    Y.block(off[i], 0, m[i], n) /= scale;
    y.segment(off[i], m[i]) /= scale;
  }

  if (!S.allFinite() || !Y.allFinite() || !y.allFinite())
    throw NumericalError("solve_klqg_stage: non-finite stage system");

  Eigen::JacobiSVD<Mat> svd(S);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  const double condition = (smin > 0.0) ? smax / smin
                                        : std::numeric_limits<double>::infinity();
  if (!(condition < kConditionLimit))
    throw SingularRiccatiError("coupled Riccati block system is singular", timestep);

  // Gain solve on the full stacked unknown (all entries of all K^i); this
  // dense LU is the dominant O((sum_i m_i * n)^3) operation per stage.
  Mat big = Mat::Zero(M * n, M * n);
  Vec rhs(M * n);
  for (int c = 0; c < n; ++c) {
    big.block(c * M, c * M, M, M) = S;
    rhs.segment(c * M, M) = Y.col(c);
  }
  const Eigen::PartialPivLU<Mat> big_lu(big);
  const Vec k_stacked = big_lu.solve(rhs);

  const Eigen::PartialPivLU<Mat> s_lu(S);
  const Vec kap_stacked = s_lu.solve(y);

  StageSolve out;
  out.condition = condition;
  out.K.resize(N);
  out.kappa.resize(N);
  out.cov.resize(N);
  out.Z.resize(N);
  out.z.resize(N);

  for (int i = 0; i < N; ++i) {
    out.K[i].resize(m[i], n);
    for (int c = 0; c < n; ++c)
      out.K[i].col(c) = k_stacked.segment(c * M + off[i], m[i]);
    out.kappa[i] = kap_stacked.segment(off[i], m[i]);
  }

  // Policy covariance per Eq. (10)/(13); zero marker for lambda = 0.
  for (int i = 0; i < N; ++i) {
    if (lambda[i] == 0.0) {
      out.cov[i] = Mat::Zero(m[i], m[i]);
      continue;
    }
    const Mat gain_curv = costs[i].R[i] + BiZ[i] * stage.B[i];
    Mat inv_cov = gain_curv / lambda[i];
    if (refs[i].informative) inv_cov += refs[i].precision;
    const Eigen::LLT<Mat> llt(0.5 * (inv_cov + inv_cov.transpose()));
    if (llt.info() != Eigen::Success)
      throw NumericalError("solve_klqg_stage: policy covariance not SPD");
    out.cov[i] = llt.solve(Mat::Identity(m[i], m[i]));
    out.cov[i] = 0.5 * (out.cov[i] + out.cov[i].transpose());
  }

  Mat F = stage.A;
  Vec beta = stage.drift;
  for (int j = 0; j < N; ++j) {
    F.noalias() -= stage.B[j] * out.K[j];
    beta.noalias() -= stage.B[j] * out.kappa[j];
  }

  double asym = 0.0;
  for (int i = 0; i < N; ++i) {
    Mat Z = costs[i].Q + F.transpose() * Z_next[i] * F;
    Vec z = costs[i].q + F.transpose() * (z_next[i] + Z_next[i] * beta);
    for (int j = 0; j < N; ++j) {
      Z.noalias() += out.K[j].transpose() * costs[i].R[j] * out.K[j];
      z.noalias() +=
          out.K[j].transpose() * (costs[i].R[j] * out.kappa[j] - costs[i].r[j]);
    }
    if (lambda[i] > 0.0 && refs[i].informative) {
      const Mat dK = out.K[i] - refs[i].Ktil;
      const Vec dk = out.kappa[i] - refs[i].ktil;
      Z.noalias() += lambda[i] * dK.transpose() * refs[i].precision * dK;
      z.noalias() += lambda[i] * dK.transpose() * (refs[i].precision * dk);
    }
    asym = std::max(asym, (Z - Z.transpose()).cwiseAbs().maxCoeff());
    out.Z[i] = 0.5 * (Z + Z.transpose());
    out.z[i] = std::move(z);
  }
  out.asymmetry = asym;
  return out;
}

KlqgSolution solve_klqg_stagerefs(const std::vector<LinearGameStage>& stages,
                                  const std::vector<std::vector<QuadraticStageCost>>& costs,
                                  const std::vector<std::vector<StageRef>>& refs,
                                  const KLWeights& lambda) {
  const int T = static_cast<int>(stages.size());
  if (static_cast<int>(costs.size()) != T)
    throw DimensionError("solve_klqg: need costs for every stage");
  const int N = static_cast<int>(costs[0].size());
  lambda.validate(N);

  KlqgSolution sol;
  sol.policies.resize(N);
  sol.values.resize(N);
  for (int i = 0; i < N; ++i) {
    sol.policies[i].K.resize(T);
    sol.policies[i].kappa.resize(T);
    sol.policies[i].cov.resize(T);
    sol.values[i].Z.resize(T + 1);
    sol.values[i].z.resize(T + 1);
    const int n = static_cast<int>(stages[0].A.rows());
    sol.values[i].Z[T] = Mat::Zero(n, n);
    sol.values[i].z[T] = Vec::Zero(n);
  }

  std::vector<Mat> Z_next(N);
  std::vector<Vec> z_next(N);
  for (int i = 0; i < N; ++i) {
    Z_next[i] = sol.values[i].Z[T];
    z_next[i] = sol.values[i].z[T];
  }

  for (int t = T - 1; t >= 0; --t) {
    StageSolve st =
        solve_klqg_stage(stages[t], costs[t], refs[t], lambda.lambda, Z_next, z_next, t);
    sol.max_condition = std::max(sol.max_condition, st.condition);
    sol.max_asymmetry = std::max(sol.max_asymmetry, st.asymmetry);
    for (int i = 0; i < N; ++i) {
      sol.policies[i].K[t] = std::move(st.K[i]);
      sol.policies[i].kappa[t] = std::move(st.kappa[i]);
      sol.policies[i].cov[t] = std::move(st.cov[i]);
      sol.values[i].Z[t] = st.Z[i];
      sol.values[i].z[t] = st.z[i];
      Z_next[i] = sol.values[i].Z[t];
      z_next[i] = sol.values[i].z[t];
    }
  }
  return sol;
}

std::vector<std::vector<StageRef>> stagerefs_from_gaussian(
    const std::vector<GaussianRef>& refs, int state_dim, int horizon) {
  std::vector<std::vector<StageRef>> out(horizon);
  for (int t = 0; t < horizon; ++t) {
    out[t].reserve(refs.size());
    for (const auto& ref : refs)
      out[t].push_back(StageRef::from_gaussian(ref.mean[t], ref.cov[t], state_dim));
  }
  return out;
}

std::vector<std::vector<StageRef>> stagerefs_from_feedback(
    const std::vector<FeedbackGaussianRef>& refs, int horizon) {
  std::vector<std::vector<StageRef>> out(horizon);
  for (int t = 0; t < horizon; ++t) {
    out[t].reserve(refs.size());
    for (const auto& ref : refs)
      out[t].push_back(StageRef::from_feedback(ref.K[t], ref.kappa[t], ref.cov[t]));
  }
  return out;
}

std::vector<std::vector<StageRef>> stagerefs_maxent(const GameDims& dims) {
  std::vector<std::vector<StageRef>> out(dims.horizon);
  for (int t = 0; t < dims.horizon; ++t) {
    out[t].reserve(dims.n_players);
    for (int i = 0; i < dims.n_players; ++i)
      out[t].push_back(StageRef::maxent(dims.control_dims[i], dims.state_dim));
  }
  return out;
}

KlqgSolution solve_klqg(const std::vector<LinearGameStage>& stages,
                        const std::vector<std::vector<QuadraticStageCost>>& costs,
                        const std::vector<GaussianRef>& refs,
                        const KLWeights& lambda) {
  const int T = static_cast<int>(stages.size());
  const int n = static_cast<int>(stages[0].A.rows());
  return solve_klqg_stagerefs(stages, costs, stagerefs_from_gaussian(refs, n, T),
                              lambda);
}

KlqgSolution solve_klqg_feedback(
    const std::vector<LinearGameStage>& stages,
    const std::vector<std::vector<QuadraticStageCost>>& costs,
    const std::vector<FeedbackGaussianRef>& refs, const KLWeights& lambda) {
  const int T = static_cast<int>(stages.size());
  return solve_klqg_stagerefs(stages, costs, stagerefs_from_feedback(refs, T), lambda);
}

KlqgSolution solve_maxent(const std::vector<LinearGameStage>& stages,
                          const std::vector<std::vector<QuadraticStageCost>>& costs,
                          const KLWeights& lambda) {
  const int T = static_cast<int>(stages.size());
  const int N = static_cast<int>(costs[0].size());
  std::vector<std::vector<StageRef>> refs(T);
  for (int t = 0; t < T; ++t) {
    refs[t].reserve(N);
    for (int i = 0; i < N; ++i)
      refs[t].push_back(StageRef::maxent(static_cast<int>(stages[t].B[i].cols()),
                                         static_cast<int>(stages[t].A.rows())));
  }
  return solve_klqg_stagerefs(stages, costs, refs, lambda);
}

namespace {

// Closed-form expected stage-plus-continuation value for one player as a
// function of their policy mean and covariance at a fixed state; everything
// else held at the solved equilibrium.
double expected_stage_value(const LinearGameStage& stage,
                            const QuadraticStageCost& cost, const StageRef& ref,
                            double lambda, const Mat& Z_next, const Vec& z_next,
                            const std::vector<Mat>& K_all,
                            const std::vector<Vec>& kappa_all,
                            const std::vector<Mat>& cov_all, int player,
                            const Vec& x, const Vec& mu_i, const Mat& cov_i) {
  const int N = static_cast<int>(K_all.size());
  double val = 0.5 * x.dot(cost.Q * x) + cost.q.dot(x);

  Vec x_next = stage.A * x + stage.drift;
  for (int j = 0; j < N; ++j) {
    const Vec mu_j = (j == player) ? mu_i : Vec(-(K_all[j] * x) - kappa_all[j]);
    const Mat& cov_j = (j == player) ? cov_i : cov_all[j];
    val += 0.5 * mu_j.dot(cost.R[j] * mu_j) + cost.r[j].dot(mu_j) +
           0.5 * (cost.R[j] * cov_j).trace();
    x_next += stage.B[j] * mu_j;
    val += 0.5 *
           (Z_next * stage.B[j] * cov_j * stage.B[j].transpose()).trace();
  }
  val += 0.5 * x_next.dot(Z_next * x_next) + z_next.dot(x_next);
  if (stage.noise_cov.size() > 0) val += 0.5 * (Z_next * stage.noise_cov).trace();

  if (lambda > 0.0 && ref.informative) {
    const Vec d = mu_i - (-(ref.Ktil * x) - ref.ktil);
    const Eigen::LLT<Mat> lcov(cov_i);
    if (lcov.info() != Eigen::Success)
      throw NumericalError("expected_stage_value: policy covariance not SPD");
    double logdet_cov = 0.0, logdet_ref = 0.0;
    for (int i = 0; i < cov_i.rows(); ++i)
      logdet_cov += 2.0 * std::log(lcov.matrixL()(i, i));
    const Eigen::LLT<Mat> lref(ref.cov);
    for (int i = 0; i < ref.cov.rows(); ++i)
      logdet_ref += 2.0 * std::log(lref.matrixL()(i, i));
    val += 0.5 * lambda *
           (logdet_ref - logdet_cov - cov_i.rows() +
            (ref.precision * cov_i).trace() + d.dot(ref.precision * d));
  }
  return val;
}

}  // namespace

double verify_stationarity(const KlqgSolution& solution,
                           const std::vector<LinearGameStage>& stages,
                           const std::vector<std::vector<QuadraticStageCost>>& costs,
                           const std::vector<std::vector<StageRef>>& refs,
                           const KLWeights& lambda, int t, int player) {
  const int N = static_cast<int>(solution.policies.size());
  const int n = static_cast<int>(stages[t].A.rows());
  const int mi = static_cast<int>(stages[t].B[player].cols());
  const double lam = lambda.lambda[player];

  std::vector<Mat> K_all(N), cov_all(N);
  std::vector<Vec> kappa_all(N);
  for (int j = 0; j < N; ++j) {
    K_all[j] = solution.policies[j].K[t];
    kappa_all[j] = solution.policies[j].kappa[t];
    cov_all[j] = solution.policies[j].cov[t];
  }
  const Mat& Z_next = solution.values[player].Z[t + 1];
  const Vec& z_next = solution.values[player].z[t + 1];

  auto eval = [&](const Vec& x, const Vec& mu, const Mat& cov) {
    return expected_stage_value(stages[t], costs[t][player], refs[t][player], lam,
                                Z_next, z_next, K_all, kappa_all, cov_all, player,
                                x, mu, cov);
  };

  double max_grad = 0.0;
  for (int probe = 0; probe < 3; ++probe) {
    Rng rng(split_seed(0x5eedu + probe, 31 * t + player));
    const Vec x = rng.gaussian_vec(n);
    const Vec mu_star = -(K_all[player] * x) - kappa_all[player];
    const Mat cov_star = cov_all[player];

    // The expectation is exactly quadratic in the mean, so a generous step
    // avoids roundoff without truncation error.
    for (int k = 0; k < mi; ++k) {
      const double h = 1e-4 * std::max(1.0, std::abs(mu_star(k)));
      Vec up = mu_star, um = mu_star;
      up(k) += h;
      um(k) -= h;
      const double g = (eval(x, up, cov_star) - eval(x, um, cov_star)) / (2.0 * h);
      max_grad = std::max(max_grad, std::abs(g));
    }

    if (lam > 0.0) {
      const double cov_scale = std::max(cov_star.trace() / mi, 1e-3);
      for (int a = 0; a < mi; ++a) {
        for (int b = a; b < mi; ++b) {
          double h = 3e-4 * cov_scale;
          for (int attempt = 0; attempt < 6; ++attempt) {
            Mat pert = Mat::Zero(mi, mi);
            pert(a, b) = h;
            pert(b, a) = h;
            const Eigen::LLT<Mat> check(cov_star - pert);
            if (check.info() == Eigen::Success) break;
            h *= 0.1;
          }
          Mat pert = Mat::Zero(mi, mi);
          pert(a, b) = h;
          pert(b, a) = h;
          const double g =
              (eval(x, mu_star, cov_star + pert) - eval(x, mu_star, cov_star - pert)) /
              (2.0 * h);
          max_grad = std::max(max_grad, std::abs(g));
        }
      }
    }
  }
  return max_grad;
}

void gauss_hermite(int order, std::vector<double>* nodes, std::vector<double>* weights) {
  // Golub-Welsch on the Hermite Jacobi matrix (physicists' weight e^{-x^2}).
  Mat J = Mat::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    const double b = std::sqrt(k / 2.0);
    J(k - 1, k) = b;
    J(k, k - 1) = b;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(J);
  nodes->resize(order);
  weights->resize(order);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int k = 0; k < order; ++k) {
    (*nodes)[k] = es.eigenvalues()(k);
    const double v = es.eigenvectors()(0, k);
    (*weights)[k] = sqrt_pi * v * v;
  }
}

double bellman_optimal_policy_density(const std::function<double(const Vec&)>& q_fn,
                                      const Vec& ref_mean, const Mat& ref_cov,
                                      double lambda, const Vec& u) {
  const int d = static_cast<int>(ref_mean.size());
  if (d > 2)
    throw UnsupportedError("bellman_optimal_policy_density: controls beyond 2-D");
  if (!(lambda > 0.0))
    throw NumericalError("bellman_optimal_policy_density: lambda must be > 0");

  const Eigen::LLT<Mat> llt(ref_cov);
  if (llt.info() != Eigen::Success)
    throw NumericalError("bellman_optimal_policy_density: reference cov not SPD");
  const Mat L = llt.matrixL();

  std::vector<double> nodes, weights;
  gauss_hermite(d == 1 ? 160 : 64, &nodes, &weights);

  // E_ref[e^{-(Q - shift)/lambda}] with a stabilizing shift at the minimum
  // sampled Q value.
  std::vector<Vec> points;
  std::vector<double> wts, qvals;
  if (d == 1) {
    points.reserve(nodes.size());
    for (size_t a = 0; a < nodes.size(); ++a) {
      Vec p(1);
      p(0) = ref_mean(0) + std::sqrt(2.0) * L(0, 0) * nodes[a];
      points.push_back(p);
      wts.push_back(weights[a] / std::sqrt(M_PI));
    }
  } else {
    for (size_t a = 0; a < nodes.size(); ++a) {
      for (size_t b = 0; b < nodes.size(); ++b) {
        Vec xi(2);
        xi << nodes[a], nodes[b];
        points.push_back(ref_mean + std::sqrt(2.0) * (L * xi));
        wts.push_back(weights[a] * weights[b] / M_PI);
      }
    }
  }
  double shift = std::numeric_limits<double>::infinity();
  qvals.reserve(points.size());
  for (const auto& p : points) {
    qvals.push_back(q_fn(p));
    shift = std::min(shift, qvals.back());
  }
  shift = std::min(shift, q_fn(u));

  double norm = 0.0;
  for (size_t k = 0; k < points.size(); ++k)
    norm += wts[k] * std::exp(-(qvals[k] - shift) / lambda);

  const double log_num = -(q_fn(u) - shift) / lambda +
                         gaussian_log_density(u, ref_mean, ref_cov);
  return std::exp(log_num) / norm;
}

}  // namespace klgame
