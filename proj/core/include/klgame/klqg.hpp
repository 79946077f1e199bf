// Exact feedback Nash equilibrium of KL-regularized LQG games.
//
// Backward in time from Z_T = 0, each stage solves the coupled KL-regularized
// Riccati system; writing P~ = cov(ref)^-1, D^i = lam^i P~^i + R^ii + B^i'Z'B^i
// and summing j != i:
//   K:  D^i K^i + B^i'Z'^i sum_j B^j K^j = B^i'Z'^i A + lam^i P~^i Ktil^i
//   k:  D^i k^i + B^i'Z'^i sum_j B^j k^j = B^i'z'^i + B^i'Z'^i drift + r^ii
//                                          + lam^i P~^i ktil^i
//   cov: [(R^ii + B^i'Z'^i B^i)/lam^i + P~^i]^-1
// with the open-loop Gaussian reference mapped to Ktil = 0, ktil = -mu~.
// Value parameters update with F = A - sum_j B^j K^j, b = drift - sum_j B^j k^j:
//   Z^i = Q^i + sum_j K^j'R^ij K^j + F'Z'^i F + lam^i dK'P~^i dK
//   z^i = q^i + sum_j K^j'(R^ij k^j - r^ij) + F'(z'^i + Z'^i b)
//         + lam^i dK'P~^i dk,        dK = K^i - Ktil^i, dk = k^i - ktil^i.
// The dK/dk reference terms follow from expanding the KL quadratic
// (mu - mu~(x))'P~(mu - mu~(x)) at the solved policy; unilateral best-response
// checks pin these signs (see the Nash deviation tests).
#pragma once

#include "klgame/cost.hpp"
#include "klgame/dynamics.hpp"
#include "klgame/reference.hpp"
#include "klgame/types.hpp"

#include <functional>

namespace klgame {

// Per-player KL regularization weights; lambda[i] = 0 selects the
// deterministic LQ path for that player (zero policy covariance).
struct KLWeights {
  std::vector<double> lambda;

  void validate(int n_players) const;
};

// Time-varying affine Gaussian policy N(-K x - kappa, cov) per timestep.
// cov is the zero matrix for lambda = 0 (deterministic policy marker).
struct AffineGaussianPolicy {
  std::vector<Mat> K;
  std::vector<Vec> kappa;
  std::vector<Mat> cov;

  int horizon() const { return static_cast<int>(K.size()); }
};

// Quadratic value parameters per timestep, indices 0..T with Z[T] = z[T] = 0.
struct ValueQuadratic {
  std::vector<Mat> Z;
  std::vector<Vec> z;
};

struct KlqgSolution {
  std::vector<AffineGaussianPolicy> policies;  // per player
  std::vector<ValueQuadratic> values;          // per player
  double max_condition = 0.0;   // worst equilibrated block-system condition
  double max_asymmetry = 0.0;   // worst raw Z asymmetry before symmetrization
};

// Per-player per-stage reference in precision form. `informative == false`
// marks the maximum-entropy path: all precision terms are dropped.
struct StageRef {
  Mat precision;  // cov^-1
  Mat Ktil;
  Vec ktil;
  Mat cov;
  bool informative = true;

  static StageRef maxent(int control_dim, int state_dim);
  static StageRef from_gaussian(const Vec& mean, const Mat& cov, int state_dim);
  static StageRef from_feedback(const Mat& Ktil, const Vec& ktil, const Mat& cov);
};

struct StageSolve {
  std::vector<Mat> K, cov, Z;
  std::vector<Vec> kappa, z;
  double condition = 0.0;
  double asymmetry = 0.0;
};

// One backward step: solves the coupled stage system given successor value
// parameters. Throws SingularRiccatiError if the equilibrated block system
// has condition number beyond 1e12.
StageSolve solve_klqg_stage(const LinearGameStage& stage,
                            const std::vector<QuadraticStageCost>& costs,
                            const std::vector<StageRef>& refs,
                            const std::vector<double>& lambda,
                            const std::vector<Mat>& Z_next,
                            const std::vector<Vec>& z_next, int timestep);

// Full-horizon solves. `stages` has T entries; `costs[t][i]` is player i's
// stage cost at t; references provide one entry per timestep per player.
KlqgSolution solve_klqg(const std::vector<LinearGameStage>& stages,
                        const std::vector<std::vector<QuadraticStageCost>>& costs,
                        const std::vector<GaussianRef>& refs,
                        const KLWeights& lambda);

KlqgSolution solve_klqg_feedback(const std::vector<LinearGameStage>& stages,
                                 const std::vector<std::vector<QuadraticStageCost>>& costs,
                                 const std::vector<FeedbackGaussianRef>& refs,
                                 const KLWeights& lambda);

// Maximum-entropy game: the same recursion with every reference-precision
// term removed; policy covariance becomes lam^i (R^ii + B^i'Z'B^i)^-1.
KlqgSolution solve_maxent(const std::vector<LinearGameStage>& stages,
                          const std::vector<std::vector<QuadraticStageCost>>& costs,
                          const KLWeights& lambda);

// Generic entry point with explicit per-player per-stage references.
KlqgSolution solve_klqg_stagerefs(const std::vector<LinearGameStage>& stages,
                                  const std::vector<std::vector<QuadraticStageCost>>& costs,
                                  const std::vector<std::vector<StageRef>>& refs,
                                  const KLWeights& lambda);

// Evaluates the gradient of the per-player expected one-stage-plus-value
// expression with respect to the player's policy mean (and covariance when
// lambda > 0) at the solved policy, by central finite differences on the
// closed-form expectation. Returns the max abs gradient entry over a set of
// deterministic probe states.
double verify_stationarity(const KlqgSolution& solution,
                           const std::vector<LinearGameStage>& stages,
                           const std::vector<std::vector<QuadraticStageCost>>& costs,
                           const std::vector<std::vector<StageRef>>& refs,
                           const KLWeights& lambda, int t, int player);

std::vector<std::vector<StageRef>> stagerefs_from_gaussian(
    const std::vector<GaussianRef>& refs, int state_dim, int horizon);
std::vector<std::vector<StageRef>> stagerefs_from_feedback(
    const std::vector<FeedbackGaussianRef>& refs, int horizon);
std::vector<std::vector<StageRef>> stagerefs_maxent(const GameDims& dims);

// Lemma-1 minimizer density e^{-Q/lam} ref / normalization, with the
// normalizer computed by Gauss-Hermite quadrature. Test utility; supports
// 1-D and 2-D controls only.
double bellman_optimal_policy_density(const std::function<double(const Vec&)>& q_fn,
                                      const Vec& ref_mean, const Mat& ref_cov,
                                      double lambda, const Vec& u);

// Gauss-Hermite nodes/weights for integral of e^{-x^2} f(x).
void gauss_hermite(int order, std::vector<double>* nodes, std::vector<double>* weights);

}  // namespace klgame
