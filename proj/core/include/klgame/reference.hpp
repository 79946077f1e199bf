// Reference-policy representations and the fits that convert arbitrary
// stochastic policies into solver-consumable Gaussians: open-loop Gaussian,
// state-feedback Gaussian, Gaussian mixtures, the Laplace approximation, and
// the sample-then-track feedback fit.
#pragma once

#include "klgame/dynamics.hpp"
#include "klgame/types.hpp"

#include <memory>
#include <variant>

namespace klgame {

// Covariance eigenvalue floor applied by every fit.
inline constexpr double kCovFloor = 1e-9;

// Open-loop Gaussian reference: one (mean, cov) per timestep.
struct GaussianRef {
  std::vector<Vec> mean;
  std::vector<Mat> cov;

  int horizon() const { return static_cast<int>(mean.size()); }
  void check_invariants() const;

  static GaussianRef constant(const Vec& mean, const Mat& cov, int horizon);
};

// State-feedback Gaussian reference with mean mu(x) = -K x - kappa.
struct FeedbackGaussianRef {
  std::vector<Mat> K;
  std::vector<Vec> kappa;
  std::vector<Mat> cov;

  int horizon() const { return static_cast<int>(K.size()); }
  Vec mean_at(const Vec& x, int t) const { return -(K[t] * x) - kappa[t]; }
  void check_invariants() const;

  static FeedbackGaussianRef open_loop(const GaussianRef& ref, int state_dim);
};

using RefMode = std::variant<GaussianRef, FeedbackGaussianRef>;

// Mixture reference: per-mode components plus per-timestep mode weights.
struct GMMRef {
  std::vector<RefMode> modes;
  std::vector<std::vector<double>> weights;  // [t][mode]

  int n_modes() const { return static_cast<int>(modes.size()); }
  int horizon() const { return static_cast<int>(weights.size()); }
  void check_invariants() const;

  static std::vector<double> normalized(std::vector<double> w);
};

// A general stochastic per-player policy: density and sampling access.
class StochasticPolicy {
 public:
  virtual ~StochasticPolicy() = default;
  virtual int control_dim() const = 0;
  virtual double log_density(const Vec& u, const Vec& x, int t) const = 0;
  virtual Vec sample(const Vec& x, int t, Rng& rng) const = 0;
};

class GaussianStochasticPolicy final : public StochasticPolicy {
 public:
  explicit GaussianStochasticPolicy(GaussianRef ref);

  int control_dim() const override { return static_cast<int>(ref_.mean[0].size()); }
  double log_density(const Vec& u, const Vec& x, int t) const override;
  Vec sample(const Vec& x, int t, Rng& rng) const override;

 private:
  GaussianRef ref_;
};

class FeedbackStochasticPolicy final : public StochasticPolicy {
 public:
  explicit FeedbackStochasticPolicy(FeedbackGaussianRef ref);

  int control_dim() const override { return static_cast<int>(ref_.kappa[0].size()); }
  double log_density(const Vec& u, const Vec& x, int t) const override;
  Vec sample(const Vec& x, int t, Rng& rng) const override;

 private:
  FeedbackGaussianRef ref_;
};

class GMMStochasticPolicy final : public StochasticPolicy {
 public:
  explicit GMMStochasticPolicy(GMMRef ref);

  int control_dim() const override;
  double log_density(const Vec& u, const Vec& x, int t) const override;
  Vec sample(const Vec& x, int t, Rng& rng) const override;

 private:
  GMMRef ref_;
};

// ---- densities and divergences ---------------------------------------------

double gaussian_log_density(const Vec& u, const Vec& mean, const Mat& cov);

// log density of a reference mode at (u, x, t).
double log_density(const RefMode& ref, const Vec& u, const Vec& x, int t);
double log_density(const GMMRef& ref, const Vec& u, const Vec& x, int t);

// Closed-form KL(N(p_mean, p_cov) || N(q_mean, q_cov)); both covariances SPD.
double gaussian_kl(const Vec& p_mean, const Mat& p_cov, const Vec& q_mean,
                   const Mat& q_cov);

// Clamp eigenvalues of a symmetric matrix to at least `floor` (SPD repair).
Mat spd_floor(const Mat& sym, double floor);

// ---- fits -------------------------------------------------------------------

struct LaplaceOptions {
  int max_newton_steps = 50;
  double grad_tolerance = 1e-8;
};

// Gaussian fit N(mode, -[hess log pi]^-1) per timestep; the mode search is a
// Newton ascent on log pi(u | xbar_t) initialized at ubar_t so the fit tracks
// the nominal branch of a multi-modal policy.
GaussianRef laplace_fit(const StochasticPolicy& policy, const Trajectory& nominal,
                        int player, const LaplaceOptions& opts = {});

// Single-point Laplace fit at state x, ascent initialized from u_init.
void laplace_fit_point(const StochasticPolicy& policy, const Vec& x, const Vec& u_init,
                       int t, const LaplaceOptions& opts, Vec* mean, Mat* cov);

struct FeedbackFitOptions {
  double tracking_weight = 1.0;
  double control_deviation_weight = 1e-3;
};

// Samples the policy along the nominal, then solves a single-player tracking
// LQR through the linearized dynamics for a time-varying feedback law.
FeedbackGaussianRef feedback_fit(const StochasticPolicy& policy,
                                 const Trajectory& nominal, int player,
                                 int n_samples, const Dynamics& dynamics, Rng& rng,
                                 const FeedbackFitOptions& opts = {});

// ---- problem-level reference selector ---------------------------------------

// Maximum-entropy marker: the solver drops all reference-precision terms,
// recovering the entropic cost equilibrium.
struct MaxEntRef {};

using ReferencePolicy =
    std::variant<std::monostate, MaxEntRef, GaussianRef, FeedbackGaussianRef,
                 GMMRef, std::shared_ptr<const StochasticPolicy>>;

}  // namespace klgame
