// Foundational value types shared by all solver modules: game dimensions,
// joint state/control containers, trajectories, and the error hierarchy.
//
// Conventions used throughout the library:
//  - the joint state is a dense double vector of length `state_dim`;
//  - player i's control is a dense double vector of length `control_dims[i]`;
//  - a trajectory over horizon T holds T+1 states and T controls.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace klgame {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

struct SingularRiccatiError : std::runtime_error {
  SingularRiccatiError(const std::string& what, int t)
      : std::runtime_error(what + " (timestep " + std::to_string(t) + ")"),
        timestep(t) {}
  int timestep;
};

struct SingularLaplaceError : std::runtime_error {
  SingularLaplaceError(const std::string& what, int t)
      : std::runtime_error(what + " (timestep " + std::to_string(t) + ")"),
        timestep(t) {}
  int timestep;
};

struct UnsupportedError : std::runtime_error {
  explicit UnsupportedError(const std::string& what) : std::runtime_error(what) {}
};

struct LineSearchFailure : std::runtime_error {
  explicit LineSearchFailure(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Static shape of a game: number of players, joint state dimension, per-player
// control dimensions, horizon length (number of control steps) and step size.
struct GameDims {
  int n_players = 0;
  int state_dim = 0;
  std::vector<int> control_dims;
  int horizon = 0;
  double dt = 0.1;

  void validate() const;

  int total_control_dim() const {
    return std::accumulate(control_dims.begin(), control_dims.end(), 0);
  }

  // Offset of player i's block in the stacked control vector.
  int control_offset(int player) const {
    int off = 0;
    for (int i = 0; i < player; ++i) off += control_dims[i];
    return off;
  }
};

// Per-player control vectors for one timestep.
struct JointControl {
  std::vector<Vec> per_player;

  JointControl() = default;
  explicit JointControl(const GameDims& dims) {
    per_player.reserve(dims.control_dims.size());
    for (int mi : dims.control_dims) per_player.emplace_back(Vec::Zero(mi));
  }

  int n_players() const { return static_cast<int>(per_player.size()); }

  Vec stacked() const {
    int total = 0;
    for (const auto& u : per_player) total += static_cast<int>(u.size());
    Vec out(total);
    int off = 0;
    for (const auto& u : per_player) {
      out.segment(off, u.size()) = u;
      off += static_cast<int>(u.size());
    }
    return out;
  }

  bool all_finite() const {
    for (const auto& u : per_player)
      if (!u.allFinite()) return false;
    return true;
  }

  void check_dims(const GameDims& dims, const char* where) const;
};

// Nominal trajectory: states[t] for t in [0, T], controls[t] for t in [0, T).
struct Trajectory {
  std::vector<Vec> states;
  std::vector<JointControl> controls;

  int horizon() const { return static_cast<int>(controls.size()); }
  void check_invariants(const GameDims& dims) const;
};

void check_finite(const Vec& v, const char* where);
void check_state_dim(const Vec& x, const GameDims& dims, const char* where);

// Deterministic RNG used across the library. Gaussian draws construct the
// distribution per call so the stream depends only on the engine state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double gaussian() { return std::normal_distribution<double>{}(engine_); }
  double uniform() {
    return std::uniform_real_distribution<double>{0.0, 1.0}(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }

  Vec gaussian_vec(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = gaussian();
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// splitmix64; used to derive independent per-trial seeds from a batch seed.
std::uint64_t split_seed(std::uint64_t base, std::uint64_t index);

}  // namespace klgame
