#include "klgame/types.hpp"

#include <random>

namespace klgame {

void GameDims::validate() const {
  if (n_players < 1) throw DimensionError("GameDims: n_players must be >= 1");
  if (state_dim < 1) throw DimensionError("GameDims: state_dim must be >= 1");
  if (static_cast<int>(control_dims.size()) != n_players)
    throw DimensionError("GameDims: control_dims size must equal n_players");
  for (int mi : control_dims)
    if (mi < 1) throw DimensionError("GameDims: every control dim must be >= 1");
  if (horizon < 1) throw DimensionError("GameDims: horizon must be >= 1");
  if (!(dt > 0.0)) throw DimensionError("GameDims: dt must be > 0");
}

void JointControl::check_dims(const GameDims& dims, const char* where) const {
  if (n_players() != dims.n_players)
    throw DimensionError(std::string(where) + ": control has wrong player count");
  for (int i = 0; i < n_players(); ++i)
    if (per_player[i].size() != dims.control_dims[i])
      throw DimensionError(std::string(where) + ": control dim mismatch for player " +
                           std::to_string(i));
}

void Trajectory::check_invariants(const GameDims& dims) const {
  if (static_cast<int>(states.size()) != dims.horizon + 1)
    throw DimensionError("Trajectory: need horizon+1 states");
  if (static_cast<int>(controls.size()) != dims.horizon)
    throw DimensionError("Trajectory: need horizon controls");
  for (const auto& x : states) check_state_dim(x, dims, "Trajectory");
  for (const auto& u : controls) u.check_dims(dims, "Trajectory");
}

void check_finite(const Vec& v, const char* where) {
  if (!v.allFinite())
    throw NumericalError(std::string(where) + ": non-finite value encountered");
}

void check_state_dim(const Vec& x, const GameDims& dims, const char* where) {
  if (x.size() != dims.state_dim)
    throw DimensionError(std::string(where) + ": state dim mismatch");
}

std::uint64_t split_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t state = base + 0x9e3779b97f4a7c15ull * (index + 1);
  std::uint64_t z = state;
  z = (z ^ (z >> 30u)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27u)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31u);
}

}  // namespace klgame
