// Versioned JSON run configuration shared by the CLI and tests: scenario
// parameters, method selection, and output switches. Parse errors carry the
// offending field name.
#pragma once

#include "klgame/sim.hpp"

#include <string>

namespace klgame {

struct RunConfig {
  int version = 1;
  ScenarioSpec scenario;
  std::string method = "klgame";
  std::string out_dir = "out";
  bool emit_trajectories = true;
  bool emit_stats = true;
  bool emit_solver_trace = false;

  void validate() const;
};

// Parses and validates; throws ConfigError naming the missing/invalid field.
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_string(const std::string& text);

std::string serialize_config(const RunConfig& config);

// Field-by-field semantic equality after normalization (round-trip check).
bool config_equivalent(const RunConfig& a, const RunConfig& b);

}  // namespace klgame
