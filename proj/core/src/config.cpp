#include "klgame/config.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace klgame {

using nlohmann::json;

namespace {

[[noreturn]] void missing(const std::string& field) {
  throw ConfigError("config: missing required field '" + field + "'");
}

const json& require(const json& j, const std::string& field) {
  if (!j.contains(field)) missing(field);
  return j.at(field);
}

double require_number(const json& j, const std::string& field) {
  const json& v = require(j, field);
  if (!v.is_number()) throw ConfigError("config: field '" + field + "' must be a number");
  return v.get<double>();
}

Vec vec_from(const json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError("config: field '" + field + "' must be an array");
  Vec v(j.size());
  for (size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number())
      throw ConfigError("config: field '" + field + "' must hold numbers");
    v(k) = j[k].get<double>();
  }
  return v;
}

json vec_to(const Vec& v) {
  json out = json::array();
  for (int k = 0; k < v.size(); ++k) out.push_back(v(k));
  return out;
}

TollboothCostConfig cost_from(const json& j) {
  TollboothCostConfig c;
  if (j.contains("lane_centers")) {
    c.lane_centers.clear();
    for (const auto& v : j.at("lane_centers")) c.lane_centers.push_back(v.get<double>());
  }
  auto get = [&](const char* name, double& slot) {
    if (j.contains(name)) slot = j.at(name).get<double>();
  };
  get("lane_weight", c.lane_weight);
  get("lane_margin", c.lane_margin);
  get("lane_smoothing", c.lane_smoothing);
  get("coordination_weight", c.coordination_weight);
  get("coordination_sigma", c.coordination_sigma);
  get("collision_weight", c.collision_weight);
  get("collision_radius", c.collision_radius);
  get("boundary_weight", c.boundary_weight);
  get("road_half_width", c.road_half_width);
  get("boundary_margin", c.boundary_margin);
  get("control_weight_accel", c.control_weight_accel);
  get("control_weight_yaw", c.control_weight_yaw);
  get("speed_weight", c.speed_weight);
  get("target_speed", c.target_speed);
  get("heading_weight", c.heading_weight);
  get("preference_weight", c.preference_weight);
  if (j.contains("preferred_lane")) c.preferred_lane = j.at("preferred_lane").get<int>();
  return c;
}

json cost_to(const TollboothCostConfig& c) {
  json j;
  j["lane_centers"] = c.lane_centers;
  j["lane_weight"] = c.lane_weight;
  j["lane_margin"] = c.lane_margin;
  j["lane_smoothing"] = c.lane_smoothing;
  j["coordination_weight"] = c.coordination_weight;
  j["coordination_sigma"] = c.coordination_sigma;
  j["collision_weight"] = c.collision_weight;
  j["collision_radius"] = c.collision_radius;
  j["boundary_weight"] = c.boundary_weight;
  j["road_half_width"] = c.road_half_width;
  j["boundary_margin"] = c.boundary_margin;
  j["control_weight_accel"] = c.control_weight_accel;
  j["control_weight_yaw"] = c.control_weight_yaw;
  j["speed_weight"] = c.speed_weight;
  j["target_speed"] = c.target_speed;
  j["heading_weight"] = c.heading_weight;
  j["preferred_lane"] = c.preferred_lane;
  j["preference_weight"] = c.preference_weight;
  return j;
}

LaneGuidanceConfig guidance_from(const json& j) {
  LaneGuidanceConfig g;
  if (j.contains("target_lane")) g.target_lane = j.at("target_lane").get<int>();
  auto get = [&](const char* name, double& slot) {
    if (j.contains(name)) slot = j.at(name).get<double>();
  };
  get("accel", g.accel);
  get("lateral_gain", g.lateral_gain);
  get("heading_gain", g.heading_gain);
  get("max_heading", g.max_heading);
  get("max_yaw_rate", g.max_yaw_rate);
  get("cov_accel", g.cov_accel);
  get("cov_yaw", g.cov_yaw);
  return g;
}

json guidance_to(const LaneGuidanceConfig& g) {
  json j;
  j["target_lane"] = g.target_lane;
  j["accel"] = g.accel;
  j["lateral_gain"] = g.lateral_gain;
  j["heading_gain"] = g.heading_gain;
  j["max_heading"] = g.max_heading;
  j["max_yaw_rate"] = g.max_yaw_rate;
  j["cov_accel"] = g.cov_accel;
  j["cov_yaw"] = g.cov_yaw;
  return j;
}

ReferenceSpec ref_from(const json& j) {
  ReferenceSpec r;
  r.type = require(j, "type").get<std::string>();
  if (r.type == "gaussian") {
    r.gaussian_mean = vec_from(require(j, "mean"), "reference.mean");
    r.gaussian_cov_diag = vec_from(require(j, "cov_diag"), "reference.cov_diag");
  } else if (r.type == "lane_guidance") {
    r.guidance = guidance_from(j.contains("guidance") ? j.at("guidance") : json::object());
  } else if (r.type == "gmm_lanes") {
    for (const auto& m : require(j, "modes")) r.modes.push_back(guidance_from(m));
    for (const auto& w : require(j, "weights")) r.mode_weights.push_back(w.get<double>());
  }
  return r;
}

json ref_to(const ReferenceSpec& r) {
  json j;
  j["type"] = r.type;
  if (r.type == "gaussian") {
    j["mean"] = vec_to(r.gaussian_mean);
    j["cov_diag"] = vec_to(r.gaussian_cov_diag);
  } else if (r.type == "lane_guidance") {
    j["guidance"] = guidance_to(r.guidance);
  } else if (r.type == "gmm_lanes") {
    json modes = json::array();
    for (const auto& m : r.modes) modes.push_back(guidance_to(m));
    j["modes"] = std::move(modes);
    j["weights"] = r.mode_weights;
  }
  return j;
}

ScenarioSpec scenario_from(const json& j) {
  ScenarioSpec s;
  s.n_players = static_cast<int>(require_number(j, "n_players"));
  s.dt = require_number(j, "dt");

  s.initial_states.clear();
  for (const auto& row : require(j, "initial_states"))
    s.initial_states.push_back(vec_from(row, "initial_states"));

  const json& players = require(j, "players");
  if (!players.is_array() || static_cast<int>(players.size()) != s.n_players)
    throw ConfigError("config: field 'players' must list n_players entries");
  s.costs.clear();
  s.lambda.clear();
  s.refs.clear();
  for (const auto& p : players) {
    s.costs.push_back(cost_from(p.contains("cost") ? p.at("cost") : json::object()));
    s.lambda.push_back(require_number(p, "lambda"));
    s.refs.push_back(ref_from(require(p, "reference")));
  }

  s.planning_horizon = static_cast<int>(require_number(j, "planning_horizon"));
  s.sim_length = static_cast<int>(require_number(j, "sim_length"));
  if (j.contains("replan_interval"))
    s.replan_interval = j.at("replan_interval").get<int>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("sampled_execution"))
    s.sampled_execution = j.at("sampled_execution").get<bool>();

  if (j.contains("lql")) {
    const json& l = j.at("lql");
    if (l.contains("max_iterations")) s.lql.max_iterations = l.at("max_iterations").get<int>();
    if (l.contains("trajectory_tolerance"))
      s.lql.trajectory_tolerance = l.at("trajectory_tolerance").get<double>();
    if (l.contains("cost_tolerance"))
      s.lql.cost_tolerance = l.at("cost_tolerance").get<double>();
    if (l.contains("linesearch_max_halvings"))
      s.lql.linesearch_max_halvings = l.at("linesearch_max_halvings").get<int>();
    if (l.contains("initial_step")) s.lql.initial_step = l.at("initial_step").get<double>();
    if (l.contains("kl_in_social_cost"))
      s.lql.kl_in_social_cost = l.at("kl_in_social_cost").get<bool>();
  }
  if (j.contains("mm")) {
    const json& m = j.at("mm");
    if (m.contains("branching")) s.mm_branching = m.at("branching").get<int>();
    if (m.contains("branch_schedule")) {
      s.mm_branch_schedule.clear();
      for (const auto& t : m.at("branch_schedule"))
        s.mm_branch_schedule.push_back(t.get<int>());
    }
  }
  return s;
}

json scenario_to(const ScenarioSpec& s) {
  json j;
  j["n_players"] = s.n_players;
  j["dt"] = s.dt;
  json inits = json::array();
  for (const auto& x : s.initial_states) inits.push_back(vec_to(x));
  j["initial_states"] = std::move(inits);

  json players = json::array();
  for (int i = 0; i < s.n_players; ++i) {
    json p;
    p["cost"] = cost_to(s.costs[i]);
    p["lambda"] = s.lambda[i];
    p["reference"] = ref_to(s.refs[i]);
    players.push_back(std::move(p));
  }
  j["players"] = std::move(players);

  j["planning_horizon"] = s.planning_horizon;
  j["sim_length"] = s.sim_length;
  j["replan_interval"] = s.replan_interval;
  j["seed"] = s.seed;
  j["sampled_execution"] = s.sampled_execution;

  j["lql"] = json{{"max_iterations", s.lql.max_iterations},
                  {"trajectory_tolerance", s.lql.trajectory_tolerance},
                  {"cost_tolerance", s.lql.cost_tolerance},
                  {"linesearch_max_halvings", s.lql.linesearch_max_halvings},
                  {"initial_step", s.lql.initial_step},
                  {"kl_in_social_cost", s.lql.kl_in_social_cost}};
  j["mm"] = json{{"branching", s.mm_branching},
                 {"branch_schedule", s.mm_branch_schedule}};
  return j;
}

}  // namespace

void RunConfig::validate() const {
  if (version != 1) throw ConfigError("config: unsupported schema version");
  method_from_string(method);
  scenario.validate();

  // The exact solver requires strictly positive own-control curvature.
  for (const auto& c : scenario.costs)
    if (!(c.control_weight_accel > 0.0) || !(c.control_weight_yaw > 0.0))
      throw ConfigError(
          "config: control effort weights must be > 0 (own-control cost "
          "block must be positive definite)");
}

RunConfig parse_config_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: JSON parse error: ") + e.what());
  }

  RunConfig cfg;
  cfg.version = static_cast<int>(require_number(j, "version"));
  cfg.scenario = scenario_from(require(j, "scenario"));
  cfg.method = require(j, "method").get<std::string>();
  if (j.contains("output")) {
    const json& o = j.at("output");
    if (o.contains("directory")) cfg.out_dir = o.at("directory").get<std::string>();
    if (o.contains("trajectories"))
      cfg.emit_trajectories = o.at("trajectories").get<bool>();
    if (o.contains("stats")) cfg.emit_stats = o.at("stats").get<bool>();
    if (o.contains("solver_trace"))
      cfg.emit_solver_trace = o.at("solver_trace").get<bool>();
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_string(buf.str());
}

std::string serialize_config(const RunConfig& config) {
  json j;
  j["version"] = config.version;
  j["scenario"] = scenario_to(config.scenario);
  j["method"] = config.method;
  j["output"] = json{{"directory", config.out_dir},
                     {"trajectories", config.emit_trajectories},
                     {"stats", config.emit_stats},
                     {"solver_trace", config.emit_solver_trace}};
  return j.dump(2);
}

bool config_equivalent(const RunConfig& a, const RunConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

}  // namespace klgame
