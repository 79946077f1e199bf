// Command-line entry point: validate configs, run single solves, Monte Carlo
// batches, and the solver scaling benchmark.
//
// Exit codes: 0 success, 2 config/validation error, 3 solver failure, 4 I/O.

#include "klgame/config.hpp"
#include "klgame/sim.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace klgame;
using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;
constexpr int kExitIo = 4;

bool ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  return !ec;
}

int cmd_validate(const std::string& config_path) {
  try {
    parse_config_file(config_path);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  std::cout << "config ok\n";
  return kExitOk;
}

int cmd_solve(const std::string& config_path, const std::string& out_override,
              const std::string& method_override) {
  RunConfig cfg;
  try {
    cfg = parse_config_file(config_path);
    if (!method_override.empty()) cfg.method = method_override;
    cfg.validate();
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (!ensure_dir(cfg.out_dir)) {
    std::cerr << "cannot create output directory '" << cfg.out_dir << "'\n";
    return kExitIo;
  }

  const Method method = method_from_string(cfg.method);
  const ScenarioSpec& spec = cfg.scenario;
  const Vec x0 = spec.joint_initial_state();
  const int horizon = spec.planning_horizon;

  try {
    GameProblem problem = build_tollbooth_problem(spec, method, x0, horizon);

    json trace;
    Trajectory nominal;
    std::vector<AffineGaussianPolicy> policies;

    if (method == Method::MMKLGame) {
      MMConfig mm;
      mm.branching = spec.mm_branching;
      mm.branch_schedule = spec.mm_branch_schedule;
      mm.lql = spec.lql;
      MMSolution sol = solve_mm(problem, x0, problem.lambda, mm);
      trace["converged"] = sol.converged;
      trace["iterations"] = sol.iterations_used;
      trace["social_cost_history"] = sol.social_cost_history;

      // Emit the top-weight branch as the nominal trajectory.
      const auto leaves = sol.tree.leaves();
      int best_leaf = leaves.front();
      double best_w = -1.0;
      for (int leaf : leaves) {
        double w = 0.0;
        for (int idx : sol.tree.branch(leaf)) {
          for (double wi : sol.tree.nodes[idx].weight) w += wi;
        }
        if (w > best_w) {
          best_w = w;
          best_leaf = leaf;
        }
      }
      const auto path = sol.tree.branch(best_leaf);
      for (int idx : path) nominal.states.push_back(sol.tree.nodes[idx].state);
      for (size_t k = 1; k < path.size(); ++k)
        nominal.controls.push_back(sol.tree.nodes[path[k]].control);
    } else {
      LQLSolution sol = solve(problem, x0, {}, problem.lambda, spec.lql);
      trace["converged"] = sol.converged;
      trace["iterations"] = sol.iterations_used;
      trace["social_cost_history"] = sol.social_cost_history;
      nominal = sol.nominal;
      policies = sol.policies;
    }

    if (cfg.emit_trajectories) {
      std::ofstream csv(cfg.out_dir + "/trajectory.csv");
      if (!csv) return kExitIo;
      write_trajectory_csv(csv, nominal, spec.n_players);
    }

    json policy_json = json::array();
    for (size_t i = 0; i < policies.size(); ++i) {
      json pj;
      pj["player"] = i;
      json Ks = json::array(), kappas = json::array(), covs = json::array();
      for (int t = 0; t < policies[i].horizon(); ++t) {
        json K = json::array();
        for (int r = 0; r < policies[i].K[t].rows(); ++r) {
          json row = json::array();
          for (int c = 0; c < policies[i].K[t].cols(); ++c)
            row.push_back(policies[i].K[t](r, c));
          K.push_back(std::move(row));
        }
        Ks.push_back(std::move(K));
        json kap = json::array();
        for (int r = 0; r < policies[i].kappa[t].size(); ++r)
          kap.push_back(policies[i].kappa[t](r));
        kappas.push_back(std::move(kap));
        json cov = json::array();
        for (int r = 0; r < policies[i].cov[t].rows(); ++r) {
          json row = json::array();
          for (int c = 0; c < policies[i].cov[t].cols(); ++c)
            row.push_back(policies[i].cov[t](r, c));
          cov.push_back(std::move(row));
        }
        covs.push_back(std::move(cov));
      }
      pj["K"] = std::move(Ks);
      pj["kappa"] = std::move(kappas);
      pj["cov"] = std::move(covs);
      policy_json.push_back(std::move(pj));
    }
    {
      std::ofstream pol(cfg.out_dir + "/policies.json");
      if (!pol) return kExitIo;
      pol << policy_json.dump(2) << "\n";
    }
    {
      std::ofstream tr(cfg.out_dir + "/convergence.json");
      if (!tr) return kExitIo;
      tr << trace.dump(2) << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitOk;
}

int cmd_batch(const std::string& config_path, int n_trials, std::uint64_t seed,
              const std::string& out_override, const std::string& method_override) {
  RunConfig cfg;
  try {
    cfg = parse_config_file(config_path);
    if (!method_override.empty()) cfg.method = method_override;
    cfg.validate();
    if (n_trials < 1) throw ConfigError("batch: --trials must be >= 1");
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (!ensure_dir(cfg.out_dir)) {
    std::cerr << "cannot create output directory '" << cfg.out_dir << "'\n";
    return kExitIo;
  }

  // One row per method unless a single method was forced.
  std::vector<Method> methods;
  if (!method_override.empty()) {
    methods = {method_from_string(method_override)};
  } else {
    methods = {Method::ILQGames, Method::MaxEnt, Method::KLGame};
  }

  try {
    json table;
    table["n_trials"] = n_trials;
    table["seed"] = seed;
    json rows = json::array();

    std::ostringstream md;
    md << "| Method | CR | SR | Prog (m) | Cost |\n";
    md << "|---|---|---|---|---|\n";

    for (Method method : methods) {
      const BatchResult batch = run_batch(cfg.scenario, method, n_trials, seed);
      {
        std::ofstream bf(cfg.out_dir + "/batch_" + method_name(method) + ".json");
        if (!bf) return kExitIo;
        bf << batch_to_json(batch) << "\n";
      }
      json row;
      row["method"] = method_name(method);
      row["CR"] = {{"mean", batch.coordination.mean}, {"std", batch.coordination.stddev}};
      row["SR"] = {{"mean", batch.safety.mean}, {"std", batch.safety.stddev}};
      row["Prog"] = {{"mean", batch.progress.mean}, {"std", batch.progress.stddev}};
      row["Cost"] = {{"mean", batch.cost.mean}, {"std", batch.cost.stddev}};
      row["failed"] = batch.n_failed;
      rows.push_back(std::move(row));

      auto fmt = [](const MetricStats& s) {
        std::ostringstream os;
        os.precision(3);
        os << s.mean << " +/- " << s.stddev;
        return os.str();
      };
      md << "| " << method_name(method) << " | " << fmt(batch.coordination) << " | "
         << fmt(batch.safety) << " | " << fmt(batch.progress) << " | "
         << fmt(batch.cost) << " |\n";
      std::cout << method_name(method) << ": CR " << batch.coordination.mean << " SR "
                << batch.safety.mean << " Prog " << batch.progress.mean << " Cost "
                << batch.cost.mean << "\n";
    }
    table["rows"] = std::move(rows);
    {
      std::ofstream tf(cfg.out_dir + "/comparison.json");
      if (!tf) return kExitIo;
      tf << table.dump(2) << "\n";
    }
    {
      std::ofstream mf(cfg.out_dir + "/comparison.md");
      if (!mf) return kExitIo;
      mf << md.str();
    }
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitOk;
}

// Random LQ benchmark game: N players on a shared n-dimensional state.
GameProblem random_lq_problem(int n_players, int state_dim, int horizon, Rng& rng) {
  GameDims dims;
  dims.n_players = n_players;
  dims.state_dim = state_dim;
  dims.control_dims.assign(n_players, 2);
  dims.horizon = horizon;
  dims.dt = 0.1;

  Mat A = 0.3 * Mat::Random(state_dim, state_dim) +
          Mat::Identity(state_dim, state_dim) * 0.9;
  std::vector<Mat> B;
  for (int i = 0; i < n_players; ++i) B.push_back(0.5 * Mat::Random(state_dim, 2));

  GameProblem problem;
  problem.dynamics =
      std::make_shared<LinearDynamics>(dims, A, B, Vec::Zero(state_dim));
  for (int i = 0; i < n_players; ++i) {
    Mat Qi = Mat::Random(state_dim, state_dim);
    Qi = (Qi * Qi.transpose() / state_dim + Mat::Identity(state_dim, state_dim))
             .eval();
    std::vector<Mat> R(n_players, 0.1 * Mat::Identity(2, 2));
    R[i] = Mat::Identity(2, 2);
    std::vector<Vec> r(n_players, Vec::Zero(2));
    PlayerCost cost(dims, i);
    cost.add_term(std::make_shared<QuadraticGameCostTerm>(Qi, Vec::Zero(state_dim),
                                                          std::move(R), std::move(r)));
    problem.costs.push_back(std::move(cost));
    problem.refs.push_back(
        GaussianRef::constant(0.1 * rng.gaussian_vec(2), Mat::Identity(2, 2), horizon));
    problem.lambda.lambda.push_back(1.0);
  }
  (void)rng;
  return problem;
}

int cmd_bench_scaling(int max_players, const std::vector<int>& branches,
                      const std::string& out_dir, int repeats) {
  if (max_players < 2) {
    std::cerr << "bench-scaling: --max-players must be >= 2\n";
    return kExitConfig;
  }
  if (!ensure_dir(out_dir)) return kExitIo;

  std::ofstream csv(out_dir + "/scaling.csv");
  if (!csv) return kExitIo;
  csv << "sweep,value,mean_s,std_s,worst_s\n";
  csv.precision(17);

  const int kIterations = 15;
  const int kHorizon = 20;
  Rng rng(7);

  auto time_backward = [&](const GameProblem& problem, const Vec& x0, int branching,
                           const std::vector<double>& weights) {
    MMConfig mm;
    mm.branching = branching;
    mm.lql.max_iterations = kIterations;
    mm.lql.linesearch_max_halvings = 15;
    (void)weights;
    ScenarioTree tree = build_tree(problem, x0, mm);
    // Fixed-iteration budget: time mm_backward_pass only.
    const auto start = std::chrono::steady_clock::now();
    for (int it = 0; it < kIterations; ++it)
      mm_backward_pass(&tree, problem, problem.lambda);
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(stop - start).count() / kIterations;
  };

  auto emit = [&](const std::string& sweep, int value, std::vector<double>& times) {
    double mean = 0.0, worst = 0.0;
    for (double t : times) {
      mean += t;
      worst = std::max(worst, t);
    }
    mean /= times.size();
    double var = 0.0;
    for (double t : times) var += (t - mean) * (t - mean);
    const double sd = times.size() > 1 ? std::sqrt(var / (times.size() - 1)) : 0.0;
    csv << sweep << "," << value << "," << mean << "," << sd << "," << worst << "\n";
    std::cout << sweep << "=" << value << ": mean " << mean << " s, worst " << worst
              << " s\n";
  };

  try {
    // Player sweep at fixed state dimension, single branch.
    const int state_dim = 12;
    for (int N = 2; N <= max_players; ++N) {
      GameProblem problem = random_lq_problem(N, state_dim, kHorizon, rng);
      const Vec x0 = Vec::Ones(state_dim);
      std::vector<double> times;
      for (int rep = 0; rep < repeats; ++rep)
        times.push_back(time_backward(problem, x0, 1, {}));
      emit("players", N, times);
    }

    // Branch sweep at N = 2 with a mixture reference.
    for (int H : branches) {
      const int n2 = 16;
      GameProblem problem = random_lq_problem(2, n2, kHorizon, rng);
      const int modes = H;
      GMMRef gmm;
      for (int mode = 0; mode < modes; ++mode)
        gmm.modes.emplace_back(GaussianRef::constant(0.1 * rng.gaussian_vec(2),
                                                     Mat::Identity(2, 2), kHorizon));
      gmm.weights.assign(kHorizon, std::vector<double>(modes, 1.0 / modes));
      problem.refs[0] = gmm;
      const Vec x0 = Vec::Ones(n2);
      std::vector<double> times;
      for (int rep = 0; rep < repeats; ++rep)
        times.push_back(time_backward(problem, x0, H, {}));
      emit("branches", H, times);
    }
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KL-regularized dynamic game solver"};
  app.require_subcommand(1);

  std::string config_path, out_dir, method;
  int trials = 100;
  std::uint64_t seed = 0;

  auto* solve_cmd = app.add_subcommand("solve", "run one receding-horizon solve");
  solve_cmd->add_option("--config", config_path, "config JSON path")->required();
  solve_cmd->add_option("--out", out_dir, "output directory");
  solve_cmd->add_option("--method", method, "method override");

  auto* batch_cmd = app.add_subcommand("batch", "run Monte Carlo trial batches");
  batch_cmd->add_option("--config", config_path, "config JSON path")->required();
  batch_cmd->add_option("--out", out_dir, "output directory");
  batch_cmd->add_option("--trials", trials, "number of trials");
  batch_cmd->add_option("--seed", seed, "batch seed");
  batch_cmd->add_option("--method", method, "single method instead of all three");

  int max_players = 4;
  std::vector<int> branch_list = {1, 2, 4};
  int repeats = 20;
  auto* bench_cmd = app.add_subcommand("bench-scaling", "time solver scaling sweeps");
  bench_cmd->add_option("--max-players", max_players, "largest player count");
  bench_cmd->add_option("--branches", branch_list, "branch counts to sweep");
  bench_cmd->add_option("--out", out_dir, "output directory")->required();
  bench_cmd->add_option("--repeats", repeats, "measurement repeats");

  auto* validate_cmd = app.add_subcommand("validate-config", "check a config file");
  validate_cmd->add_option("--config", config_path, "config JSON path")->required();

  CLI11_PARSE(app, argc, argv);

  if (solve_cmd->parsed()) return cmd_solve(config_path, out_dir, method);
  if (batch_cmd->parsed()) return cmd_batch(config_path, trials, seed, out_dir, method);
  if (bench_cmd->parsed())
    return cmd_bench_scaling(max_players, branch_list, out_dir, repeats);
  if (validate_cmd->parsed()) return cmd_validate(config_path);
  return kExitConfig;
}
