#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "safeplan/analysis.hpp"
#include "safeplan/environments.hpp"
#include "safeplan/exact.hpp"
#include "safeplan/mdp.hpp"
#include "safeplan/mdp_io.hpp"
#include "safeplan/naive.hpp"
#include "safeplan/recursive.hpp"

namespace {

using namespace safeplan;

const char* bool_name(bool b) { return b ? "true" : "false"; }

struct EnvOptions {
  std::string env = "counter";
  double p = 0.7;
  double gamma = 0.95;
  int width = 4;
  int height = 3;
  double slip = 0.5;
  std::string slip_mode = "include";
  std::string start_cell = "0,0";
  std::string goal_cell = "3,0";
  std::string cliff_cells = "1,0;2,0";
};

Cell parse_cell(const std::string& text) {
  const std::size_t comma = text.find(',');
  if (comma == std::string::npos) throw std::invalid_argument("cell must be given as x,y: " + text);
  try {
    return Cell{std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1))};
  } catch (const std::exception&) {
    throw std::invalid_argument("cell must be given as x,y: " + text);
  }
}

std::vector<Cell> parse_cell_list(const std::string& text) {
  std::vector<Cell> cells;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ';')) {
    if (!item.empty()) cells.push_back(parse_cell(item));
  }
  return cells;
}

CliffworldParams cliff_params(const EnvOptions& env) {
  CliffworldParams params;
  params.width = env.width;
  params.height = env.height;
  params.slip = env.slip;
  params.gamma = env.gamma;
  params.start_cell = parse_cell(env.start_cell);
  params.goal_cell = parse_cell(env.goal_cell);
  params.cliff_cells = parse_cell_list(env.cliff_cells);
  params.slip_mode = env.slip_mode == "exclude" ? SlipMode::exclude : SlipMode::include;
  return params;
}

MdpSpec build_env(const EnvOptions& env) {
  if (env.env == "counter") return build_counter_mdp({env.p, env.gamma});
  return build_cliffworld(cliff_params(env));
}

StateId default_start(const EnvOptions& env, const MdpSpec& spec) {
  if (env.env == "counter") return spec.state_id("s1");
  return cliffworld_start_state(spec, cliff_params(env));
}

void add_env_options(CLI::App* cmd, EnvOptions& env) {
  cmd->add_option("--env", env.env, "environment: counter or cliff")
      ->check(CLI::IsMember({"counter", "cliff"}));
  cmd->add_option("--p", env.p, "counter risk parameter");
  cmd->add_option("--gamma", env.gamma, "discount factor");
  cmd->add_option("--width", env.width, "cliff grid width");
  cmd->add_option("--height", env.height, "cliff grid height");
  cmd->add_option("--slip", env.slip, "cliff slip probability");
  cmd->add_option("--slip-mode", env.slip_mode, "slip mass split: include or exclude the chosen direction")
      ->check(CLI::IsMember({"include", "exclude"}));
  cmd->add_option("--start-cell", env.start_cell, "cliff start cell x,y");
  cmd->add_option("--goal-cell", env.goal_cell, "cliff goal cell x,y");
  cmd->add_option("--cliff-cells", env.cliff_cells, "cliff cells x,y;x,y;...");
}

struct SolverOptions {
  std::string mode = "naive";
  int iterations = -1;
  int horizon = 15;
  std::string init_p = "zero";
  std::uint64_t seed = 0;
};

void add_solver_options(CLI::App* cmd, SolverOptions& opt, CLI::Option** horizon_opt = nullptr,
                        CLI::Option** init_opt = nullptr) {
  cmd->add_option("--mode", opt.mode, "solver: naive or recursive")
      ->check(CLI::IsMember({"naive", "recursive"}));
  cmd->add_option("--iterations", opt.iterations, "sweep count (naive) or outer iteration count (recursive)");
  CLI::Option* h = cmd->add_option("--horizon", opt.horizon, "reachability horizon (recursive only)");
  CLI::Option* i = cmd->add_option("--init-p", opt.init_p,
                                   "naive reachability init: zero, a constant in [0,1], or uniform");
  cmd->add_option("--seed", opt.seed, "seed for uniform initialization");
  if (horizon_opt) *horizon_opt = h;
  if (init_opt) *init_opt = i;
}

int resolved_iterations(const SolverOptions& opt) {
  if (opt.iterations > 0 || opt.iterations == 0) return opt.iterations;
  return opt.mode == "naive" ? 50 : 15;
}

NaiveInit resolved_init(const SolverOptions& opt) {
  NaiveInit init;
  if (opt.init_p == "zero") return init;
  if (opt.init_p == "uniform") {
    init.kind = NaiveInit::Kind::uniform;
    init.seed = opt.seed;
    return init;
  }
  init.kind = NaiveInit::Kind::constant;
  try {
    std::size_t used = 0;
    init.constant = std::stod(opt.init_p, &used);
    if (used != opt.init_p.size()) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw std::invalid_argument("--init-p must be zero, uniform, or a number: " + opt.init_p);
  }
  return init;
}

std::vector<double> parse_theta_grid(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ':')) parts.push_back(item);
  if (parts.size() != 3) throw std::invalid_argument("--thetas must be start:stop:step: " + text);
  double start = 0.0;
  double stop = 0.0;
  double step = 0.0;
  try {
    start = std::stod(parts[0]);
    stop = std::stod(parts[1]);
    step = std::stod(parts[2]);
  } catch (const std::exception&) {
    throw std::invalid_argument("--thetas must be start:stop:step: " + text);
  }
  if (!(step > 0.0) || !(start >= 0.0) || !(stop <= 1.0) || !(start <= stop)) {
    throw std::invalid_argument("--thetas must satisfy 0 <= start <= stop <= 1 with step > 0");
  }
  std::vector<double> grid;
  const long long count = static_cast<long long>((stop - start) / step + 1e-9);
  for (long long i = 0; i <= count; ++i) {
    const double v = start + static_cast<double>(i) * step;
    if (v < 1.0) grid.push_back(v);
  }
  return grid;
}

Policy uniform_named_policy(const MdpSpec& spec, const std::string& action_name) {
  Policy pi;
  pi.choice.resize(static_cast<std::size_t>(spec.state_count()));
  for (std::size_t s = 0; s < pi.choice.size(); ++s) {
    pi.choice[s] = spec.actions[s].front();
    if (action_name.empty()) continue;
    for (ActionId a : spec.actions[s]) {
      if (spec.action_names[static_cast<std::size_t>(a)] == action_name) {
        pi.choice[s] = a;
        break;
      }
    }
  }
  return pi;
}

std::string render_set(const MdpSpec& spec, const ActionMask& allowed) {
  std::string out;
  for (std::size_t s = 0; s < allowed.size(); ++s) {
    if (s > 0) out += " ";
    out += spec.state_names[s] + "={";
    bool first = true;
    for (std::size_t i = 0; i < allowed[s].size(); ++i) {
      if (!allowed[s][i]) continue;
      if (!first) out += ",";
      out += spec.action_names[static_cast<std::size_t>(spec.actions[s][i])];
      first = false;
    }
    out += "}";
  }
  return out;
}

std::string trace_policy_name(const EnvOptions& env, const MdpSpec& spec, const Policy& pi) {
  if (env.env == "counter") {
    return "pi_" + spec.action_names[static_cast<std::size_t>(pi.choice[0])];
  }
  return render_policy(spec, pi);
}

std::ostream& open_output(std::ofstream& file, const std::string& path) {
  if (path.empty()) return std::cout;
  file.open(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open output file: " + path);
  return file;
}

int run_env_dump(const EnvOptions& env, const std::string& out_path) {
  const MdpSpec spec = build_env(env);
  std::ofstream file;
  std::ostream& out = open_output(file, out_path);
  write_mdp_text(out, spec);
  return 0;
}

int run_counter_eval(const EnvOptions& env) {
  const ClosedFormCounter cf = closed_form_counter(env.p, env.gamma);
  const MdpSpec spec = build_counter_mdp({env.p, env.gamma});
  const Policy pi_l = uniform_named_policy(spec, "L");
  const Policy pi_r = uniform_named_policy(spec, "R");
  const ExactEvaluation ev_l = evaluate_policy(spec, pi_l);
  const ExactEvaluation ev_r = evaluate_policy(spec, pi_r);
  const std::size_t s1 = static_cast<std::size_t>(spec.state_id("s1"));
  const std::size_t li = static_cast<std::size_t>(spec.action_index(static_cast<StateId>(s1), spec.action_id("L")));
  const std::size_t ri = static_cast<std::size_t>(spec.action_index(static_cast<StateId>(s1), spec.action_id("R")));

  struct Row {
    const char* label;
    double closed;
    double solved;
  };
  const Row rows[] = {
      {"Q(s1,L;pi_L)", cf.q_ll, ev_l.q[s1][li]}, {"Q(s1,R;pi_L)", cf.q_rl, ev_l.q[s1][ri]},
      {"Q(s1,L;pi_R)", cf.q_lr, ev_r.q[s1][li]}, {"Q(s1,R;pi_R)", cf.q_rr, ev_r.q[s1][ri]},
      {"P(s1,L;pi_L)", cf.p_ll, ev_l.p_action[s1][li]}, {"P(s1,R;pi_L)", cf.p_rl, ev_l.p_action[s1][ri]},
      {"P(s1,L;pi_R)", cf.p_lr, ev_r.p_action[s1][li]}, {"P(s1,R;pi_R)", cf.p_rr, ev_r.p_action[s1][ri]},
  };
  double max_dev = 0.0;
  for (const Row& row : rows) {
    std::cout << row.label << " " << format_double_9(row.closed) << " " << format_double_9(row.solved)
              << "\n";
    max_dev = std::max(max_dev, std::abs(row.closed - row.solved));
  }
  std::cout << "max-deviation " << format_double_9(max_dev) << "\n";
  return 0;
}

int run_vi(const EnvOptions& env, const SolverOptions& solver, double theta) {
  const MdpSpec spec = build_env(env);
  const int iterations = resolved_iterations(solver);
  std::cout << "mode " << solver.mode << "\n";
  std::cout << "env " << env.env << "\n";
  std::cout << "theta " << format_double_9(theta) << "\n";
  std::cout << "iterations " << iterations << "\n";
  Policy policy;
  ActionTable q_est;
  ActionTable p_est;
  ActionMask final_set;
  if (solver.mode == "naive") {
    NaiveViResult r = naive_value_iteration(spec, theta, iterations, resolved_init(solver));
    std::cout << "converged " << bool_name(r.trace.converged) << "\n";
    std::cout << "oscillation-period ";
    if (r.trace.oscillation_period) {
      std::cout << *r.trace.oscillation_period << "\n";
    } else {
      std::cout << "none\n";
    }
    std::cout << "final-q-change " << format_double_9(r.trace.final_q_change) << "\n";
    std::cout << "final-p-change " << format_double_9(r.trace.final_p_change) << "\n";
    final_set = constrained_sets(spec, r.tables.p, theta).allowed;
    policy = std::move(r.policy);
    q_est = std::move(r.tables.q);
    p_est = std::move(r.tables.p);
  } else {
    RecursiveViResult r = recursive_value_iteration(spec, theta, iterations, solver.horizon);
    std::cout << "horizon " << solver.horizon << "\n";
    std::cout << "stabilization-horizon " << r.report.stabilization_horizon << "\n";
    std::cout << "converged " << bool_name(r.report.converged) << "\n";
    std::cout << "final-q-change " << format_double_9(r.report.final_qn_change) << "\n";
    std::cout << "final-p-change " << format_double_9(r.report.final_pn_change) << "\n";
    final_set = r.report.final_stage_sets.back();
    policy = std::move(r.policy);
    q_est = std::move(r.stack.q_hat.back());
    p_est = std::move(r.stack.p_hat.back());
  }
  std::cout << "policy " << render_policy(spec, policy) << "\n";
  std::cout << "final-set " << render_set(spec, final_set) << "\n";
  const ExactEvaluation ev = evaluate_policy(spec, policy);
  for (std::size_t s = 0; s < static_cast<std::size_t>(spec.state_count()); ++s) {
    const std::size_t li =
        static_cast<std::size_t>(spec.action_index(static_cast<StateId>(s), policy.choice[s]));
    std::cout << "value " << spec.state_names[s] << " q " << format_double_9(q_est[s][li]) << " p "
              << format_double_9(p_est[s][li]) << " q-true " << format_double_9(ev.v[s]) << " p-true "
              << format_double_9(ev.p[s]) << "\n";
  }
  return 0;
}

int run_pi_trace(const EnvOptions& env, const SolverOptions& solver, double theta,
                 const std::string& init_policy, int iterations) {
  const MdpSpec spec = build_env(env);
  const Policy initial = uniform_named_policy(spec, init_policy);
  const SolveTrace trace = solver.mode == "naive"
                               ? naive_policy_iteration(spec, theta, initial, iterations)
                               : recursive_policy_iteration(spec, theta, initial, iterations);
  const std::size_t start = static_cast<std::size_t>(default_start(env, spec));
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    const IterationSnapshot& snap = trace.iterations[i];
    std::cout << (i + 1) << "\t" << trace_policy_name(env, spec, snap.policy) << "\tconstraint:";
    for (std::size_t k = 0; k < spec.actions[start].size(); ++k) {
      if (k > 0) std::cout << ",";
      std::cout << spec.action_names[static_cast<std::size_t>(spec.actions[start][k])] << "="
                << bool_name(snap.constraint_ok[start][k] != 0);
    }
    std::cout << "\n";
  }
  return 0;
}

int run_sweep(const EnvOptions& env, const SolverOptions& solver, const std::string& thetas,
              const std::string& out_path, int jobs, const std::string& start_name) {
  const MdpSpec spec = build_env(env);
  SweepOptions options;
  options.mode = solver.mode == "naive" ? SolverMode::naive : SolverMode::recursive;
  options.iterations = resolved_iterations(solver);
  options.horizon = solver.horizon;
  options.init = resolved_init(solver);
  options.jobs = jobs;
  const StateId start = start_name.empty() ? default_start(env, spec) : spec.state_id(start_name);
  const std::vector<SweepRecord> records = sweep_theta(spec, options, parse_theta_grid(thetas), start);
  std::ofstream file;
  std::ostream& out = open_output(file, out_path);
  out << "threshold,P-values-true,P-values-est,V-values-true,V-values-est\n";
  for (const SweepRecord& rec : records) {
    if (!rec.error.empty()) throw std::runtime_error("sweep failed at theta=" + format_double(rec.theta) + ": " + rec.error);
    out << format_double_9(rec.theta) << "," << format_double_9(rec.p_true) << ","
        << format_double_9(rec.p_est) << "," << format_double_9(rec.v_true) << ","
        << format_double_9(rec.v_est) << "\n";
  }
  return 0;
}

int run_check(const EnvOptions& env, const SolverOptions& solver, double theta, double theta_prime,
              const std::string& props_text, const std::string& policy_name) {
  const MdpSpec spec = build_env(env);
  std::vector<std::string> props;
  std::stringstream in(props_text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item != "p1" && item != "p2" && item != "p3" && item != "p4") {
      throw std::invalid_argument("unknown property: " + item);
    }
    props.push_back(item);
  }

  Policy candidate;
  std::string candidate_source;
  if (!policy_name.empty()) {
    candidate = uniform_named_policy(spec, policy_name);
    candidate_source = "--policy " + policy_name;
  } else {
    const detail::SolverRun run = detail::run_solver(
        spec, solver.mode == "naive" ? SolverMode::naive : SolverMode::recursive, theta,
        resolved_iterations(solver), solver.horizon, resolved_init(solver));
    candidate = run.policy;
    candidate_source = std::string(solver.mode) + " solver at theta=" + format_double(theta) +
                       (run.converged ? "" : " (did not converge)");
  }

  PropertyReport combined;
  combined.header.push_back("candidate policy " + render_policy(spec, candidate) + " from " + candidate_source);
  for (const std::string& prop : props) {
    if (prop == "p1") {
      PropertyReport r = check_p1(spec, theta, candidate);
      combined.header.insert(combined.header.end(), r.header.begin(), r.header.end());
      combined.checks.insert(combined.checks.end(), r.checks.begin(), r.checks.end());
    } else if (prop == "p2") {
      PropertyReport r = check_p2(spec, theta, candidate);
      combined.header.insert(combined.header.end(), r.header.begin(), r.header.end());
      combined.checks.insert(combined.checks.end(), r.checks.begin(), r.checks.end());
    } else if (prop == "p3") {
      P3Config config;
      config.mode = solver.mode == "naive" ? SolverMode::naive : SolverMode::recursive;
      config.iterations = resolved_iterations(solver);
      config.horizon = solver.horizon;
      config.init = resolved_init(solver);
      PropertyReport r = check_p3(spec, {{theta, theta_prime}}, config);
      combined.header.insert(combined.header.end(), r.header.begin(), r.header.end());
      combined.checks.insert(combined.checks.end(), r.checks.begin(), r.checks.end());
    } else {
      const ExactEvaluation ev = evaluate_policy(spec, candidate);
      const P4Residual res = check_p4_residual(spec, theta, to_value_tables(ev), candidate);
      PropertyCheck check;
      check.property = "p4";
      check.status = res.policy_changed ? CheckStatus::fail : CheckStatus::pass;
      check.detail = res.policy_changed
                         ? "one backup changes the policy to " + render_policy(spec, res.induced) +
                               ", residual=" + format_double_9(res.residual)
                         : "fixed point, residual=" + format_double_9(res.residual);
      combined.checks.push_back(std::move(check));
    }
  }

  for (const std::string& line : combined.header) std::cout << "# " << line << "\n";
  for (const PropertyCheck& check : combined.checks) {
    std::cout << check.property << ": " << to_string(check.status) << " (" << check.detail << ")\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"finite-MDP planning with per-state reachability constraints"};
  app.set_config("--config", "", "read options from a key=value file");
  app.require_subcommand(1);

  EnvOptions dump_env;
  std::string dump_out;
  CLI::App* env_cmd = app.add_subcommand("env", "environment utilities");
  env_cmd->require_subcommand(1);
  CLI::App* dump_cmd = env_cmd->add_subcommand("dump", "write the selected environment in MDP text format");
  add_env_options(dump_cmd, dump_env);
  dump_cmd->add_option("--out", dump_out, "output file (default stdout)");

  EnvOptions eval_env;
  CLI::App* eval_cmd =
      app.add_subcommand("counter-eval", "compare closed-form counter values with the linear-system solution");
  eval_cmd->add_option("--p", eval_env.p, "counter risk parameter");
  eval_cmd->add_option("--gamma", eval_env.gamma, "discount factor");

  EnvOptions vi_env;
  SolverOptions vi_solver;
  double vi_theta = 0.85;
  CLI::Option* vi_horizon_opt = nullptr;
  CLI::Option* vi_init_opt = nullptr;
  CLI::App* vi_cmd = app.add_subcommand("vi", "run value iteration and print diagnostics");
  add_env_options(vi_cmd, vi_env);
  add_solver_options(vi_cmd, vi_solver, &vi_horizon_opt, &vi_init_opt);
  vi_cmd->add_option("--theta", vi_theta, "safety threshold");

  EnvOptions trace_env;
  SolverOptions trace_solver;
  double trace_theta = 0.85;
  std::string trace_init_policy;
  int trace_iterations = 5;
  CLI::App* trace_cmd = app.add_subcommand("pi-trace", "run policy iteration and print its iteration table");
  add_env_options(trace_cmd, trace_env);
  trace_cmd->add_option("--mode", trace_solver.mode, "solver: naive or recursive")
      ->check(CLI::IsMember({"naive", "recursive"}));
  trace_cmd->add_option("--theta", trace_theta, "safety threshold");
  trace_cmd->add_option("--init-policy", trace_init_policy,
                        "action name used everywhere in the initial policy (default: first action)");
  trace_cmd->add_option("--iterations", trace_iterations, "number of policy iteration rounds");

  EnvOptions sweep_env;
  SolverOptions sweep_solver;
  std::string sweep_thetas = "0:1:0.01";
  std::string sweep_out;
  std::string sweep_start;
  int sweep_jobs = 1;
  CLI::Option* sweep_horizon_opt = nullptr;
  CLI::Option* sweep_init_opt = nullptr;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "solve across a threshold grid and write CSV");
  add_env_options(sweep_cmd, sweep_env);
  add_solver_options(sweep_cmd, sweep_solver, &sweep_horizon_opt, &sweep_init_opt);
  sweep_cmd->add_option("--thetas", sweep_thetas, "threshold grid start:stop:step");
  sweep_cmd->add_option("--out", sweep_out, "output CSV file (default stdout)");
  sweep_cmd->add_option("--jobs", sweep_jobs, "number of concurrent solves");
  sweep_cmd->add_option("--start", sweep_start, "start state name (default: environment start)");

  EnvOptions check_env;
  SolverOptions check_solver;
  check_solver.mode = "recursive";
  double check_theta = 0.85;
  double check_theta_prime = 0.95;
  std::string check_props = "p1,p2,p3,p4";
  std::string check_policy;
  CLI::App* check_cmd = app.add_subcommand("check", "run property checks and print a report");
  add_env_options(check_cmd, check_env);
  add_solver_options(check_cmd, check_solver);
  check_cmd->add_option("--theta", check_theta, "safety threshold");
  check_cmd->add_option("--theta-prime", check_theta_prime, "higher threshold for the monotonicity pair");
  check_cmd->add_option("--props", check_props, "comma-separated subset of p1,p2,p3,p4")
      ->check([](const std::string& value) -> std::string {
        std::stringstream in(value);
        std::string item;
        while (std::getline(in, item, ',')) {
          if (item != "p1" && item != "p2" && item != "p3" && item != "p4") {
            return "unknown property: " + item;
          }
        }
        return std::string();
      });
  check_cmd->add_option("--policy", check_policy,
                        "action name used everywhere in the candidate policy (default: solver output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto reject_misuse = [&](const SolverOptions& solver, CLI::Option* horizon_opt,
                           CLI::Option* init_opt) -> std::optional<std::string> {
    if (solver.mode == "naive" && horizon_opt && horizon_opt->count() > 0) {
      return "--horizon requires --mode recursive";
    }
    if (solver.mode == "recursive" && init_opt && init_opt->count() > 0) {
      return "--init-p requires --mode naive";
    }
    return std::nullopt;
  };

  try {
    if (dump_cmd->parsed()) return run_env_dump(dump_env, dump_out);
    if (eval_cmd->parsed()) return run_counter_eval(eval_env);
    if (vi_cmd->parsed()) {
      if (auto msg = reject_misuse(vi_solver, vi_horizon_opt, vi_init_opt)) {
        std::cerr << "error: " << *msg << "\n";
        return 2;
      }
      return run_vi(vi_env, vi_solver, vi_theta);
    }
    if (trace_cmd->parsed()) {
      return run_pi_trace(trace_env, trace_solver, trace_theta, trace_init_policy, trace_iterations);
    }
    if (sweep_cmd->parsed()) {
      if (auto msg = reject_misuse(sweep_solver, sweep_horizon_opt, sweep_init_opt)) {
        std::cerr << "error: " << *msg << "\n";
        return 2;
      }
      return run_sweep(sweep_env, sweep_solver, sweep_thetas, sweep_out, sweep_jobs, sweep_start);
    }
    if (check_cmd->parsed()) {
      return run_check(check_env, check_solver, check_theta, check_theta_prime, check_props, check_policy);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
