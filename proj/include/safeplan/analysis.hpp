#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "safeplan/exact.hpp"
#include "safeplan/mdp.hpp"
#include "safeplan/mdp_io.hpp"
#include "safeplan/naive.hpp"
#include "safeplan/recursive.hpp"

namespace safeplan {

enum class SolverMode { naive, recursive };

inline const char* to_string(SolverMode mode) {
  return mode == SolverMode::naive ? "naive" : "recursive";
}

/// One row of a threshold sweep. The estimated pair is the solver's own
/// final table entry at the start state under its returned policy; the true
/// pair re-evaluates that policy exactly. A violation is a run the solver
/// believes safe while the exact reachability exceeds the threshold.
struct SweepRecord {
  double theta = 0.0;
  double p_true = std::numeric_limits<double>::quiet_NaN();
  double p_est = std::numeric_limits<double>::quiet_NaN();
  double v_true = std::numeric_limits<double>::quiet_NaN();
  double v_est = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  bool violation = false;
  std::string error;
};

struct SweepOptions {
  SolverMode mode = SolverMode::naive;
  int iterations = 50;
  int horizon = 15;
  NaiveInit init;
  int jobs = 1;
};

inline std::string render_policy(const MdpSpec& spec, const Policy& pi) {
  std::string out = "[";
  for (std::size_t s = 0; s < pi.choice.size(); ++s) {
    if (s > 0) out += ",";
    out += spec.action_names[static_cast<std::size_t>(pi.choice[s])];
  }
  out += "]";
  return out;
}

namespace detail {

struct SolverRun {
  Policy policy;
  bool converged = false;
  ActionTable q_est;
  ActionTable p_est;
};

inline SolverRun run_solver(const MdpSpec& spec, SolverMode mode, double theta, int iterations,
                            int horizon, const NaiveInit& init) {
  SolverRun run;
  if (mode == SolverMode::naive) {
    NaiveViResult r = naive_value_iteration(spec, theta, iterations, init);
    run.policy = std::move(r.policy);
    run.converged = r.trace.converged;
    run.q_est = std::move(r.tables.q);
    run.p_est = std::move(r.tables.p);
  } else {
    RecursiveViResult r = recursive_value_iteration(spec, theta, iterations, horizon);
    run.policy = std::move(r.policy);
    run.converged = r.report.converged;
    run.q_est = std::move(r.stack.q_hat.back());
    run.p_est = std::move(r.stack.p_hat.back());
  }
  return run;
}

inline SweepRecord sweep_one(const MdpSpec& spec, const SweepOptions& options, double theta,
                             StateId start) {
  SweepRecord rec;
  rec.theta = theta;
  try {
    const SolverRun run =
        run_solver(spec, options.mode, theta, options.iterations, options.horizon, options.init);
    const std::size_t s0 = static_cast<std::size_t>(start);
    const std::size_t li =
        static_cast<std::size_t>(spec.action_index(start, run.policy.choice[s0]));
    rec.p_est = run.p_est[s0][li];
    rec.v_est = run.q_est[s0][li];
    rec.converged = run.converged;
    const ExactEvaluation ev = evaluate_policy(spec, run.policy);
    rec.p_true = ev.p[s0];
    rec.v_true = ev.v[s0];
    rec.violation = rec.p_est <= theta && theta < rec.p_true;
  } catch (const std::exception& ex) {
    rec.error = ex.what();
  }
  return rec;
}

}  // namespace detail

/// Runs one independent solve per threshold and compares the solver's belief
/// about the start state with an exact re-evaluation of the returned policy.
/// Per-threshold failures are captured in the record's error field; rows come
/// back in threshold order regardless of how many worker threads ran them.
inline std::vector<SweepRecord> sweep_theta(const MdpSpec& spec, const SweepOptions& options,
                                            const std::vector<double>& thetas, StateId start) {
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    if (!(thetas[i] >= 0.0 && thetas[i] < 1.0)) {
      throw std::invalid_argument("sweep_theta: thresholds must lie in [0,1)");
    }
    if (i > 0 && thetas[i] < thetas[i - 1]) {
      throw std::invalid_argument("sweep_theta: thresholds must be ascending");
    }
  }
  if (start < 0 || start >= spec.state_count() || spec.is_terminal(start)) {
    throw std::invalid_argument("sweep_theta: start state must be a valid non-terminal state");
  }

  std::vector<SweepRecord> records(thetas.size());
  const std::size_t workers =
      static_cast<std::size_t>(std::max(1, std::min<int>(options.jobs, static_cast<int>(thetas.size()))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < thetas.size(); ++i) {
      records[i] = detail::sweep_one(spec, options, thetas[i], start);
    }
    return records;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < thetas.size(); i += workers) {
        records[i] = detail::sweep_one(spec, options, thetas[i], start);
      }
    });
  }
  for (std::thread& t : pool) t.join();
  return records;
}

enum class CheckStatus { pass, fail, vacuous_pass, not_checked, not_evaluable };

inline const char* to_string(CheckStatus status) {
  switch (status) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    case CheckStatus::vacuous_pass: return "vacuous-pass";
    case CheckStatus::not_checked: return "not-checked";
    default: return "not-evaluable";
  }
}

struct PropertyCheck {
  std::string property;
  CheckStatus status = CheckStatus::not_checked;
  std::string detail;
};

struct PropertyReport {
  std::vector<std::string> header;
  std::vector<PropertyCheck> checks;
};

namespace detail {

constexpr double kCompareSlack = 1e-12;
constexpr std::uint64_t kEnumerationCap = 1000000;

inline std::vector<char> safe_mask(const std::vector<double>& p, double theta) {
  std::vector<char> safe(p.size());
  for (std::size_t s = 0; s < p.size(); ++s) safe[s] = p[s] <= theta ? 1 : 0;
  return safe;
}

inline std::string cap_detail(const MdpSpec& spec, std::uint64_t cap) {
  return "policy space exceeds cap: " + std::to_string(policy_space_size(spec)) + " policies, cap " +
         std::to_string(cap);
}

}  // namespace detail

/// Checks the candidate against every deterministic policy: over the safe
/// region, any policy that is at least as safe at a state must not be worth
/// more there; over the unsafe region, any policy worth at least as much
/// must not be safer. Also verifies that at each safe state the candidate's
/// action maximizes its own exact action-values among the actions no riskier
/// than the candidate itself. Implications with a false premise pass; a
/// check whose premise never held anywhere is reported vacuous.
inline PropertyReport check_p1(const MdpSpec& spec, double theta, const Policy& candidate,
                               std::uint64_t cap = detail::kEnumerationCap) {
  if (!(theta >= 0.0 && theta < 1.0)) throw std::invalid_argument("check_p1: theta must lie in [0,1)");
  PropertyReport report;
  report.header.push_back(
      "p1 is checked for the supplied candidate policy in place of the assumed optimal policy");
  if (policy_space_size(spec) > cap) {
    const std::string detail = detail::cap_detail(spec, cap);
    report.checks.push_back({"p1-performance", CheckStatus::not_checked, detail});
    report.checks.push_back({"p1-safety", CheckStatus::not_checked, detail});
    report.checks.push_back({"p1-argmax", CheckStatus::not_checked, detail});
    return report;
  }

  const ExactEvaluation hat = evaluate_policy(spec, candidate);
  const std::vector<char> safe = detail::safe_mask(hat.p, theta);
  const std::vector<Policy> competitors = enumerate_policies(spec, cap);

  std::uint64_t perf_premise = 0;
  std::uint64_t perf_pairs = 0;
  std::uint64_t safety_premise = 0;
  std::uint64_t safety_pairs = 0;
  std::string perf_witness;
  std::string safety_witness;
  for (const Policy& pi : competitors) {
    const ExactEvaluation ev = evaluate_policy(spec, pi);
    for (std::size_t s = 0; s < safe.size(); ++s) {
      if (safe[s]) {
        ++perf_pairs;
        if (ev.p[s] <= hat.p[s]) {
          ++perf_premise;
          if (!(ev.v[s] <= hat.v[s] + detail::kCompareSlack) && perf_witness.empty()) {
            perf_witness = "witness: state=" + spec.state_names[s] + ", competitor=" + render_policy(spec, pi) +
                           ", P=" + format_double_9(ev.p[s]) + " <= " + format_double_9(hat.p[s]) +
                           " but V=" + format_double_9(ev.v[s]) + " > " + format_double_9(hat.v[s]);
          }
        }
      } else {
        ++safety_pairs;
        if (hat.v[s] <= ev.v[s]) {
          ++safety_premise;
          if (!(hat.p[s] <= ev.p[s] + detail::kCompareSlack) && safety_witness.empty()) {
            safety_witness = "witness: state=" + spec.state_names[s] + ", competitor=" + render_policy(spec, pi) +
                             ", V=" + format_double_9(hat.v[s]) + " <= " + format_double_9(ev.v[s]) +
                             " but P=" + format_double_9(hat.p[s]) + " > " + format_double_9(ev.p[s]);
          }
        }
      }
    }
  }

  const std::string counts = "competitors=" + std::to_string(competitors.size());
  PropertyCheck perf;
  perf.property = "p1-performance";
  if (!perf_witness.empty()) {
    perf.status = CheckStatus::fail;
    perf.detail = perf_witness;
  } else {
    perf.status = perf_premise == 0 ? CheckStatus::vacuous_pass : CheckStatus::pass;
    perf.detail = counts + ", safe-state-pairs=" + std::to_string(perf_pairs) +
                  ", premise-held=" + std::to_string(perf_premise);
  }
  report.checks.push_back(std::move(perf));

  PropertyCheck safety;
  safety.property = "p1-safety";
  if (!safety_witness.empty()) {
    safety.status = CheckStatus::fail;
    safety.detail = safety_witness;
  } else {
    safety.status = safety_premise == 0 ? CheckStatus::vacuous_pass : CheckStatus::pass;
    safety.detail = counts + ", unsafe-state-pairs=" + std::to_string(safety_pairs) +
                    ", premise-held=" + std::to_string(safety_premise);
  }
  report.checks.push_back(std::move(safety));

  PropertyCheck argmax;
  argmax.property = "p1-argmax";
  argmax.status = CheckStatus::pass;
  std::uint64_t argmax_states = 0;
  for (std::size_t s = 0; s < safe.size(); ++s) {
    if (!safe[s]) continue;
    ++argmax_states;
    const std::size_t ci =
        static_cast<std::size_t>(spec.action_index(static_cast<StateId>(s), candidate.choice[s]));
    double best = hat.q[s][ci];
    std::size_t best_i = ci;
    for (std::size_t i = 0; i < spec.actions[s].size(); ++i) {
      if (hat.p_action[s][i] <= hat.p[s] && hat.q[s][i] > best) {
        best = hat.q[s][i];
        best_i = i;
      }
    }
    if (!(hat.q[s][ci] >= best - detail::kCompareSlack)) {
      argmax.status = CheckStatus::fail;
      argmax.detail = "witness: state=" + spec.state_names[s] + ", chosen=" +
                      spec.action_names[static_cast<std::size_t>(candidate.choice[s])] +
                      " with Q=" + format_double_9(hat.q[s][ci]) + ", better no-riskier action=" +
                      spec.action_names[static_cast<std::size_t>(spec.actions[s][best_i])] +
                      " with Q=" + format_double_9(best);
      break;
    }
  }
  if (argmax.status == CheckStatus::pass) {
    argmax.detail = "safe-states=" + std::to_string(argmax_states);
  }
  report.checks.push_back(std::move(argmax));
  return report;
}

/// Checks that among all policies agreeing with the candidate over the safe
/// region, the candidate is nowhere less safe on the unsafe region. Reported
/// vacuous when the unsafe region holds no non-terminal states.
inline PropertyReport check_p2(const MdpSpec& spec, double theta, const Policy& candidate,
                               std::uint64_t cap = detail::kEnumerationCap) {
  if (!(theta >= 0.0 && theta < 1.0)) throw std::invalid_argument("check_p2: theta must lie in [0,1)");
  PropertyReport report;
  report.header.push_back(
      "p2 is checked for the supplied candidate policy in place of the assumed optimal policy");

  const ExactEvaluation hat = evaluate_policy(spec, candidate);
  const std::vector<char> safe = detail::safe_mask(hat.p, theta);
  const std::size_t n = safe.size();

  std::vector<std::size_t> free_states;
  std::uint64_t count = 1;
  bool overflow = false;
  for (std::size_t s = 0; s < n; ++s) {
    if (safe[s]) continue;
    free_states.push_back(s);
    const std::uint64_t width = spec.actions[s].size();
    if (count > cap / width) overflow = true;
    count *= width;
    if (overflow) break;
  }
  if (overflow || count > cap) {
    report.checks.push_back({"p2", CheckStatus::not_checked,
                             "competitor space exceeds cap: cap " + std::to_string(cap)});
    return report;
  }

  bool has_nonterminal_unsafe = false;
  for (std::size_t s = 0; s < n; ++s) {
    if (!safe[s] && !spec.is_terminal(static_cast<StateId>(s))) has_nonterminal_unsafe = true;
  }

  PropertyCheck check;
  check.property = "p2";
  check.status = has_nonterminal_unsafe ? CheckStatus::pass : CheckStatus::vacuous_pass;
  std::vector<std::size_t> odo(free_states.size(), 0);
  std::uint64_t tried = 0;
  Policy competitor = candidate;
  while (true) {
    for (std::size_t k = 0; k < free_states.size(); ++k) {
      const std::size_t s = free_states[k];
      competitor.choice[s] = spec.actions[s][odo[k]];
    }
    ++tried;
    const ExactEvaluation ev = evaluate_policy(spec, competitor);
    for (std::size_t s = 0; s < n; ++s) {
      if (safe[s]) continue;
      if (!(hat.p[s] <= ev.p[s] + detail::kCompareSlack)) {
        check.status = CheckStatus::fail;
        check.detail = "witness: state=" + spec.state_names[s] + ", competitor=" +
                       render_policy(spec, competitor) + ", candidate P=" + format_double_9(hat.p[s]) +
                       " > competitor P=" + format_double_9(ev.p[s]);
        break;
      }
    }
    if (check.status == CheckStatus::fail) break;
    std::size_t k = 0;
    for (; k < odo.size(); ++k) {
      if (++odo[k] < spec.actions[free_states[k]].size()) break;
      odo[k] = 0;
    }
    if (k == odo.size()) break;
  }
  if (check.status != CheckStatus::fail) {
    check.detail = "competitors=" + std::to_string(tried) +
                   ", unsafe-states=" + std::to_string(free_states.size()) +
                   (has_nonterminal_unsafe ? "" : ", no non-terminal unsafe state");
  }
  report.checks.push_back(std::move(check));
  return report;
}

struct P3Config {
  SolverMode mode = SolverMode::recursive;
  int iterations = 15;
  int horizon = 15;
  NaiveInit init;
};

/// Runs the selected solver at both thresholds of each pair and checks that
/// the lower-threshold policy is nowhere worth more over the higher
/// threshold's safe region and nowhere riskier anywhere. Pairs where either
/// solve fails to converge are reported not evaluable.
inline PropertyReport check_p3(const MdpSpec& spec, const std::vector<std::pair<double, double>>& theta_pairs,
                               const P3Config& config = {}) {
  PropertyReport report;
  report.header.push_back(
      "p3 is checked on solver outputs in place of the assumed optimal policies; it measures the solver, not the property");
  for (const auto& [lo, hi] : theta_pairs) {
    if (!(lo >= 0.0 && lo <= hi && hi < 1.0)) {
      throw std::invalid_argument("check_p3: pairs must satisfy 0 <= theta <= theta' < 1");
    }
    PropertyCheck check;
    check.property = "p3(" + format_double(lo) + "," + format_double(hi) + ")";
    const detail::SolverRun run_lo =
        detail::run_solver(spec, config.mode, lo, config.iterations, config.horizon, config.init);
    const detail::SolverRun run_hi =
        detail::run_solver(spec, config.mode, hi, config.iterations, config.horizon, config.init);
    if (!run_lo.converged || !run_hi.converged) {
      check.status = CheckStatus::not_evaluable;
      check.detail = std::string("solver did not converge at theta=") +
                     format_double(!run_lo.converged ? lo : hi);
      report.checks.push_back(std::move(check));
      continue;
    }
    const ExactEvaluation ev_lo = evaluate_policy(spec, run_lo.policy);
    const ExactEvaluation ev_hi = evaluate_policy(spec, run_hi.policy);
    check.status = CheckStatus::pass;
    for (std::size_t s = 0; s < ev_lo.p.size(); ++s) {
      const bool in_safe_hi = ev_hi.p[s] <= hi;
      if (in_safe_hi && !(ev_lo.v[s] <= ev_hi.v[s] + detail::kCompareSlack)) {
        check.status = CheckStatus::fail;
        check.detail = "witness: state=" + spec.state_names[s] + ", V at lower threshold " +
                       format_double_9(ev_lo.v[s]) + " > V at higher threshold " + format_double_9(ev_hi.v[s]);
        break;
      }
      if (!(ev_lo.p[s] <= ev_hi.p[s] + detail::kCompareSlack)) {
        check.status = CheckStatus::fail;
        check.detail = "witness: state=" + spec.state_names[s] + ", P at lower threshold " +
                       format_double_9(ev_lo.p[s]) + " > P at higher threshold " + format_double_9(ev_hi.p[s]);
        break;
      }
    }
    if (check.status == CheckStatus::pass) {
      check.detail = "policies " + render_policy(spec, run_lo.policy) + " vs " +
                     render_policy(spec, run_hi.policy);
    }
    report.checks.push_back(std::move(check));
  }
  return report;
}

/// Result of applying the threshold Bellman operator once to a pair of
/// tables: the sup-norm change across both tables and whether the induced
/// greedy policy differs from the reference policy the tables came from.
struct P4Residual {
  double residual = 0.0;
  bool policy_changed = false;
  Policy induced;
};

inline P4Residual check_p4_residual(const MdpSpec& spec, double theta, const ValueTables& values,
                                    const Policy& reference) {
  auto [next, induced] = bellman_step(spec, theta, values);
  P4Residual out;
  out.residual = std::max(sup_diff(next.q, values.q), sup_diff(next.p, values.p));
  out.policy_changed = !(induced == reference);
  out.induced = std::move(induced);
  return out;
}

}  // namespace safeplan
