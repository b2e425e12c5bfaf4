#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "safeplan/exact.hpp"
#include "safeplan/mdp.hpp"
#include "safeplan/naive.hpp"

namespace safeplan {

/// Horizon-indexed value and reachability tables. Index n-1 holds the
/// n-step quantities, so p_hat[0] is the one-step failure mass, which
/// depends only on the transition kernel and never changes once built.
/// constraint[n-1] holds the accumulated admissibility flags: an action is
/// flagged at horizon n exactly when its reachability stayed within the
/// threshold at every horizon up to n.
struct ReachStack {
  int horizon = 0;
  std::vector<ActionTable> q_hat;
  std::vector<ActionTable> p_hat;
  std::vector<ActionMask> constraint;
};

/// Diagnostics of one recursive solve. Stage policies and sets come from the
/// final rebuild pass; set_sizes[outer][stage][state] counts the actions
/// surviving the stage shrink in that outer iteration; the stabilization
/// horizon is the first stage from which the constrained sets stop changing
/// as the horizon grows.
struct RecursiveSolveReport {
  Policy final_policy;
  bool converged = false;
  int stabilization_horizon = 0;
  std::vector<Policy> final_stage_policies;
  std::vector<ActionMask> final_stage_sets;
  std::vector<std::vector<std::vector<int>>> set_sizes;
  double final_qn_change = 0.0;
  double final_pn_change = 0.0;
};

struct RecursiveViResult {
  Policy policy;
  ReachStack stack;
  RecursiveSolveReport report;
};

namespace detail {

constexpr double kReachTolerance = 1e-9;

inline ActionTable one_step_failure_mass(const MdpSpec& spec) {
  const std::size_t n = static_cast<std::size_t>(spec.state_count());
  ActionTable p1(n);
  for (std::size_t s = 0; s < n; ++s) {
    p1[s].assign(spec.actions[s].size(), 0.0);
    if (spec.is_terminal(static_cast<StateId>(s))) {
      if (spec.is_failure(static_cast<StateId>(s))) p1[s].assign(spec.actions[s].size(), 1.0);
      continue;
    }
    for (std::size_t i = 0; i < spec.actions[s].size(); ++i) {
      double mass = 0.0;
      for (const Transition& tr : spec.transitions[s][i]) {
        if (spec.is_failure(tr.next)) mass += tr.prob;
      }
      p1[s][i] = mass;
    }
  }
  return p1;
}

inline void shrink_sets(const MdpSpec& spec, ConstrainedActionSets& sets, const ActionTable& p,
                        double theta) {
  for (std::size_t s = 0; s < p.size(); ++s) {
    for (std::size_t i = 0; i < p[s].size(); ++i) {
      if (p[s][i] > theta) sets.allowed[s][i] = 0;
    }
  }
  (void)spec;
}

inline ConstrainedActionSets full_sets(const MdpSpec& spec) {
  ConstrainedActionSets sets;
  sets.allowed.resize(static_cast<std::size_t>(spec.state_count()));
  for (std::size_t s = 0; s < sets.allowed.size(); ++s) sets.allowed[s].assign(spec.actions[s].size(), 1);
  return sets;
}

inline void backup_stage(const MdpSpec& spec, const std::vector<int>& pol_idx, const ActionTable& src,
                         ActionTable& dst, bool discounted_reward) {
  const double gamma = spec.gamma;
  for (std::size_t s = 0; s < dst.size(); ++s) {
    if (spec.is_terminal(static_cast<StateId>(s))) continue;
    for (std::size_t i = 0; i < dst[s].size(); ++i) {
      double acc = 0.0;
      if (discounted_reward) {
        for (const Transition& tr : spec.transitions[s][i]) {
          acc += tr.prob * (tr.reward + gamma * src[static_cast<std::size_t>(tr.next)]
                                                  [static_cast<std::size_t>(pol_idx[static_cast<std::size_t>(tr.next)])]);
        }
      } else {
        for (const Transition& tr : spec.transitions[s][i]) {
          acc += tr.prob * src[static_cast<std::size_t>(tr.next)]
                              [static_cast<std::size_t>(pol_idx[static_cast<std::size_t>(tr.next)])];
        }
      }
      dst[s][i] = acc;
    }
  }
}

}  // namespace detail

/// Value iteration over an explicit horizon stack. Each outer pass walks the
/// stages in order, shrinking one shared action set by the stage reachability
/// bound before refining that stage's value table, then propagating the next
/// stage's reachability under the stage policy. The stage-1 reachability is
/// the exact one-step failure mass and is never revised, which is what keeps
/// the constrained sets from drifting the way the single-table method does.
inline RecursiveViResult recursive_value_iteration(const MdpSpec& spec, double theta, int outer_iterations,
                                                   int horizon) {
  if (!(theta >= 0.0 && theta < 1.0)) throw std::invalid_argument("recursive_value_iteration: theta must lie in [0,1)");
  if (outer_iterations < 1) throw std::invalid_argument("recursive_value_iteration: outer iteration count must be at least 1");
  if (horizon < 1) throw std::invalid_argument("recursive_value_iteration: horizon must be at least 1");

  const std::size_t n = static_cast<std::size_t>(spec.state_count());
  const std::size_t stages = static_cast<std::size_t>(horizon);

  RecursiveViResult out;
  out.stack.horizon = horizon;
  out.stack.p_hat.assign(stages, ActionTable());
  out.stack.q_hat.assign(stages, ActionTable());
  out.stack.p_hat[0] = detail::one_step_failure_mass(spec);

  const ValueTables seed = make_value_tables(spec);
  for (std::size_t m = 0; m < stages; ++m) {
    out.stack.q_hat[m] = seed.q;
    if (m > 0) out.stack.p_hat[m] = out.stack.p_hat[0];
  }

  std::vector<int> pol_idx(n, 0);
  std::vector<Policy> stage_policies(stages);
  std::vector<Policy> prev_stage_policies;
  ActionTable stage_scratch;
  ActionTable prev_qn;
  ActionTable prev_pn;
  Policy rebuilt;
  Policy prev_rebuilt;
  out.report.final_qn_change = std::numeric_limits<double>::infinity();
  out.report.final_pn_change = std::numeric_limits<double>::infinity();
  bool policies_stable = false;
  bool rebuilt_stable = false;
  out.report.set_sizes.assign(static_cast<std::size_t>(outer_iterations),
                              std::vector<std::vector<int>>(stages, std::vector<int>(n, 0)));

  for (int outer = 0; outer < outer_iterations; ++outer) {
    prev_qn = out.stack.q_hat[stages - 1];
    prev_pn = out.stack.p_hat[stages - 1];
    ConstrainedActionSets sets = detail::full_sets(spec);
    for (std::size_t m = 0; m < stages; ++m) {
      detail::shrink_sets(spec, sets, out.stack.p_hat[m], theta);
      std::vector<int>& sizes = out.report.set_sizes[static_cast<std::size_t>(outer)][m];
      for (std::size_t s = 0; s < n; ++s) {
        int kept = 0;
        for (char flag : sets.allowed[s]) kept += flag ? 1 : 0;
        sizes[s] = kept;
      }
      Policy pi = get_policy(spec, sets, out.stack.q_hat[m], out.stack.p_hat[m]);
      for (std::size_t s = 0; s < n; ++s) {
        pol_idx[s] = spec.action_index(static_cast<StateId>(s), pi.choice[s]);
      }
      stage_scratch = out.stack.q_hat[m];
      detail::backup_stage(spec, pol_idx, stage_scratch, out.stack.q_hat[m], true);
      if (m + 1 < stages) {
        detail::backup_stage(spec, pol_idx, out.stack.p_hat[m], out.stack.p_hat[m + 1], false);
      }
      stage_policies[m] = std::move(pi);
    }
    ConstrainedActionSets cum = detail::full_sets(spec);
    for (std::size_t m = 0; m < stages; ++m) detail::shrink_sets(spec, cum, out.stack.p_hat[m], theta);
    rebuilt = get_policy(spec, cum, out.stack.q_hat[stages - 1], out.stack.p_hat[stages - 1]);
    if (outer > 0) {
      out.report.final_qn_change = sup_diff(out.stack.q_hat[stages - 1], prev_qn);
      out.report.final_pn_change = sup_diff(out.stack.p_hat[stages - 1], prev_pn);
      policies_stable = prev_stage_policies == stage_policies;
      rebuilt_stable = rebuilt == prev_rebuilt;
    }
    prev_stage_policies = stage_policies;
    prev_rebuilt = rebuilt;
  }

  ConstrainedActionSets final_sets = detail::full_sets(spec);
  for (std::size_t m = 0; m < stages; ++m) {
    detail::shrink_sets(spec, final_sets, out.stack.p_hat[m], theta);
    out.report.final_stage_sets.push_back(final_sets.allowed);
    out.report.final_stage_policies.push_back(
        get_policy(spec, final_sets, out.stack.q_hat[m], out.stack.p_hat[m]));
  }
  out.policy = rebuilt;
  out.report.final_policy = out.policy;

  out.stack.constraint.resize(stages);
  for (std::size_t m = 0; m < stages; ++m) {
    out.stack.constraint[m].resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      out.stack.constraint[m][s].resize(spec.actions[s].size());
      for (std::size_t i = 0; i < spec.actions[s].size(); ++i) {
        const bool within = out.stack.p_hat[m][s][i] <= theta;
        const bool prior = m == 0 || out.stack.constraint[m - 1][s][i];
        out.stack.constraint[m][s][i] = within && prior ? 1 : 0;
      }
    }
  }

  int stable_from = 1;
  for (std::size_t m = 1; m < stages; ++m) {
    if (out.report.final_stage_sets[m] != out.report.final_stage_sets[m - 1]) {
      stable_from = static_cast<int>(m) + 1;
    }
  }
  out.report.stabilization_horizon = stable_from;

  out.report.converged = outer_iterations >= 2 && policies_stable && rebuilt_stable &&
                         out.report.final_pn_change < detail::kReachTolerance;
  return out;
}

inline int stabilization_horizon(const RecursiveSolveReport& report) { return report.stabilization_horizon; }

/// Policy iteration with accumulating constraints: each round evaluates the
/// given policy exactly and intersects the per-action admissibility flags
/// with the new exact reachabilities, so an action ruled out once stays
/// ruled out. Snapshots record the given policy and the accumulated flags.
inline SolveTrace recursive_policy_iteration(const MdpSpec& spec, double theta, const Policy& initial,
                                             int iterations) {
  if (!(theta >= 0.0 && theta < 1.0)) throw std::invalid_argument("recursive_policy_iteration: theta must lie in [0,1)");
  if (iterations < 1) throw std::invalid_argument("recursive_policy_iteration: iteration count must be at least 1");

  SolveTrace trace;
  trace.iterations.reserve(static_cast<std::size_t>(iterations));
  std::vector<Policy> seq;
  seq.reserve(static_cast<std::size_t>(iterations));
  ConstrainedActionSets sets = detail::full_sets(spec);
  Policy current = initial;
  for (int round = 0; round < iterations; ++round) {
    const ExactEvaluation eval = evaluate_policy(spec, current);
    ValueTables tables = to_value_tables(eval);
    detail::shrink_sets(spec, sets, tables.p, theta);
    Policy next = get_policy(spec, sets, tables);
    if (!trace.iterations.empty()) {
      trace.final_q_change = sup_diff(tables.q, trace.iterations.back().values.q);
      trace.final_p_change = sup_diff(tables.p, trace.iterations.back().values.p);
    }
    seq.push_back(current);
    trace.iterations.push_back({current, std::move(tables), sets.allowed});
    current = std::move(next);
  }
  trace.final_policy = current;
  trace.converged = current == seq.back();
  trace.oscillation_period = detail::detect_oscillation(seq);
  return trace;
}

}  // namespace safeplan
