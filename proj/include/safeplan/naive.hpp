#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "safeplan/exact.hpp"
#include "safeplan/mdp.hpp"

namespace safeplan {

/// Per-state subsets of the available actions currently deemed safe; a
/// state's subset may be empty.
struct ConstrainedActionSets {
  ActionMask allowed;
};

/// Actions whose reachability entry stays within the threshold.
inline ConstrainedActionSets constrained_sets(const MdpSpec& spec, const ActionTable& p, double theta) {
  ConstrainedActionSets sets;
  sets.allowed.resize(p.size());
  for (std::size_t s = 0; s < p.size(); ++s) {
    sets.allowed[s].resize(p[s].size());
    for (std::size_t i = 0; i < p[s].size(); ++i) sets.allowed[s][i] = p[s][i] <= theta ? 1 : 0;
  }
  (void)spec;
  return sets;
}

/// Greedy selection over the constrained sets: the lowest-index maximizer of
/// q within a state's allowed subset, or, when the subset is empty, the
/// lowest-index minimizer of p over all available actions.
inline Policy get_policy(const MdpSpec& spec, const ConstrainedActionSets& sets, const ActionTable& q,
                         const ActionTable& p) {
  const std::size_t n = static_cast<std::size_t>(spec.state_count());
  Policy pi;
  pi.choice.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    int best = -1;
    for (std::size_t i = 0; i < spec.actions[s].size(); ++i) {
      if (!sets.allowed[s][i]) continue;
      if (best < 0 || q[s][i] > q[s][static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    if (best < 0) {
      for (std::size_t i = 0; i < spec.actions[s].size(); ++i) {
        if (best < 0 || p[s][i] < p[s][static_cast<std::size_t>(best)]) best = static_cast<int>(i);
      }
    }
    pi.choice[s] = spec.actions[s][static_cast<std::size_t>(best)];
  }
  return pi;
}

inline Policy get_policy(const MdpSpec& spec, const ConstrainedActionSets& sets, const ValueTables& values) {
  return get_policy(spec, sets, values.q, values.p);
}

namespace detail {

/// One synchronous expected backup of both tables under a fixed policy; the
/// new tables are computed entirely from the old ones. Terminal rows copy
/// through unchanged.
inline ValueTables backup(const MdpSpec& spec, const ValueTables& values, const Policy& pi) {
  const std::size_t n = static_cast<std::size_t>(spec.state_count());
  std::vector<int> pol_idx(n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    pol_idx[s] = spec.action_index(static_cast<StateId>(s), pi.choice[s]);
  }
  ValueTables next = values;
  for (std::size_t s = 0; s < n; ++s) {
    if (spec.is_terminal(static_cast<StateId>(s))) continue;
    for (std::size_t i = 0; i < spec.actions[s].size(); ++i) {
      double qv = 0.0;
      double pv = 0.0;
      for (const Transition& tr : spec.transitions[s][i]) {
        const std::size_t un = static_cast<std::size_t>(tr.next);
        const std::size_t pin = static_cast<std::size_t>(pol_idx[un]);
        qv += tr.prob * (tr.reward + spec.gamma * values.q[un][pin]);
        pv += tr.prob * values.p[un][pin];
      }
      next.q[s][i] = qv;
      next.p[s][i] = pv;
    }
  }
  return next;
}

}  // namespace detail

/// One application of the threshold Bellman operator: builds the constrained
/// sets from the p table, selects the greedy policy, and backs both tables up
/// once under it. Returns the new tables and the policy used.
inline std::pair<ValueTables, Policy> bellman_step(const MdpSpec& spec, double theta,
                                                   const ValueTables& values) {
  const ConstrainedActionSets sets = constrained_sets(spec, values.p, theta);
  Policy pi = get_policy(spec, sets, values);
  ValueTables next = detail::backup(spec, values, pi);
  return {std::move(next), std::move(pi)};
}

/// Snapshot of one solver iteration: the policy in force, the tables it was
/// derived from, and the constrained sets it consumed.
struct IterationSnapshot {
  Policy policy;
  ValueTables values;
  ActionMask constraint_ok;
};

/// Iteration history plus convergence and oscillation diagnostics. Converged
/// means the policy stopped changing and the final sup-norm table change fell
/// below 1e-8. The oscillation period is the smallest cycle length up to 8
/// that the second half of the policy sequence repeats with; stable (period
/// 1) sequences report none.
struct SolveTrace {
  std::vector<IterationSnapshot> iterations;
  Policy final_policy;
  bool converged = false;
  std::optional<int> oscillation_period;
  double final_q_change = 0.0;
  double final_p_change = 0.0;
};

namespace detail {

constexpr double kValueTolerance = 1e-8;
constexpr int kMaxOscillationPeriod = 8;

inline std::optional<int> detect_oscillation(const std::vector<Policy>& seq) {
  const std::size_t len = seq.size();
  if (len < 2) return std::nullopt;
  const std::size_t tail_start = len / 2;
  for (int period = 1; period <= kMaxOscillationPeriod; ++period) {
    const std::size_t d = static_cast<std::size_t>(period);
    if (len - tail_start < 2 * d) break;
    bool ok = true;
    for (std::size_t i = tail_start; i + d < len; ++i) {
      if (!(seq[i] == seq[i + d])) {
        ok = false;
        break;
      }
    }
    if (ok) return period == 1 ? std::nullopt : std::optional<int>(period);
  }
  return std::nullopt;
}

}  // namespace detail

/// Initial reachability estimates for naive value iteration: all zero, a
/// constant fill, or a seeded uniform draw per non-terminal entry.
struct NaiveInit {
  enum class Kind { zero, constant, uniform };

  Kind kind = Kind::zero;
  double constant = 0.0;
  std::uint64_t seed = 0;
};

struct NaiveViResult {
  Policy policy;
  ValueTables tables;
  SolveTrace trace;
};

/// Naive value iteration: k synchronous sweeps, each rebuilding the
/// constrained sets from the current reachability estimates, selecting the
/// greedy policy, and backing both tables up once. The returned policy comes
/// from a final set rebuild on the post-loop tables. The instability this
/// method exhibits near the threshold is genuine and preserved; see the
/// trace diagnostics.
inline NaiveViResult naive_value_iteration(const MdpSpec& spec, double theta, int iterations,
                                           const NaiveInit& init = {}) {
  if (!(theta >= 0.0 && theta < 1.0)) throw std::invalid_argument("naive_value_iteration: theta must lie in [0,1)");
  if (iterations < 1) throw std::invalid_argument("naive_value_iteration: iteration count must be at least 1");

  ValueTables tables = make_value_tables(spec);
  if (init.kind != NaiveInit::Kind::zero) {
    if (init.kind == NaiveInit::Kind::constant &&
        !(init.constant >= 0.0 && init.constant <= 1.0)) {
      throw std::invalid_argument("naive_value_iteration: constant reachability init must lie in [0,1]");
    }
    std::mt19937_64 gen(init.seed);
    for (std::size_t s = 0; s < tables.p.size(); ++s) {
      if (spec.is_terminal(static_cast<StateId>(s))) continue;
      for (double& entry : tables.p[s]) {
        entry = init.kind == NaiveInit::Kind::constant ? init.constant : detail::uniform01(gen);
      }
    }
  }

  NaiveViResult out;
  out.trace.iterations.reserve(static_cast<std::size_t>(iterations));
  std::vector<Policy> seq;
  seq.reserve(static_cast<std::size_t>(iterations));
  for (int sweep = 0; sweep < iterations; ++sweep) {
    const ConstrainedActionSets sets = constrained_sets(spec, tables.p, theta);
    Policy pi = get_policy(spec, sets, tables);
    ValueTables next = detail::backup(spec, tables, pi);
    out.trace.final_q_change = sup_diff(next.q, tables.q);
    out.trace.final_p_change = sup_diff(next.p, tables.p);
    seq.push_back(pi);
    out.trace.iterations.push_back({std::move(pi), std::move(tables), sets.allowed});
    tables = std::move(next);
  }

  const ConstrainedActionSets final_sets = constrained_sets(spec, tables.p, theta);
  out.policy = get_policy(spec, final_sets, tables);
  out.trace.final_policy = out.policy;
  out.trace.converged = seq.size() >= 2 && seq[seq.size() - 1] == seq[seq.size() - 2] &&
                        out.trace.final_q_change < detail::kValueTolerance &&
                        out.trace.final_p_change < detail::kValueTolerance;
  out.trace.oscillation_period = detail::detect_oscillation(seq);
  out.tables = std::move(tables);
  return out;
}

/// Policy iteration against exact evaluations: each iteration evaluates the
/// given policy exactly, rebuilds the constrained sets from the exact
/// reachabilities alone, and hands the greedy selection the exact tables.
/// Runs exactly `iterations` rounds; converged means the last chosen policy
/// equals the policy it was derived from. Snapshots record the given policy
/// of each round.
inline SolveTrace naive_policy_iteration(const MdpSpec& spec, double theta, const Policy& initial,
                                         int iterations) {
  if (!(theta >= 0.0 && theta < 1.0)) throw std::invalid_argument("naive_policy_iteration: theta must lie in [0,1)");
  if (iterations < 1) throw std::invalid_argument("naive_policy_iteration: iteration count must be at least 1");

  SolveTrace trace;
  trace.iterations.reserve(static_cast<std::size_t>(iterations));
  std::vector<Policy> seq;
  seq.reserve(static_cast<std::size_t>(iterations));
  Policy current = initial;
  for (int round = 0; round < iterations; ++round) {
    const ExactEvaluation eval = evaluate_policy(spec, current);
    ValueTables tables = to_value_tables(eval);
    const ConstrainedActionSets sets = constrained_sets(spec, tables.p, theta);
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
