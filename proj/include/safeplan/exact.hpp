#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeplan/mdp.hpp"

namespace safeplan {

/// Ground-truth policy evaluation. `v` and `p` are per-state expected
/// discounted return and unbounded failure-reachability; `q` and `p_action`
/// are their one-step action expansions. By construction v(s) = q(s, pi(s))
/// and p(s) = p_action(s, pi(s)) through the identical arithmetic path.
struct ExactEvaluation {
  std::vector<double> v;
  std::vector<double> p;
  ActionTable q;
  ActionTable p_action;
};

/// Failure-reachability truncated at `horizon` transitions: the probability
/// of sitting in a failure state after at most `horizon` steps.
struct BoundedReach {
  int horizon = 0;
  std::vector<double> p_n;
  ActionTable p_n_action;
};

/// Raised when a policy-induced chain has states that can never reach a
/// terminal state, which leaves the reachability system singular.
class NonAbsorbingError : public std::runtime_error {
 public:
  NonAbsorbingError(const std::string& message, std::vector<StateId> offending)
      : std::runtime_error(message), states(std::move(offending)) {}

  std::vector<StateId> states;
};

enum class EvalMethod { direct, fixed_point };

namespace detail {

/// Non-terminal states with no positive-probability path to any terminal
/// state under the policy, in ascending id order.
inline std::vector<StateId> trapped_states(const MdpSpec& spec, const Policy& pi) {
  const int n = spec.state_count();
  std::vector<char> reaches(static_cast<std::size_t>(n), 0);
  for (StateId s = 0; s < n; ++s) reaches[static_cast<std::size_t>(s)] = spec.is_terminal(s) ? 1 : 0;
  bool changed = true;
  while (changed) {
    changed = false;
    for (StateId s = 0; s < n; ++s) {
      if (reaches[static_cast<std::size_t>(s)]) continue;
      const int ai = spec.action_index(s, pi.choice[static_cast<std::size_t>(s)]);
      for (const Transition& tr : spec.transitions[static_cast<std::size_t>(s)][static_cast<std::size_t>(ai)]) {
        if (tr.prob > 0.0 && reaches[static_cast<std::size_t>(tr.next)]) {
          reaches[static_cast<std::size_t>(s)] = 1;
          changed = true;
          break;
        }
      }
    }
  }
  std::vector<StateId> trapped;
  for (StateId s = 0; s < n; ++s) {
    if (!reaches[static_cast<std::size_t>(s)]) trapped.push_back(s);
  }
  return trapped;
}

[[noreturn]] inline void throw_non_absorbing(const MdpSpec& spec, const Policy& pi) {
  const std::vector<StateId> trapped = trapped_states(spec, pi);
  std::string msg = "non-absorbing under policy: state(s)";
  for (StateId s : trapped) msg += " " + spec.state_names[static_cast<std::size_t>(s)];
  msg += " never reach a terminal state";
  throw NonAbsorbingError(msg, trapped);
}

/// Solves A x = b in place by Gaussian elimination with partial pivoting.
/// Returns false when a pivot collapses, i.e. the system is singular.
inline bool solve_dense(std::vector<std::vector<double>>& a, std::vector<double>& b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (std::abs(a[pivot][col]) < 1e-12) return false;
    if (pivot != col) {
      std::swap(a[pivot], a[col]);
      std::swap(b[pivot], b[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = a[r][col] / a[col][col];
      if (factor == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r][c] -= factor * a[col][c];
      b[r] -= factor * b[col];
    }
  }
  for (std::size_t col = n; col-- > 0;) {
    double acc = b[col];
    for (std::size_t c = col + 1; c < n; ++c) acc -= a[col][c] * b[c];
    b[col] = acc / a[col][col];
  }
  return true;
}

}  // namespace detail

/// Evaluates a policy exactly. The direct method assembles the two linear
/// systems (discounted return, undiscounted failure-reachability) over the
/// non-terminal states and eliminates them densely with partial pivoting; the
/// fixed-point method sweeps to a 1e-12 sup-norm change instead. Both detect
/// non-absorbing chains and raise NonAbsorbingError naming the trapped
/// states rather than returning a patched answer.
inline ExactEvaluation evaluate_policy(const MdpSpec& spec, const Policy& pi,
                                       EvalMethod method = EvalMethod::direct) {
  const int n = spec.state_count();
  std::vector<StateId> nonterm;
  std::vector<int> row_of(static_cast<std::size_t>(n), -1);
  std::vector<int> pol_idx(static_cast<std::size_t>(n), 0);
  for (StateId s = 0; s < n; ++s) {
    const int ai = spec.action_index(s, pi.choice[static_cast<std::size_t>(s)]);
    if (ai < 0) throw std::invalid_argument("evaluate_policy: policy picks unavailable action");
    pol_idx[static_cast<std::size_t>(s)] = ai;
    if (!spec.is_terminal(s)) {
      row_of[static_cast<std::size_t>(s)] = static_cast<int>(nonterm.size());
      nonterm.push_back(s);
    }
  }

  // Terminal boundary values seen by the one-step expansions.
  std::vector<double> v_state(static_cast<std::size_t>(n), 0.0);
  std::vector<double> p_state(static_cast<std::size_t>(n), 0.0);
  for (StateId s = 0; s < n; ++s) {
    if (!spec.is_terminal(s)) continue;
    const std::size_t us = static_cast<std::size_t>(s);
    v_state[us] = spec.terminal_rewards[us][static_cast<std::size_t>(pol_idx[us])];
    p_state[us] = spec.is_failure(s) ? 1.0 : 0.0;
  }

  const std::size_t m = nonterm.size();
  if (method == EvalMethod::direct) {
    std::vector<std::vector<double>> a_p(m, std::vector<double>(m, 0.0));
    std::vector<double> b_p(m, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      const StateId s = nonterm[r];
      const std::size_t us = static_cast<std::size_t>(s);
      a_p[r][r] = 1.0;
      for (const Transition& tr : spec.transitions[us][static_cast<std::size_t>(pol_idx[us])]) {
        const int rc = row_of[static_cast<std::size_t>(tr.next)];
        if (rc >= 0) {
          a_p[r][static_cast<std::size_t>(rc)] -= tr.prob;
        } else if (spec.is_failure(tr.next)) {
          b_p[r] += tr.prob;
        }
      }
    }
    if (!detail::solve_dense(a_p, b_p)) detail::throw_non_absorbing(spec, pi);
    for (std::size_t r = 0; r < m; ++r) p_state[static_cast<std::size_t>(nonterm[r])] = b_p[r];

    std::vector<std::vector<double>> a_v(m, std::vector<double>(m, 0.0));
    std::vector<double> b_v(m, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      const StateId s = nonterm[r];
      const std::size_t us = static_cast<std::size_t>(s);
      a_v[r][r] = 1.0;
      for (const Transition& tr : spec.transitions[us][static_cast<std::size_t>(pol_idx[us])]) {
        const int rc = row_of[static_cast<std::size_t>(tr.next)];
        if (rc >= 0) {
          a_v[r][static_cast<std::size_t>(rc)] -= spec.gamma * tr.prob;
        } else {
          b_v[r] += spec.gamma * tr.prob * v_state[static_cast<std::size_t>(tr.next)];
        }
        b_v[r] += tr.prob * tr.reward;
      }
    }
    if (!detail::solve_dense(a_v, b_v)) {
      throw std::runtime_error("evaluate_policy: discounted system is singular");
    }
    for (std::size_t r = 0; r < m; ++r) v_state[static_cast<std::size_t>(nonterm[r])] = b_v[r];
  } else {
    if (!detail::trapped_states(spec, pi).empty()) detail::throw_non_absorbing(spec, pi);
    constexpr double kTol = 1e-12;
    constexpr std::int64_t kMaxSweeps = 1000000;
    std::vector<double> v_next(v_state), p_next(p_state);
    std::int64_t sweep = 0;
    for (; sweep < kMaxSweeps; ++sweep) {
      double change = 0.0;
      for (const StateId s : nonterm) {
        const std::size_t us = static_cast<std::size_t>(s);
        double pv = 0.0;
        double vv = 0.0;
        for (const Transition& tr : spec.transitions[us][static_cast<std::size_t>(pol_idx[us])]) {
          const std::size_t un = static_cast<std::size_t>(tr.next);
          pv += tr.prob * p_state[un];
          vv += tr.prob * (tr.reward + spec.gamma * v_state[un]);
        }
        p_next[us] = pv;
        v_next[us] = vv;
        change = std::max(change, std::abs(pv - p_state[us]));
        change = std::max(change, std::abs(vv - v_state[us]));
      }
      for (const StateId s : nonterm) {
        const std::size_t us = static_cast<std::size_t>(s);
        p_state[us] = p_next[us];
        v_state[us] = v_next[us];
      }
      if (change < kTol) break;
    }
    if (sweep == kMaxSweeps) {
      throw std::runtime_error("evaluate_policy: fixed-point iteration did not reach 1e-12 in 1e6 sweeps");
    }
  }

  ExactEvaluation out;
  out.v.assign(static_cast<std::size_t>(n), 0.0);
  out.p.assign(static_cast<std::size_t>(n), 0.0);
  out.q.resize(static_cast<std::size_t>(n));
  out.p_action.resize(static_cast<std::size_t>(n));
  for (StateId s = 0; s < n; ++s) {
    const std::size_t us = static_cast<std::size_t>(s);
    const std::size_t width = spec.actions[us].size();
    out.q[us].assign(width, 0.0);
    out.p_action[us].assign(width, 0.0);
    if (spec.is_terminal(s)) {
      for (std::size_t i = 0; i < width; ++i) {
        out.q[us][i] = spec.terminal_rewards[us][i];
        out.p_action[us][i] = spec.is_failure(s) ? 1.0 : 0.0;
      }
    } else {
      for (std::size_t i = 0; i < width; ++i) {
        double qv = 0.0;
        double pv = 0.0;
        for (const Transition& tr : spec.transitions[us][i]) {
          const std::size_t un = static_cast<std::size_t>(tr.next);
          qv += tr.prob * (tr.reward + spec.gamma * v_state[un]);
          pv += tr.prob * p_state[un];
        }
        out.q[us][i] = qv;
        out.p_action[us][i] = pv;
      }
    }
    out.v[us] = out.q[us][static_cast<std::size_t>(pol_idx[us])];
    out.p[us] = out.p_action[us][static_cast<std::size_t>(pol_idx[us])];
  }
  return out;
}

/// Converts an exact evaluation into the table pair the solvers operate on.
inline ValueTables to_value_tables(const ExactEvaluation& eval) {
  return ValueTables{eval.q, eval.p_action};
}

/// Failure-reachability within `n` transitions by backward induction. The
/// per-state table satisfies p_n(s) = p_n_action(s, pi(s)) exactly, and with
/// the fixed summation order the sequence is non-decreasing in n entry-wise.
inline BoundedReach bounded_reachability(const MdpSpec& spec, const Policy& pi, int n) {
  if (n < 1) throw std::invalid_argument("bounded_reachability: horizon must be at least 1");
  const int num = spec.state_count();
  std::vector<int> pol_idx(static_cast<std::size_t>(num), 0);
  for (StateId s = 0; s < num; ++s) {
    const int ai = spec.action_index(s, pi.choice[static_cast<std::size_t>(s)]);
    if (ai < 0) throw std::invalid_argument("bounded_reachability: policy picks unavailable action");
    pol_idx[static_cast<std::size_t>(s)] = ai;
  }

  std::vector<double> prev(static_cast<std::size_t>(num), 0.0);
  for (StateId s = 0; s < num; ++s) prev[static_cast<std::size_t>(s)] = spec.is_failure(s) ? 1.0 : 0.0;
  std::vector<double> cur(prev);
  for (int step = 1; step < n; ++step) {
    for (StateId s = 0; s < num; ++s) {
      if (spec.is_terminal(s)) continue;
      const std::size_t us = static_cast<std::size_t>(s);
      double acc = 0.0;
      for (const Transition& tr : spec.transitions[us][static_cast<std::size_t>(pol_idx[us])]) {
        acc += tr.prob * prev[static_cast<std::size_t>(tr.next)];
      }
      cur[us] = acc;
    }
    prev = cur;
  }

  BoundedReach out;
  out.horizon = n;
  out.p_n.assign(static_cast<std::size_t>(num), 0.0);
  out.p_n_action.resize(static_cast<std::size_t>(num));
  for (StateId s = 0; s < num; ++s) {
    const std::size_t us = static_cast<std::size_t>(s);
    const std::size_t width = spec.actions[us].size();
    if (spec.is_terminal(s)) {
      out.p_n_action[us].assign(width, spec.is_failure(s) ? 1.0 : 0.0);
    } else {
      out.p_n_action[us].assign(width, 0.0);
      for (std::size_t i = 0; i < width; ++i) {
        double acc = 0.0;
        for (const Transition& tr : spec.transitions[us][i]) {
          acc += tr.prob * prev[static_cast<std::size_t>(tr.next)];
        }
        out.p_n_action[us][i] = acc;
      }
    }
    out.p_n[us] = out.p_n_action[us][static_cast<std::size_t>(pol_idx[us])];
  }
  return out;
}

/// The eight closed-form counter machine values at parameters (p, gamma):
/// action values and failure-reachabilities of both s1 actions under both
/// stationary policies, written pi_L and pi_R for the s1 choice.
struct ClosedFormCounter {
  double q_ll = 0.0;
  double q_rl = 0.0;
  double q_lr = 0.0;
  double q_rr = 0.0;
  double p_ll = 0.0;
  double p_rl = 0.0;
  double p_lr = 0.0;
  double p_rr = 0.0;
};

inline ClosedFormCounter closed_form_counter(double p, double gamma) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("closed_form_counter: p must lie strictly inside (0,1)");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("closed_form_counter: gamma must lie in [0,1)");
  const double q = 1.0 - p;
  ClosedFormCounter out;
  out.p_ll = p / (1.0 - p * q);
  out.p_rl = 1.0 - p * q / (1.0 - p * q);
  out.p_lr = 2.0 * p / (p + 1.0);
  out.p_rr = 1.0 / (p + 1.0);
  out.q_ll = -(1.0 + gamma * q) / (1.0 - gamma * gamma * p * q);
  out.q_rl = -(1.0 + gamma * p + gamma * gamma * p * (p - q)) / (1.0 - gamma * gamma * p * q);
  out.q_lr = -(1.0 + gamma * (1.0 - 2.0 * p)) / (1.0 - gamma * p);
  out.q_rr = -1.0 / (1.0 - gamma * p);
  return out;
}

/// Number of deterministic policies, saturating at the uint64 maximum.
inline std::uint64_t policy_space_size(const MdpSpec& spec) {
  std::uint64_t count = 1;
  for (const auto& avail : spec.actions) {
    const std::uint64_t w = avail.size();
    if (count > UINT64_MAX / w) return UINT64_MAX;
    count *= w;
  }
  return count;
}

/// Every deterministic policy exactly once, ordered lexicographically by
/// action index with state 0 as the most significant digit. Refuses policy
/// spaces larger than `cap`.
inline std::vector<Policy> enumerate_policies(const MdpSpec& spec, std::uint64_t cap = 1000000) {
  const std::uint64_t count = policy_space_size(spec);
  if (count > cap) {
    throw std::runtime_error("policy space exceeds cap: " + std::to_string(count) + " policies, cap " +
                             std::to_string(cap));
  }
  const std::size_t n = static_cast<std::size_t>(spec.state_count());
  std::vector<std::size_t> digit(n, 0);
  std::vector<Policy> out;
  out.reserve(static_cast<std::size_t>(count));
  while (true) {
    Policy pi;
    pi.choice.resize(n);
    for (std::size_t s = 0; s < n; ++s) pi.choice[s] = spec.actions[s][digit[s]];
    out.push_back(std::move(pi));
    std::size_t s = n;
    while (s-- > 0) {
      if (++digit[s] < spec.actions[s].size()) break;
      digit[s] = 0;
      if (s == 0) return out;
    }
  }
}

}  // namespace safeplan
