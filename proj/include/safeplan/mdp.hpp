#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace safeplan {

using StateId = int;
using ActionId = int;

/// Dense per-(state, action) table. Rows follow MdpSpec::actions, so
/// `table[s][i]` belongs to the i-th available action of state s.
using ActionTable = std::vector<std::vector<double>>;

/// Per-(state, action) boolean mask with the same shape as an ActionTable.
using ActionMask = std::vector<std::vector<char>>;

/// One entry of a transition distribution: probability mass `prob` of moving
/// to state `next` while collecting `reward`.
struct Transition {
  StateId next = 0;
  double prob = 0.0;
  double reward = 0.0;
};

/// Finite MDP with disjoint non-terminal and terminal state sets; failure
/// states are the unsafe subset of the terminal states. Terminal states keep
/// a per-action self-reward instead of outgoing transitions. All solver
/// tables are addressed by dense state and per-state action indices.
struct MdpSpec {
  double gamma = 0.95;
  std::vector<std::string> state_names;
  std::vector<std::string> action_names;
  std::vector<char> terminal;
  std::vector<char> failure;
  /// Available actions per state as strictly ascending global action ids;
  /// non-empty for every state, including terminals.
  std::vector<std::vector<ActionId>> actions;
  /// transitions[s][i]: distribution of the i-th available action of
  /// non-terminal s. Terminal states have no rows.
  std::vector<std::vector<std::vector<Transition>>> transitions;
  /// terminal_rewards[s][i]: self-reward of the i-th available action of
  /// terminal s. Non-terminal states have no rows.
  std::vector<std::vector<double>> terminal_rewards;

  int state_count() const { return static_cast<int>(state_names.size()); }
  int action_count() const { return static_cast<int>(action_names.size()); }
  bool is_terminal(StateId s) const { return terminal[static_cast<std::size_t>(s)] != 0; }
  bool is_failure(StateId s) const { return failure[static_cast<std::size_t>(s)] != 0; }

  /// Position of global action `a` within actions[s], or -1 if unavailable.
  int action_index(StateId s, ActionId a) const {
    const auto& avail = actions[static_cast<std::size_t>(s)];
    for (std::size_t i = 0; i < avail.size(); ++i) {
      if (avail[i] == a) return static_cast<int>(i);
    }
    return -1;
  }

  StateId state_id(const std::string& name) const {
    for (std::size_t s = 0; s < state_names.size(); ++s) {
      if (state_names[s] == name) return static_cast<StateId>(s);
    }
    return -1;
  }

  ActionId action_id(const std::string& name) const {
    for (std::size_t a = 0; a < action_names.size(); ++a) {
      if (action_names[a] == name) return static_cast<ActionId>(a);
    }
    return -1;
  }
};

/// Deterministic policy: one chosen action per state, drawn from the state's
/// available actions (terminals included, so terminal self-rewards resolve).
struct Policy {
  std::vector<ActionId> choice;

  bool operator==(const Policy&) const = default;
};

/// Paired action-value tables: expected discounted return q and reachability
/// probability p. On terminal rows q holds the terminal self-reward and p the
/// failure indicator; solvers never overwrite those rows.
struct ValueTables {
  ActionTable q;
  ActionTable p;
};

/// Fresh tables with terminal rows fixed and all non-terminal entries zero.
inline ValueTables make_value_tables(const MdpSpec& spec) {
  ValueTables t;
  const int n = spec.state_count();
  t.q.resize(static_cast<std::size_t>(n));
  t.p.resize(static_cast<std::size_t>(n));
  for (StateId s = 0; s < n; ++s) {
    const std::size_t width = spec.actions[static_cast<std::size_t>(s)].size();
    if (spec.is_terminal(s)) {
      t.q[static_cast<std::size_t>(s)] = spec.terminal_rewards[static_cast<std::size_t>(s)];
      t.p[static_cast<std::size_t>(s)].assign(width, spec.is_failure(s) ? 1.0 : 0.0);
    } else {
      t.q[static_cast<std::size_t>(s)].assign(width, 0.0);
      t.p[static_cast<std::size_t>(s)].assign(width, 0.0);
    }
  }
  return t;
}

/// Largest absolute entry-wise difference between two same-shape tables.
inline double sup_diff(const ActionTable& a, const ActionTable& b) {
  double worst = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    for (std::size_t i = 0; i < a[s].size(); ++i) {
      const double d = std::abs(a[s][i] - b[s][i]);
      if (d > worst) worst = d;
    }
  }
  return worst;
}

struct EpisodeStep {
  StateId state = 0;
  ActionId action = 0;
  double reward = 0.0;
};

/// A sampled episode. The trajectory lists (state, action, reward) triples
/// and ends with the terminal self-reward triple unless truncated first.
/// `length` is the first hitting time of the terminal set, i.e. the number of
/// transitions taken before the terminal triple; it is empty when the episode
/// was truncated.
struct EpisodeOutcome {
  std::vector<EpisodeStep> trajectory;
  double discounted_return = 0.0;
  bool hit_failure = false;
  bool truncated = false;
  std::optional<std::int64_t> length;
};

namespace detail {

/// Uniform draw in [0, 1) with 53 random bits, stable across platforms.
inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// Validates every structural invariant of a spec and returns one message per
/// violation, each naming the offending state or action. Valid specs return
/// an empty list.
inline std::vector<std::string> validate(const MdpSpec& spec) {
  std::vector<std::string> issues;
  const std::size_t n = spec.state_names.size();

  auto sized = [&](std::size_t got, const char* field) {
    if (got != n) {
      issues.push_back(std::string(field) + " has " + std::to_string(got) + " entries for " +
                       std::to_string(n) + " states");
      return false;
    }
    return true;
  };
  const bool shape_ok = sized(spec.terminal.size(), "terminal") & sized(spec.failure.size(), "failure") &
                        sized(spec.actions.size(), "actions") &
                        sized(spec.transitions.size(), "transitions") &
                        sized(spec.terminal_rewards.size(), "terminal_rewards");
  if (!shape_ok) return issues;

  if (!(spec.gamma >= 0.0 && spec.gamma < 1.0)) {
    issues.push_back("gamma " + std::to_string(spec.gamma) + " outside [0,1)");
  }

  auto check_name = [&issues](const std::string& name, const char* kind, std::size_t index) {
    if (name.empty() || name.find_first_of(" \t#") != std::string::npos) {
      issues.push_back(std::string(kind) + " " + std::to_string(index) + " has unusable name '" + name + "'");
    }
  };
  for (std::size_t s = 0; s < n; ++s) check_name(spec.state_names[s], "state", s);
  for (std::size_t a = 0; a < spec.action_names.size(); ++a) check_name(spec.action_names[a], "action", a);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = s + 1; t < n; ++t) {
      if (spec.state_names[s] == spec.state_names[t]) {
        issues.push_back("duplicate state name '" + spec.state_names[s] + "'");
      }
    }
  }

  for (StateId s = 0; s < static_cast<StateId>(n); ++s) {
    const std::size_t us = static_cast<std::size_t>(s);
    const std::string& sn = spec.state_names[us];
    if (spec.failure[us] && !spec.terminal[us]) {
      issues.push_back("failure state " + sn + " is not terminal");
    }
    const auto& avail = spec.actions[us];
    if (avail.empty()) {
      issues.push_back("empty action set at " + sn);
      continue;
    }
    for (std::size_t i = 0; i < avail.size(); ++i) {
      if (avail[i] < 0 || avail[i] >= spec.action_count()) {
        issues.push_back("action id " + std::to_string(avail[i]) + " at " + sn + " out of range");
      }
      if (i > 0 && avail[i] <= avail[i - 1]) {
        issues.push_back("action ids at " + sn + " not strictly ascending");
      }
    }
    if (spec.is_terminal(s)) {
      if (!spec.transitions[us].empty()) {
        issues.push_back("terminal state " + sn + " has transition rows");
      }
      if (spec.terminal_rewards[us].size() != avail.size()) {
        issues.push_back("terminal state " + sn + " needs one self-reward per available action");
      }
      continue;
    }
    if (!spec.terminal_rewards[us].empty()) {
      issues.push_back("non-terminal state " + sn + " has terminal rewards");
    }
    if (spec.transitions[us].size() != avail.size()) {
      issues.push_back("state " + sn + " has " + std::to_string(spec.transitions[us].size()) +
                       " transition rows for " + std::to_string(avail.size()) + " actions");
      continue;
    }
    for (std::size_t i = 0; i < avail.size(); ++i) {
      const auto& row = spec.transitions[us][i];
      const std::string where = sn + "," + (avail[i] >= 0 && avail[i] < spec.action_count()
                                                ? spec.action_names[static_cast<std::size_t>(avail[i])]
                                                : std::to_string(avail[i]));
      if (row.empty()) {
        issues.push_back("empty distribution at (" + where + ")");
        continue;
      }
      double mass = 0.0;
      for (const Transition& tr : row) {
        if (tr.next < 0 || tr.next >= static_cast<StateId>(n)) {
          issues.push_back("transition from (" + where + ") targets out-of-range state " +
                           std::to_string(tr.next));
        }
        if (tr.prob < 0.0) {
          issues.push_back("negative mass " + std::to_string(tr.prob) + " at (" + where + ")");
        }
        mass += tr.prob;
      }
      if (std::abs(mass - 1.0) > 1e-12) {
        issues.push_back("distribution at (" + where + ") sums to " + std::to_string(mass));
      }
    }
  }
  return issues;
}

/// Samples one episode from `start` under `policy`, drawing transitions with
/// a generator seeded by `rng_seed`. The episode ends when a terminal state
/// is entered (its self-reward triple is appended) or is flagged truncated
/// after `max_steps` transitions. Identical arguments give identical results.
inline EpisodeOutcome simulate_episode(const MdpSpec& spec, const Policy& policy, StateId start,
                                       std::uint64_t rng_seed, std::int64_t max_steps = 1000000) {
  if (max_steps < 1) throw std::invalid_argument("simulate_episode: max_steps must be at least 1");
  if (start < 0 || start >= spec.state_count()) {
    throw std::invalid_argument("simulate_episode: start state out of range");
  }
  std::mt19937_64 gen(rng_seed);
  EpisodeOutcome out;
  StateId s = start;
  double discount = 1.0;
  std::int64_t t = 0;
  while (true) {
    const ActionId a = policy.choice[static_cast<std::size_t>(s)];
    const int ai = spec.action_index(s, a);
    if (ai < 0) throw std::invalid_argument("simulate_episode: policy picks unavailable action");
    if (spec.is_terminal(s)) {
      const double r = spec.terminal_rewards[static_cast<std::size_t>(s)][static_cast<std::size_t>(ai)];
      out.trajectory.push_back({s, a, r});
      out.discounted_return += discount * r;
      out.hit_failure = spec.is_failure(s);
      out.length = t;
      return out;
    }
    if (t == max_steps) {
      out.truncated = true;
      return out;
    }
    const auto& row = spec.transitions[static_cast<std::size_t>(s)][static_cast<std::size_t>(ai)];
    const double u = detail::uniform01(gen);
    const Transition* chosen = &row.back();
    double acc = 0.0;
    for (const Transition& tr : row) {
      acc += tr.prob;
      if (u < acc) {
        chosen = &tr;
        break;
      }
    }
    out.trajectory.push_back({s, a, chosen->reward});
    out.discounted_return += discount * chosen->reward;
    discount *= spec.gamma;
    s = chosen->next;
    ++t;
  }
}

}  // namespace safeplan
