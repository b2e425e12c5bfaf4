#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "safeplan/environments.hpp"
#include "safeplan/exact.hpp"
#include "safeplan/naive.hpp"

using namespace safeplan;

namespace {

Policy counter_policy(const MdpSpec& spec, const std::string& s1_action) {
  Policy pi;
  pi.choice = {spec.action_id(s1_action), spec.action_id("R"), 0, 0};
  return pi;
}

std::vector<Policy> policy_cycle(const std::vector<Policy>& protos, int length) {
  std::vector<Policy> seq;
  for (int i = 0; i < length; ++i) seq.push_back(protos[static_cast<std::size_t>(i) % protos.size()]);
  return seq;
}

}  // namespace

TEST_CASE("constrained sets keep exactly the actions at or under the threshold") {
  const MdpSpec spec = build_counter_mdp({});
  ActionTable p = make_value_tables(spec).p;
  p[0] = {0.9, 0.6};
  p[1] = {0.4};
  const ConstrainedActionSets sets = constrained_sets(spec, p, 0.6);
  CHECK(sets.allowed[0] == std::vector<char>{0, 1});
  CHECK(sets.allowed[1] == std::vector<char>{1});
  CHECK(sets.allowed[2] == std::vector<char>{0});
  CHECK(sets.allowed[3] == std::vector<char>{1});
}

TEST_CASE("policy extraction maximizes within the set and falls back to the least risky action") {
  const MdpSpec spec = build_counter_mdp({});
  ValueTables t = make_value_tables(spec);

  SUBCASE("argmax with ties resolved to the lowest index") {
    t.q[0] = {-1.0, -1.0};
    const Policy pi = get_policy(spec, constrained_sets(spec, t.p, 0.5), t);
    CHECK(pi.choice[0] == spec.action_id("L"));
  }

  SUBCASE("strictly better later action wins") {
    t.q[0] = {-2.0, -1.5};
    const Policy pi = get_policy(spec, constrained_sets(spec, t.p, 0.5), t);
    CHECK(pi.choice[0] == spec.action_id("R"));
  }

  SUBCASE("an empty set yields the action of least estimated risk") {
    t.p[0] = {0.9, 0.6};
    t.q[0] = {-1.0, -5.0};
    const Policy pi = get_policy(spec, constrained_sets(spec, t.p, 0.5), t);
    CHECK(pi.choice[0] == spec.action_id("R"));
  }
}

TEST_CASE("one threshold backup reproduces the alternating counter choices") {
  const MdpSpec spec = build_counter_mdp({});
  const double theta = 0.85;

  const ValueTables from_r = to_value_tables(evaluate_policy(spec, counter_policy(spec, "R")));
  const auto [next_r, chosen_r] = bellman_step(spec, theta, from_r);
  CHECK(chosen_r.choice[0] == spec.action_id("L"));

  const ValueTables from_l = to_value_tables(evaluate_policy(spec, counter_policy(spec, "L")));
  const auto [next_l, chosen_l] = bellman_step(spec, theta, from_l);
  CHECK(chosen_l.choice[0] == spec.action_id("R"));
}

TEST_CASE("oscillation detection scans the tail for short cycles") {
  const MdpSpec spec = build_counter_mdp({});
  const Policy a = counter_policy(spec, "L");
  const Policy b = counter_policy(spec, "R");

  CHECK(detail::detect_oscillation(policy_cycle({a, b}, 20)) == 2);
  CHECK(detail::detect_oscillation(policy_cycle({a}, 20)) == std::nullopt);
  CHECK(detail::detect_oscillation(policy_cycle({a, b, b}, 21)) == 3);
  CHECK(detail::detect_oscillation(policy_cycle({a, b}, 3)) == std::nullopt);
  CHECK(detail::detect_oscillation({}) == std::nullopt);

  std::vector<Policy> long_cycle;
  for (int i = 0; i < 40; ++i) {
    long_cycle.push_back(i % 10 == 0 ? a : b);
  }
  CHECK(detail::detect_oscillation(long_cycle) == std::nullopt);
}

TEST_CASE("naive value iteration near the threshold keeps oscillating") {
  const MdpSpec spec = build_counter_mdp({});
  const NaiveViResult r = naive_value_iteration(spec, 0.85, 50);
  CHECK_FALSE(r.trace.converged);
  CHECK(r.trace.oscillation_period == std::nullopt);
  CHECK(r.trace.iterations.size() == 50);
  CHECK(r.trace.final_q_change > 1e-8);

  CHECK(r.trace.iterations[0].policy.choice[0] == spec.action_id("L"));
  const ActionMask& first = r.trace.iterations[0].constraint_ok;
  CHECK(first[0] == std::vector<char>{1, 1});
  CHECK(first[1] == std::vector<char>{1});
  CHECK(first[2] == std::vector<char>{0});
  CHECK(first[3] == std::vector<char>{1});
}

TEST_CASE("naive value iteration away from the threshold converges to the frozen policies") {
  const MdpSpec spec = build_counter_mdp({});
  const ClosedFormCounter cf = closed_form_counter(0.7, 0.95);

  SUBCASE("loose threshold recovers the unconstrained optimum") {
    const NaiveViResult r = naive_value_iteration(spec, 0.95, 50);
    CHECK(r.trace.converged);
    CHECK(r.policy.choice[0] == spec.action_id("L"));
    CHECK(std::abs(r.tables.q[0][0] - cf.q_ll) < 1e-6);
    CHECK(std::abs(r.tables.p[0][0] - cf.p_ll) < 1e-6);
  }

  SUBCASE("tight threshold falls back to the least risky policy") {
    const NaiveViResult r = naive_value_iteration(spec, 0.5, 50);
    CHECK(r.trace.converged);
    CHECK(r.policy.choice[0] == spec.action_id("R"));
    CHECK(std::abs(r.tables.p[0][1] - cf.p_rr) < 1e-6);
    CHECK(std::abs(r.tables.q[0][1] - cf.q_rr) < 1e-6);
  }

  SUBCASE("converged runs sit near the fixed point") {
    const NaiveViResult r = naive_value_iteration(spec, 0.5, 50);
    const auto [next, pi] = bellman_step(spec, 0.5, r.tables);
    CHECK(sup_diff(next.q, r.tables.q) < 1e-7);
    CHECK(sup_diff(next.p, r.tables.p) < 1e-7);
    CHECK(pi == r.policy);
  }
}

TEST_CASE("a fully permissive threshold matches unconstrained value iteration bitwise") {
  const MdpSpec spec = build_counter_mdp({});
  const int sweeps = 30;
  const NaiveViResult r = naive_value_iteration(spec, 0.9999, sweeps);

  ValueTables values = make_value_tables(spec);
  Policy pi;
  for (int it = 0; it < sweeps; ++it) {
    pi.choice.assign(static_cast<std::size_t>(spec.state_count()), 0);
    for (std::size_t s = 0; s < pi.choice.size(); ++s) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < spec.actions[s].size(); ++i) {
        if (values.q[s][i] > values.q[s][best]) best = i;
      }
      pi.choice[s] = spec.actions[s][best];
    }
    values = detail::backup(spec, values, pi);
  }
  CHECK(r.tables.q == values.q);
  CHECK(r.tables.p == values.p);
}

TEST_CASE("reachability initialization shapes the start but not the destination") {
  const MdpSpec spec = build_counter_mdp({});

  NaiveInit constant;
  constant.kind = NaiveInit::Kind::constant;
  constant.constant = 0.5;
  const NaiveViResult a = naive_value_iteration(spec, 0.5, 50, constant);
  CHECK(a.policy.choice[0] == spec.action_id("R"));
  CHECK(a.trace.iterations[0].values.p[0][0] == 0.5);
  CHECK(a.trace.iterations[0].values.p[2][0] == 1.0);
  CHECK(a.trace.iterations[0].values.p[3][0] == 0.0);

  NaiveInit uniform;
  uniform.kind = NaiveInit::Kind::uniform;
  uniform.seed = 3;
  const NaiveViResult b = naive_value_iteration(spec, 0.5, 50, uniform);
  const NaiveViResult c = naive_value_iteration(spec, 0.5, 50, uniform);
  CHECK(b.tables.q == c.tables.q);
  CHECK(b.tables.p == c.tables.p);
  CHECK(b.policy == c.policy);
  CHECK(b.trace.iterations[0].values.p[0][0] != 0.0);

  uniform.seed = 4;
  const NaiveViResult d = naive_value_iteration(spec, 0.5, 50, uniform);
  CHECK(d.trace.iterations[0].values.p[0][0] != b.trace.iterations[0].values.p[0][0]);
}

TEST_CASE("naive solvers reject out-of-range arguments") {
  const MdpSpec spec = build_counter_mdp({});
  CHECK_THROWS_AS(naive_value_iteration(spec, 1.0, 10), std::invalid_argument);
  CHECK_THROWS_AS(naive_value_iteration(spec, -0.1, 10), std::invalid_argument);
  CHECK_THROWS_AS(naive_value_iteration(spec, 0.5, 0), std::invalid_argument);
  NaiveInit bad;
  bad.kind = NaiveInit::Kind::constant;
  bad.constant = 1.5;
  CHECK_THROWS_AS(naive_value_iteration(spec, 0.5, 10, bad), std::invalid_argument);
  CHECK_THROWS_AS(naive_policy_iteration(spec, 1.0, counter_policy(spec, "R"), 10), std::invalid_argument);
  CHECK_THROWS_AS(naive_policy_iteration(spec, 0.5, counter_policy(spec, "R"), 0), std::invalid_argument);
}

TEST_CASE("naive policy iteration alternates forever near the threshold") {
  const MdpSpec spec = build_counter_mdp({});
  const SolveTrace trace = naive_policy_iteration(spec, 0.85, counter_policy(spec, "R"), 20);
  REQUIRE(trace.iterations.size() == 20);
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    const ActionId expected = i % 2 == 0 ? spec.action_id("R") : spec.action_id("L");
    CHECK(trace.iterations[i].policy.choice[0] == expected);
  }
  CHECK_FALSE(trace.converged);
  CHECK(trace.oscillation_period == 2);

  const auto& first = trace.iterations[0];
  CHECK(first.constraint_ok[0] == std::vector<char>{1, 1});
  const auto& second = trace.iterations[1];
  CHECK(second.constraint_ok[0] == std::vector<char>{0, 1});
}

TEST_CASE("naive policy iteration settles whenever the risky action stays cut or stays allowed") {
  const MdpSpec spec = build_counter_mdp({});

  for (const double theta : {0.75, 0.78, 0.80, 0.82}) {
    CAPTURE(theta);
    const SolveTrace trace = naive_policy_iteration(spec, theta, counter_policy(spec, "R"), 20);
    CHECK(trace.converged);
    CHECK(trace.final_policy.choice[0] == spec.action_id("R"));
    CHECK(trace.oscillation_period == std::nullopt);
  }

  for (const double theta : {0.83, 0.84, 0.86, 0.88}) {
    CAPTURE(theta);
    const SolveTrace trace = naive_policy_iteration(spec, theta, counter_policy(spec, "R"), 20);
    CHECK_FALSE(trace.converged);
    CHECK(trace.oscillation_period == 2);
  }

  const SolveTrace loose = naive_policy_iteration(spec, 0.9, counter_policy(spec, "R"), 20);
  CHECK(loose.converged);
  CHECK(loose.final_policy.choice[0] == spec.action_id("L"));
}
