#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "safeplan/environments.hpp"
#include "safeplan/mdp.hpp"
#include "safeplan/mdp_io.hpp"

using namespace safeplan;

namespace {

bool mentions(const std::vector<std::string>& issues, const std::string& needle) {
  for (const std::string& issue : issues) {
    if (issue.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("counter and cliffworld specs pass validation") {
  CHECK(validate(build_counter_mdp({})).empty());
  CHECK(validate(build_cliffworld({})).empty());
}

TEST_CASE("validate names the offending state or action") {
  MdpSpec spec = build_counter_mdp({});

  SUBCASE("failure state that is not terminal") {
    spec.terminal[static_cast<std::size_t>(spec.state_id("X"))] = 0;
    spec.transitions[static_cast<std::size_t>(spec.state_id("X"))].push_back(
        {{spec.state_id("X"), 1.0, 0.0}});
    spec.terminal_rewards[static_cast<std::size_t>(spec.state_id("X"))].clear();
    CHECK(mentions(validate(spec), "failure state X is not terminal"));
  }

  SUBCASE("distribution mass off by more than 1e-12") {
    spec.transitions[0][0][0].prob += 1e-6;
    CHECK(mentions(validate(spec), "sums to"));
  }

  SUBCASE("negative transition mass") {
    spec.transitions[0][0][0].prob = -spec.transitions[0][0][0].prob;
    CHECK(mentions(validate(spec), "negative mass"));
  }

  SUBCASE("duplicate state names") {
    spec.state_names[1] = spec.state_names[0];
    CHECK(mentions(validate(spec), "duplicate state name 's1'"));
  }

  SUBCASE("names must avoid whitespace and comment markers") {
    spec.state_names[0] = "s 1";
    CHECK(mentions(validate(spec), "unusable name"));
  }

  SUBCASE("terminal self-reward rows must match the action set") {
    spec.terminal_rewards[static_cast<std::size_t>(spec.state_id("G"))].clear();
    CHECK(mentions(validate(spec), "needs one self-reward per available action"));
  }

  SUBCASE("action ids must stay strictly ascending") {
    std::size_t s1 = static_cast<std::size_t>(spec.state_id("s1"));
    std::swap(spec.actions[s1][0], spec.actions[s1][1]);
    CHECK(mentions(validate(spec), "not strictly ascending"));
  }

  SUBCASE("gamma outside the discounted range") {
    spec.gamma = 1.0;
    CHECK(mentions(validate(spec), "gamma"));
  }

  SUBCASE("shape mismatches are reported before field checks") {
    spec.terminal.pop_back();
    const std::vector<std::string> issues = validate(spec);
    REQUIRE(issues.size() == 1);
    CHECK(mentions(issues, "terminal has 3 entries for 4 states"));
  }
}

TEST_CASE("fresh value tables fix terminal rows and zero the rest") {
  const MdpSpec spec = build_counter_mdp({});
  const ValueTables t = make_value_tables(spec);
  const std::size_t s1 = static_cast<std::size_t>(spec.state_id("s1"));
  const std::size_t x = static_cast<std::size_t>(spec.state_id("X"));
  const std::size_t g = static_cast<std::size_t>(spec.state_id("G"));
  CHECK(t.q[s1][0] == 0.0);
  CHECK(t.q[s1][1] == 0.0);
  CHECK(t.p[s1][0] == 0.0);
  CHECK(t.q[x][0] == 0.0);
  CHECK(t.p[x][0] == 1.0);
  CHECK(t.q[g][0] == 0.0);
  CHECK(t.p[g][0] == 0.0);
}

TEST_CASE("sup_diff reports the largest entry change") {
  ActionTable a{{1.0, 2.0}, {3.0}};
  ActionTable b{{1.0, 2.5}, {2.8}};
  CHECK(sup_diff(a, b) == doctest::Approx(0.5));
  CHECK(sup_diff(a, a) == 0.0);
}

TEST_CASE("mdp text round trip preserves the model byte for byte") {
  for (const MdpSpec& spec : {build_counter_mdp({}), build_cliffworld({})}) {
    const std::string text = write_mdp_text(spec);
    const MdpSpec back = read_mdp_text(text);
    CHECK(write_mdp_text(back) == text);
    CHECK(back.state_names == spec.state_names);
    CHECK(back.action_names == spec.action_names);
    CHECK(back.terminal == spec.terminal);
    CHECK(back.failure == spec.failure);
    CHECK(back.actions == spec.actions);
    CHECK(back.terminal_rewards == spec.terminal_rewards);
    REQUIRE(back.transitions.size() == spec.transitions.size());
    for (std::size_t s = 0; s < spec.transitions.size(); ++s) {
      REQUIRE(back.transitions[s].size() == spec.transitions[s].size());
      for (std::size_t i = 0; i < spec.transitions[s].size(); ++i) {
        REQUIRE(back.transitions[s][i].size() == spec.transitions[s][i].size());
        for (std::size_t k = 0; k < spec.transitions[s][i].size(); ++k) {
          CHECK(back.transitions[s][i][k].next == spec.transitions[s][i][k].next);
          CHECK(back.transitions[s][i][k].prob == spec.transitions[s][i][k].prob);
          CHECK(back.transitions[s][i][k].reward == spec.transitions[s][i][k].reward);
        }
      }
    }
    CHECK(back.gamma == spec.gamma);
  }
}

TEST_CASE("mdp text reader rejects malformed input") {
  CHECK_THROWS_AS(read_mdp_text(std::string("states\ns1\n")), std::runtime_error);
  const MdpSpec spec = build_counter_mdp({});
  std::string text = write_mdp_text(spec);
  text.replace(text.find("0.95"), 4, "oops");
  CHECK_THROWS_AS(read_mdp_text(text), std::runtime_error);
}

TEST_CASE("episodes are reproducible and stop at terminals") {
  const MdpSpec spec = build_counter_mdp({});
  Policy pi;
  pi.choice = {spec.action_id("R"), spec.action_id("R"), spec.action_id("L"), spec.action_id("L")};

  const EpisodeOutcome a = simulate_episode(spec, pi, spec.state_id("s1"), 17);
  const EpisodeOutcome b = simulate_episode(spec, pi, spec.state_id("s1"), 17);
  REQUIRE(a.trajectory.size() == b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    CHECK(a.trajectory[i].state == b.trajectory[i].state);
    CHECK(a.trajectory[i].action == b.trajectory[i].action);
    CHECK(a.trajectory[i].reward == b.trajectory[i].reward);
  }
  CHECK(a.discounted_return == b.discounted_return);
  CHECK(a.hit_failure == b.hit_failure);

  REQUIRE(a.length.has_value());
  const StateId last = a.trajectory.back().state;
  CHECK(spec.is_terminal(last));
  CHECK(a.hit_failure == spec.is_failure(last));
  CHECK(*a.length + 1 == static_cast<std::int64_t>(a.trajectory.size()));

  SUBCASE("starting on a terminal yields the self-reward row only") {
    const EpisodeOutcome g = simulate_episode(spec, pi, spec.state_id("G"), 3);
    REQUIRE(g.trajectory.size() == 1);
    CHECK(g.trajectory[0].reward == 0.0);
    CHECK(g.discounted_return == 0.0);
    CHECK_FALSE(g.hit_failure);
    CHECK(g.length == 0);
  }

  SUBCASE("episodes truncate instead of running forever") {
    MdpSpec loop = spec;
    const std::size_t s1 = static_cast<std::size_t>(loop.state_id("s1"));
    const std::size_t ri = static_cast<std::size_t>(loop.action_index(loop.state_id("s1"), loop.action_id("R")));
    loop.transitions[s1][ri] = {{loop.state_id("s1"), 1.0, -1.0}};
    Policy stay = pi;
    stay.choice[s1] = loop.action_id("R");
    const EpisodeOutcome t = simulate_episode(loop, stay, loop.state_id("s1"), 5, 10);
    CHECK(t.truncated);
    CHECK_FALSE(t.length.has_value());
    CHECK(t.trajectory.size() == 10);
  }

  SUBCASE("bad arguments are rejected") {
    CHECK_THROWS_AS(simulate_episode(spec, pi, -1, 0), std::invalid_argument);
    CHECK_THROWS_AS(simulate_episode(spec, pi, 0, 0, 0), std::invalid_argument);
  }
}

TEST_CASE("uniform draws stay in the half-open unit interval") {
  std::mt19937_64 gen(123);
  for (int i = 0; i < 1000; ++i) {
    const double u = detail::uniform01(gen);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("doubles print without locale drift") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double_9(0.85) == "0.85");
  CHECK(format_double_9(1.0 / 3.0) == "0.333333333");
  CHECK(format_double_9(0.0) == "0");
  CHECK(format_double_9(0.06 + 5e-18) == "0.06");
}
