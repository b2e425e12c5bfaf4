#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeplan/analysis.hpp"
#include "safeplan/environments.hpp"
#include "safeplan/exact.hpp"
#include "safeplan/mdp.hpp"

using namespace safeplan;

namespace {

Policy counter_policy(const MdpSpec& spec, const std::string& s1_action) {
  Policy pi;
  pi.choice = {spec.action_id(s1_action), spec.action_id("R"), 0, 0};
  return pi;
}

const PropertyCheck& find_check(const PropertyReport& report, const std::string& property) {
  for (const PropertyCheck& check : report.checks) {
    if (check.property == property) return check;
  }
  static const PropertyCheck missing;
  REQUIRE_MESSAGE(false, "no check named " << property);
  return missing;
}

/// One choice state with a free ride and a strictly better free ride, plus an
/// unreachable failure terminal. Picking the worse ride is exactly the kind
/// of candidate the performance and argmax checks must flag.
MdpSpec build_two_door() {
  MdpSpec spec;
  spec.gamma = 0.5;
  spec.state_names = {"A", "F", "G"};
  spec.action_names = {"d0", "d1"};
  spec.terminal = {0, 1, 1};
  spec.failure = {0, 1, 0};
  spec.actions = {{0, 1}, {0}, {0}};
  spec.transitions.resize(3);
  spec.terminal_rewards.resize(3);
  spec.transitions[0] = {
      {{2, 1.0, 0.0}},
      {{2, 1.0, 1.0}},
  };
  spec.terminal_rewards[1] = {0.0};
  spec.terminal_rewards[2] = {0.0};
  return spec;
}

}  // namespace

TEST_CASE("sweep rejects malformed threshold lists and start states") {
  const MdpSpec spec = build_counter_mdp({});
  const SweepOptions options;
  CHECK_THROWS_AS(sweep_theta(spec, options, {0.5, 1.0}, 0), std::invalid_argument);
  CHECK_THROWS_AS(sweep_theta(spec, options, {-0.1}, 0), std::invalid_argument);
  CHECK_THROWS_AS(sweep_theta(spec, options, {0.5, 0.4}, 0), std::invalid_argument);
  CHECK_THROWS_AS(sweep_theta(spec, options, {0.5}, spec.state_id("X")), std::invalid_argument);
  CHECK_THROWS_AS(sweep_theta(spec, options, {0.5}, 99), std::invalid_argument);
}

TEST_CASE("sweep records are identical no matter how many workers run") {
  const MdpSpec spec = build_counter_mdp({});
  const std::vector<double> thetas{0.1, 0.3, 0.5, 0.7, 0.9};

  for (const SolverMode mode : {SolverMode::naive, SolverMode::recursive}) {
    CAPTURE(to_string(mode));
    SweepOptions options;
    options.mode = mode;
    options.iterations = mode == SolverMode::naive ? 50 : 15;
    const std::vector<SweepRecord> solo = sweep_theta(spec, options, thetas, 0);
    options.jobs = 4;
    const std::vector<SweepRecord> pooled = sweep_theta(spec, options, thetas, 0);
    options.jobs = 64;
    const std::vector<SweepRecord> flooded = sweep_theta(spec, options, thetas, 0);

    REQUIRE(solo.size() == thetas.size());
    for (const auto* batch : {&pooled, &flooded}) {
      for (std::size_t i = 0; i < solo.size(); ++i) {
        CHECK((*batch)[i].theta == solo[i].theta);
        CHECK((*batch)[i].p_true == solo[i].p_true);
        CHECK((*batch)[i].p_est == solo[i].p_est);
        CHECK((*batch)[i].v_true == solo[i].v_true);
        CHECK((*batch)[i].v_est == solo[i].v_est);
        CHECK((*batch)[i].converged == solo[i].converged);
        CHECK((*batch)[i].violation == solo[i].violation);
      }
    }
  }
}

TEST_CASE("a permissive counter sweep recovers the risky optimum with honest estimates") {
  const MdpSpec spec = build_counter_mdp({});
  SweepOptions options;
  options.iterations = 50;
  const std::vector<SweepRecord> records = sweep_theta(spec, options, {0.999}, 0);
  REQUIRE(records.size() == 1);
  const SweepRecord& rec = records[0];
  const ClosedFormCounter cf = closed_form_counter(0.7, 0.95);
  CHECK(rec.error.empty());
  CHECK(rec.converged);
  CHECK(std::abs(rec.p_true - cf.p_ll) < 1e-10);
  CHECK(std::abs(rec.p_est - rec.p_true) < 1e-6);
  CHECK(std::abs(rec.v_true - cf.q_ll) < 1e-10);
  CHECK(std::abs(rec.v_est - rec.v_true) < 1e-6);
  CHECK_FALSE(rec.violation);
}

TEST_CASE("the naive cliffworld sweep admits violations and never converges") {
  const MdpSpec spec = build_cliffworld({});
  const StateId start = cliffworld_start_state(spec, {});
  std::vector<double> grid;
  for (int i = 0; i < 100; ++i) grid.push_back(i * 0.01);

  SweepOptions options;
  options.iterations = 50;
  const std::vector<SweepRecord> records = sweep_theta(spec, options, grid, start);
  REQUIRE(records.size() == grid.size());
  for (const SweepRecord& rec : records) {
    CAPTURE(rec.theta);
    CHECK(rec.error.empty());
    CHECK_FALSE(rec.converged);
  }
  for (const int i : {75, 76, 77}) {
    CAPTURE(i);
    CHECK(records[static_cast<std::size_t>(i)].violation);
  }
}

TEST_CASE("sweep captures evaluation errors instead of dying") {
  MdpSpec spec = build_counter_mdp({});
  spec.transitions[0][0] = {{spec.state_id("s1"), 1.0, 0.0}};
  REQUIRE(validate(spec).empty());
  SweepOptions options;
  options.iterations = 50;
  const std::vector<SweepRecord> records = sweep_theta(spec, options, {0.95}, 0);
  REQUIRE(records.size() == 1);
  CHECK_FALSE(records[0].error.empty());
  CHECK(std::isnan(records[0].p_true));
}

TEST_CASE("status labels render as kebab-case words") {
  CHECK(std::string(to_string(CheckStatus::pass)) == "pass");
  CHECK(std::string(to_string(CheckStatus::fail)) == "fail");
  CHECK(std::string(to_string(CheckStatus::vacuous_pass)) == "vacuous-pass");
  CHECK(std::string(to_string(CheckStatus::not_checked)) == "not-checked");
  CHECK(std::string(to_string(CheckStatus::not_evaluable)) == "not-evaluable");
  CHECK(std::string(to_string(SolverMode::naive)) == "naive");
  CHECK(std::string(to_string(SolverMode::recursive)) == "recursive");
}

TEST_CASE("performance and safety hold for the low-risk counter policy") {
  const MdpSpec spec = build_counter_mdp({});
  const PropertyReport report = check_p1(spec, 0.85, counter_policy(spec, "R"));
  CHECK_FALSE(report.header.empty());
  CHECK(find_check(report, "p1-performance").status == CheckStatus::pass);
  CHECK(find_check(report, "p1-safety").status == CheckStatus::pass);
  CHECK(find_check(report, "p1-argmax").status == CheckStatus::pass);

  const PropertyReport loose = check_p1(spec, 0.95, counter_policy(spec, "L"));
  CHECK(find_check(loose, "p1-performance").status == CheckStatus::pass);
  CHECK(find_check(loose, "p1-safety").status == CheckStatus::pass);
  CHECK(find_check(loose, "p1-argmax").status == CheckStatus::pass);
}

TEST_CASE("a dominated candidate fails the performance and argmax checks by name") {
  const MdpSpec spec = build_two_door();
  REQUIRE(validate(spec).empty());
  Policy candidate;
  candidate.choice = {0, 0, 0};

  const PropertyReport report = check_p1(spec, 0.5, candidate);
  const PropertyCheck& performance = find_check(report, "p1-performance");
  CHECK(performance.status == CheckStatus::fail);
  CHECK(performance.detail.find("A") != std::string::npos);
  CHECK(find_check(report, "p1-safety").status == CheckStatus::pass);
  const PropertyCheck& argmax = find_check(report, "p1-argmax");
  CHECK(argmax.status == CheckStatus::fail);
  CHECK(argmax.detail.find("A") != std::string::npos);

  const PropertyReport p2 = check_p2(spec, 0.5, candidate);
  CHECK(p2.checks.size() == 1);
  CHECK(p2.checks[0].status == CheckStatus::vacuous_pass);
}

TEST_CASE("oversized policy spaces are reported unchecked rather than sampled") {
  const MdpSpec spec = build_counter_mdp({});
  const PropertyReport p1 = check_p1(spec, 0.85, counter_policy(spec, "R"), 1);
  for (const PropertyCheck& check : p1.checks) {
    CHECK(check.status == CheckStatus::not_checked);
  }
  const MdpSpec cliff = build_cliffworld({});
  Policy up;
  up.choice.assign(static_cast<std::size_t>(cliff.state_count()), 0);
  const PropertyReport p2 = check_p2(cliff, 0.0, up, 10);
  CHECK(p2.checks[0].status == CheckStatus::not_checked);
}

TEST_CASE("policies that only differ on unsafe states cannot be safer there") {
  const MdpSpec spec = build_counter_mdp({});

  const PropertyReport held = check_p2(spec, 0.5, counter_policy(spec, "R"));
  REQUIRE(held.checks.size() == 1);
  CHECK(held.checks[0].status == CheckStatus::pass);

  const PropertyReport broken = check_p2(spec, 0.5, counter_policy(spec, "L"));
  REQUIRE(broken.checks.size() == 1);
  CHECK(broken.checks[0].status == CheckStatus::fail);
  CHECK(broken.checks[0].detail.find("s1") != std::string::npos);

  const PropertyReport vacuous = check_p2(spec, 0.95, counter_policy(spec, "R"));
  REQUIRE(vacuous.checks.size() == 1);
  CHECK(vacuous.checks[0].status == CheckStatus::vacuous_pass);
  CHECK(vacuous.checks[0].detail.find("no non-terminal unsafe state") != std::string::npos);
}

TEST_CASE("threshold monotonicity measured on recursive solver outputs") {
  const MdpSpec spec = build_counter_mdp({});
  const PropertyReport report = check_p3(spec, {{0.5, 0.95}});
  REQUIRE(report.checks.size() == 1);
  CHECK(report.checks[0].property == "p3(0.5,0.95)");
  CHECK(report.checks[0].status == CheckStatus::pass);
  CHECK(report.checks[0].detail.find("[R,R,L,L]") != std::string::npos);
  CHECK(report.checks[0].detail.find("[L,R,L,L]") != std::string::npos);

  CHECK_THROWS_AS(check_p3(spec, {{0.9, 0.5}}), std::invalid_argument);
  CHECK_THROWS_AS(check_p3(spec, {{0.5, 1.0}}), std::invalid_argument);
}

TEST_CASE("monotonicity pairs are skipped when a solver cannot settle") {
  const MdpSpec spec = build_counter_mdp({});
  P3Config config;
  config.mode = SolverMode::naive;
  config.iterations = 50;
  const PropertyReport report = check_p3(spec, {{0.85, 0.9}}, config);
  REQUIRE(report.checks.size() == 1);
  CHECK(report.checks[0].status == CheckStatus::not_evaluable);
  CHECK(report.checks[0].detail.find("did not converge") != std::string::npos);
}

TEST_CASE("fixed-point residuals separate settled policies from contested ones") {
  const MdpSpec spec = build_counter_mdp({});

  const Policy pi_l = counter_policy(spec, "L");
  const ValueTables exact_l = to_value_tables(evaluate_policy(spec, pi_l));
  const P4Residual settled = check_p4_residual(spec, 0.95, exact_l, pi_l);
  CHECK(settled.residual < 1e-10);
  CHECK_FALSE(settled.policy_changed);
  CHECK(settled.induced == pi_l);

  const P4Residual flipped_l = check_p4_residual(spec, 0.85, exact_l, pi_l);
  CHECK(flipped_l.policy_changed);
  CHECK(flipped_l.induced.choice[0] == spec.action_id("R"));

  const Policy pi_r = counter_policy(spec, "R");
  const ValueTables exact_r = to_value_tables(evaluate_policy(spec, pi_r));
  const P4Residual flipped_r = check_p4_residual(spec, 0.85, exact_r, pi_r);
  CHECK(flipped_r.policy_changed);
  CHECK(flipped_r.induced.choice[0] == spec.action_id("L"));
}
