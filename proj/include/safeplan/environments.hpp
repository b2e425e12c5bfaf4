#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeplan/mdp.hpp"

namespace safeplan {

/// Two-lane counter machine: from s1, L reaches the failure terminal X with
/// probability p and s2 otherwise; R reaches s2 with probability p and X
/// otherwise. From s2 the single action R reaches the safe terminal G with
/// probability 1-p and returns to s1 otherwise. Every transition pays -1.
struct CounterParams {
  double p = 0.7;
  double gamma = 0.95;
};

inline MdpSpec build_counter_mdp(const CounterParams& params) {
  if (!(params.p > 0.0 && params.p < 1.0)) {
    throw std::invalid_argument("build_counter_mdp: p must lie strictly inside (0,1)");
  }
  if (!(params.gamma >= 0.0 && params.gamma < 1.0)) {
    throw std::invalid_argument("build_counter_mdp: gamma must lie in [0,1)");
  }
  const double p = params.p;
  const double q = 1.0 - p;

  MdpSpec spec;
  spec.gamma = params.gamma;
  spec.state_names = {"s1", "s2", "X", "G"};
  spec.action_names = {"L", "R"};
  spec.terminal = {0, 0, 1, 1};
  spec.failure = {0, 0, 1, 0};
  spec.actions = {{0, 1}, {1}, {0}, {0}};
  spec.transitions.resize(4);
  spec.terminal_rewards.resize(4);
  spec.transitions[0] = {
      {{1, q, -1.0}, {2, p, -1.0}},
      {{1, p, -1.0}, {2, q, -1.0}},
  };
  spec.transitions[1] = {
      {{0, p, -1.0}, {3, q, -1.0}},
  };
  spec.terminal_rewards[2] = {0.0};
  spec.terminal_rewards[3] = {0.0};
  return spec;
}

/// Grid coordinates with x growing rightward and y growing upward.
struct Cell {
  int x = 0;
  int y = 0;

  bool operator==(const Cell&) const = default;
  bool operator<(const Cell& o) const { return y != o.y ? y < o.y : x < o.x; }
};

/// Whether slip mass spreads over all four directions or only the three
/// directions other than the chosen one.
enum class SlipMode { include, exclude };

/// Slippery grid with one failure terminal shared by all cliff cells and one
/// safe terminal for the goal. Walking off the grid leaves the agent in
/// place. Every transition pays -1; both terminals pay 0.
struct CliffworldParams {
  int width = 4;
  int height = 3;
  double slip = 0.5;
  double gamma = 0.95;
  Cell start_cell{0, 0};
  Cell goal_cell{3, 0};
  std::vector<Cell> cliff_cells{{1, 0}, {2, 0}};
  SlipMode slip_mode = SlipMode::include;
};

inline MdpSpec build_cliffworld(const CliffworldParams& params) {
  if (params.width < 2 || params.height < 2) {
    throw std::invalid_argument("build_cliffworld: grid must be at least 2x2");
  }
  if (!(params.slip >= 0.0 && params.slip <= 1.0)) {
    throw std::invalid_argument("build_cliffworld: slip must lie in [0,1]");
  }
  if (!(params.gamma >= 0.0 && params.gamma < 1.0)) {
    throw std::invalid_argument("build_cliffworld: gamma must lie in [0,1)");
  }
  auto inside = [&params](const Cell& c) {
    return c.x >= 0 && c.x < params.width && c.y >= 0 && c.y < params.height;
  };
  if (!inside(params.start_cell)) throw std::invalid_argument("build_cliffworld: start cell outside grid");
  if (!inside(params.goal_cell)) throw std::invalid_argument("build_cliffworld: goal cell outside grid");
  std::map<Cell, bool> cliff;
  for (const Cell& c : params.cliff_cells) {
    if (!inside(c)) throw std::invalid_argument("build_cliffworld: cliff cell outside grid");
    if (!cliff.emplace(c, true).second) throw std::invalid_argument("build_cliffworld: duplicate cliff cell");
    if (c == params.goal_cell) throw std::invalid_argument("build_cliffworld: goal cell marked as cliff");
    if (c == params.start_cell) throw std::invalid_argument("build_cliffworld: start cell marked as cliff");
  }
  if (params.start_cell == params.goal_cell) {
    throw std::invalid_argument("build_cliffworld: start cell equals goal cell");
  }

  MdpSpec spec;
  spec.gamma = params.gamma;
  spec.action_names = {"up", "down", "left", "right"};

  std::map<Cell, StateId> walkable;
  for (int y = 0; y < params.height; ++y) {
    for (int x = 0; x < params.width; ++x) {
      const Cell c{x, y};
      if (cliff.count(c) || c == params.goal_cell) continue;
      walkable.emplace(c, static_cast<StateId>(spec.state_names.size()));
      spec.state_names.push_back("c_" + std::to_string(x) + "_" + std::to_string(y));
    }
  }
  const StateId cliff_id = static_cast<StateId>(spec.state_names.size());
  spec.state_names.push_back("CLIFF");
  const StateId goal_id = static_cast<StateId>(spec.state_names.size());
  spec.state_names.push_back("GOAL");

  const std::size_t n = spec.state_names.size();
  spec.terminal.assign(n, 0);
  spec.failure.assign(n, 0);
  spec.terminal[static_cast<std::size_t>(cliff_id)] = 1;
  spec.failure[static_cast<std::size_t>(cliff_id)] = 1;
  spec.terminal[static_cast<std::size_t>(goal_id)] = 1;
  spec.actions.assign(n, {0, 1, 2, 3});
  spec.transitions.resize(n);
  spec.terminal_rewards.resize(n);
  spec.actions[static_cast<std::size_t>(cliff_id)] = {0};
  spec.actions[static_cast<std::size_t>(goal_id)] = {0};
  spec.terminal_rewards[static_cast<std::size_t>(cliff_id)] = {0.0};
  spec.terminal_rewards[static_cast<std::size_t>(goal_id)] = {0.0};

  const int dx[4] = {0, 0, -1, 1};
  const int dy[4] = {1, -1, 0, 0};
  auto land = [&](const Cell& from, int dir) {
    const Cell to{from.x + dx[dir], from.y + dy[dir]};
    const Cell dest = inside(to) ? to : from;
    if (cliff.count(dest)) return cliff_id;
    if (dest == params.goal_cell) return goal_id;
    return walkable.at(dest);
  };

  for (const auto& [cell, sid] : walkable) {
    auto& rows = spec.transitions[static_cast<std::size_t>(sid)];
    rows.resize(4);
    for (int a = 0; a < 4; ++a) {
      std::map<StateId, double> mass;
      for (int dir = 0; dir < 4; ++dir) {
        double m = 0.0;
        if (params.slip_mode == SlipMode::include) {
          m = params.slip / 4.0 + (dir == a ? 1.0 - params.slip : 0.0);
        } else {
          m = dir == a ? 1.0 - params.slip : params.slip / 3.0;
        }
        if (m > 0.0) mass[land(cell, dir)] += m;
      }
      for (const auto& [next, prob] : mass) {
        rows[static_cast<std::size_t>(a)].push_back({next, prob, -1.0});
      }
    }
  }
  return spec;
}

/// State id of the start cell in a spec built from the same parameters.
inline StateId cliffworld_start_state(const MdpSpec& spec, const CliffworldParams& params) {
  return spec.state_id("c_" + std::to_string(params.start_cell.x) + "_" + std::to_string(params.start_cell.y));
}

}  // namespace safeplan
