#pragma once

#include <charconv>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "safeplan/mdp.hpp"

namespace safeplan {

/// Shortest decimal form that parses back to exactly the same double.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

/// Fixed 9-significant-digit general form, locale independent.
inline std::string format_double_9(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

namespace detail {

inline double parse_double(const std::string& tok, int line_no) {
  double value = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw std::runtime_error("mdp text line " + std::to_string(line_no) + ": bad number '" + tok + "'");
  }
  return value;
}

inline std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> toks;
  std::istringstream in(line);
  std::string t;
  while (in >> t) toks.push_back(t);
  return toks;
}

}  // namespace detail

/// Writes the line-oriented MDP text format. Sections: `states` (one name per
/// line with optional T and F flags), `actions` (global names in index
/// order), one `gamma` line, then `transition s a s' prob reward` and
/// `terminal_reward s a r` lines. `#` starts a comment.
inline void write_mdp_text(std::ostream& out, const MdpSpec& spec) {
  out << "states\n";
  for (StateId s = 0; s < spec.state_count(); ++s) {
    out << spec.state_names[static_cast<std::size_t>(s)];
    if (spec.is_terminal(s)) out << " T";
    if (spec.is_failure(s)) out << " F";
    out << "\n";
  }
  out << "actions\n";
  for (const std::string& name : spec.action_names) out << name << "\n";
  out << "gamma " << format_double(spec.gamma) << "\n";
  for (StateId s = 0; s < spec.state_count(); ++s) {
    if (spec.is_terminal(s)) continue;
    const std::size_t us = static_cast<std::size_t>(s);
    for (std::size_t i = 0; i < spec.actions[us].size(); ++i) {
      const std::string& an = spec.action_names[static_cast<std::size_t>(spec.actions[us][i])];
      for (const Transition& tr : spec.transitions[us][i]) {
        out << "transition " << spec.state_names[us] << " " << an << " "
            << spec.state_names[static_cast<std::size_t>(tr.next)] << " " << format_double(tr.prob)
            << " " << format_double(tr.reward) << "\n";
      }
    }
  }
  for (StateId s = 0; s < spec.state_count(); ++s) {
    if (!spec.is_terminal(s)) continue;
    const std::size_t us = static_cast<std::size_t>(s);
    for (std::size_t i = 0; i < spec.actions[us].size(); ++i) {
      const std::string& an = spec.action_names[static_cast<std::size_t>(spec.actions[us][i])];
      out << "terminal_reward " << spec.state_names[us] << " " << an << " "
          << format_double(spec.terminal_rewards[us][i]) << "\n";
    }
  }
}

inline std::string write_mdp_text(const MdpSpec& spec) {
  std::ostringstream out;
  write_mdp_text(out, spec);
  return out.str();
}

/// Parses the MDP text format. Per-state action sets are recovered from the
/// transition and terminal_reward lines and stored ascending by global action
/// id, so writing a parsed spec reproduces the input structure. Throws
/// std::runtime_error with a line number on malformed input; semantic checks
/// beyond structure belong to validate().
inline MdpSpec read_mdp_text(std::istream& in) {
  MdpSpec spec;
  spec.gamma = 0.0;

  struct TransitionLine {
    StateId s;
    ActionId a;
    Transition tr;
  };
  struct RewardLine {
    StateId s;
    ActionId a;
    double r;
  };
  std::vector<TransitionLine> transition_lines;
  std::vector<RewardLine> reward_lines;

  enum class Section { none, states, actions };
  Section section = Section::none;
  bool saw_gamma = false;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::vector<std::string> toks = detail::tokenize(line);
    if (toks.empty()) continue;
    const std::string& head = toks[0];

    if (head == "states" && toks.size() == 1) {
      section = Section::states;
      continue;
    }
    if (head == "actions" && toks.size() == 1) {
      section = Section::actions;
      continue;
    }
    if (head == "gamma") {
      if (toks.size() != 2) throw std::runtime_error("mdp text line " + std::to_string(line_no) + ": gamma needs one value");
      spec.gamma = detail::parse_double(toks[1], line_no);
      saw_gamma = true;
      section = Section::none;
      continue;
    }
    if (head == "transition" || head == "terminal_reward") {
      section = Section::none;
      const std::size_t want = head == "transition" ? 6 : 4;
      if (toks.size() != want) {
        throw std::runtime_error("mdp text line " + std::to_string(line_no) + ": " + head + " needs " +
                                 std::to_string(want - 1) + " fields");
      }
      const StateId s = spec.state_id(toks[1]);
      if (s < 0) throw std::runtime_error("mdp text line " + std::to_string(line_no) + ": unknown state '" + toks[1] + "'");
      const ActionId a = spec.action_id(toks[2]);
      if (a < 0) throw std::runtime_error("mdp text line " + std::to_string(line_no) + ": unknown action '" + toks[2] + "'");
      if (head == "transition") {
        const StateId next = spec.state_id(toks[3]);
        if (next < 0) {
          throw std::runtime_error("mdp text line " + std::to_string(line_no) + ": unknown state '" + toks[3] + "'");
        }
        transition_lines.push_back(
            {s, a, {next, detail::parse_double(toks[4], line_no), detail::parse_double(toks[5], line_no)}});
      } else {
        reward_lines.push_back({s, a, detail::parse_double(toks[3], line_no)});
      }
      continue;
    }

    if (section == Section::states) {
      bool term = false;
      bool fail = false;
      for (std::size_t i = 1; i < toks.size(); ++i) {
        if (toks[i] == "T") {
          term = true;
        } else if (toks[i] == "F") {
          fail = true;
        } else {
          throw std::runtime_error("mdp text line " + std::to_string(line_no) + ": unknown state flag '" + toks[i] + "'");
        }
      }
      spec.state_names.push_back(head);
      spec.terminal.push_back(term ? 1 : 0);
      spec.failure.push_back(fail ? 1 : 0);
      continue;
    }
    if (section == Section::actions) {
      if (toks.size() != 1) throw std::runtime_error("mdp text line " + std::to_string(line_no) + ": one action name per line");
      spec.action_names.push_back(head);
      continue;
    }
    throw std::runtime_error("mdp text line " + std::to_string(line_no) + ": unexpected content '" + head + "'");
  }

  if (spec.state_names.empty()) throw std::runtime_error("mdp text: no states section");
  if (!saw_gamma) throw std::runtime_error("mdp text: no gamma line");

  const std::size_t n = spec.state_names.size();
  spec.actions.assign(n, {});
  spec.transitions.assign(n, {});
  spec.terminal_rewards.assign(n, {});

  std::vector<std::map<ActionId, std::vector<Transition>>> rows(n);
  for (const TransitionLine& tl : transition_lines) {
    if (spec.is_terminal(tl.s)) {
      throw std::runtime_error("mdp text: transition from terminal state " +
                               spec.state_names[static_cast<std::size_t>(tl.s)]);
    }
    rows[static_cast<std::size_t>(tl.s)][tl.a].push_back(tl.tr);
  }
  std::vector<std::map<ActionId, double>> selfs(n);
  for (const RewardLine& rl : reward_lines) {
    if (!spec.is_terminal(rl.s)) {
      throw std::runtime_error("mdp text: terminal_reward on non-terminal state " +
                               spec.state_names[static_cast<std::size_t>(rl.s)]);
    }
    selfs[static_cast<std::size_t>(rl.s)][rl.a] = rl.r;
  }
  for (std::size_t s = 0; s < n; ++s) {
    if (spec.terminal[s]) {
      for (auto& [a, r] : selfs[s]) {
        spec.actions[s].push_back(a);
        spec.terminal_rewards[s].push_back(r);
      }
    } else {
      for (auto& [a, row] : rows[s]) {
        spec.actions[s].push_back(a);
        spec.transitions[s].push_back(std::move(row));
      }
    }
  }
  return spec;
}

inline MdpSpec read_mdp_text(const std::string& text) {
  std::istringstream in(text);
  return read_mdp_text(in);
}

}  // namespace safeplan
