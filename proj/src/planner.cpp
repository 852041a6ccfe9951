#include "thinkact/planner.hpp"

#include <cstdlib>

#include "thinkact/error.hpp"

namespace thinkact {

std::string_view to_string(Action a) noexcept {
  switch (a) {
    case Action::walk: return "walk";
    case Action::turn_left: return "turn left";
    case Action::turn_right: return "turn right";
  }
  return "";
}

std::optional<Action> parse_action(std::string_view s) noexcept {
  for (Action a : {Action::walk, Action::turn_left, Action::turn_right})
    if (to_string(a) == s) return a;
  return std::nullopt;
}

Heading turn_left(Heading h) noexcept { return static_cast<Heading>((static_cast<int>(h) + 3) % 4); }
Heading turn_right(Heading h) noexcept { return static_cast<Heading>((static_cast<int>(h) + 1) % 4); }

Cell step(Cell c, Heading h) noexcept {
  switch (h) {
    case Heading::north: return {c.row - 1, c.col};
    case Heading::east: return {c.row, c.col + 1};
    case Heading::south: return {c.row + 1, c.col};
    case Heading::west: return {c.row, c.col - 1};
  }
  return c;
}

namespace {

void append_turns(std::vector<Action>& out, Heading from, Heading to) {
  switch ((static_cast<int>(to) - static_cast<int>(from) + 4) % 4) {
    case 1: out.push_back(Action::turn_right); break;
    case 2: out.insert(out.end(), 2, Action::turn_right); break;
    case 3: out.push_back(Action::turn_left); break;
    default: break;
  }
}

struct Leg {
  Heading heading;
  int length;
};

std::vector<Action> plan_legs(Heading start, const Leg& first, const Leg& second) {
  std::vector<Action> out;
  Heading h = start;
  for (const Leg& leg : {first, second}) {
    if (leg.length == 0) continue;
    append_turns(out, h, leg.heading);
    out.insert(out.end(), static_cast<std::size_t>(leg.length), Action::walk);
    h = leg.heading;
  }
  return out;
}

}  // namespace

std::vector<Action> plan(const WorldState& world, Cell target) {
  if (!world.contains(target)) throw Error(ErrorKind::invalid_argument, "target outside grid");
  const Cell from = world.agent.cell;
  const int dr = target.row - from.row;
  const int dc = target.col - from.col;
  const Leg vertical{dr < 0 ? Heading::north : Heading::south, std::abs(dr)};
  const Leg horizontal{dc < 0 ? Heading::west : Heading::east, std::abs(dc)};
  auto rows_first = plan_legs(world.agent.heading, vertical, horizontal);
  auto cols_first = plan_legs(world.agent.heading, horizontal, vertical);
  return cols_first.size() < rows_first.size() ? cols_first : rows_first;
}

SimulationResult simulate(const WorldState& world, const std::vector<Action>& actions) {
  SimulationResult r{world.agent, 0};
  for (Action a : actions) {
    switch (a) {
      case Action::turn_left: r.pose.heading = turn_left(r.pose.heading); break;
      case Action::turn_right: r.pose.heading = turn_right(r.pose.heading); break;
      case Action::walk: {
        const Cell next = step(r.pose.cell, r.pose.heading);
        if (world.contains(next)) {
          r.pose.cell = next;
        } else {
          ++r.boundary_violations;
        }
        break;
      }
    }
  }
  return r;
}

}  // namespace thinkact
