#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "thinkact/gridworld.hpp"

namespace thinkact {

enum class Action { walk, turn_left, turn_right };

// "walk", "turn left", "turn right"
std::string_view to_string(Action a) noexcept;
std::optional<Action> parse_action(std::string_view s) noexcept;

Heading turn_left(Heading h) noexcept;
Heading turn_right(Heading h) noexcept;
Cell step(Cell c, Heading h) noexcept;

// Minimum-length action sequence from the agent pose to `target`. Among
// minimal plans the vertical leg comes first; turns take the shorter
// direction, two right turns for a reversal.
std::vector<Action> plan(const WorldState& world, Cell target);

struct SimulationResult {
  AgentPose pose;
  int boundary_violations = 0;
};

// WALK into the boundary leaves the pose unchanged and is counted.
SimulationResult simulate(const WorldState& world, const std::vector<Action>& actions);

}  // namespace thinkact
