#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "thinkact/json_types.hpp"

#include "thinkact/rng.hpp"

namespace thinkact {

enum class Shape { circle, square, cylinder };
enum class Color { red, green, blue, yellow };
enum class Heading { north, east, south, west };

inline constexpr std::array<Shape, 3> kShapes{Shape::circle, Shape::square, Shape::cylinder};
inline constexpr std::array<Color, 4> kColors{Color::red, Color::green, Color::blue, Color::yellow};
inline constexpr int kMinSize = 1;
inline constexpr int kMaxSize = 4;

std::string_view to_string(Shape s) noexcept;
std::string_view to_string(Color c) noexcept;
std::string_view to_string(Heading h) noexcept;
std::optional<Shape> parse_shape(std::string_view s) noexcept;
std::optional<Color> parse_color(std::string_view s) noexcept;
std::optional<Heading> parse_heading(std::string_view s) noexcept;

struct ObjectSpec {
  Shape shape = Shape::circle;
  Color color = Color::red;
  int size = 1;

  friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

struct Cell {
  int row = 0;
  int col = 0;

  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct AgentPose {
  Cell cell;
  Heading heading = Heading::east;

  friend bool operator==(const AgentPose&, const AgentPose&) = default;
};

// d x d grid, row 0 at the top; north decreases the row index.
struct WorldState {
  int d = 6;
  std::map<Cell, ObjectSpec> objects;
  AgentPose agent;

  bool contains(Cell c) const noexcept { return c.row >= 0 && c.col >= 0 && c.row < d && c.col < d; }
  int flat_index(Cell c) const noexcept { return c.row * d + c.col; }
  Cell cell_at(int flat) const noexcept { return {flat / d, flat % d}; }

  // Throws Error(invalid_argument) if any invariant is violated.
  void validate() const;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

// Channel layout per cell: size one-hot(4) | color one-hot(4) | shape one-hot(3)
// | agent-present(1) | agent-heading one-hot(4).
inline constexpr std::size_t kSizeChannel = 0;
inline constexpr std::size_t kColorChannel = 4;
inline constexpr std::size_t kShapeChannel = 8;
inline constexpr std::size_t kAgentChannel = 11;
inline constexpr std::size_t kHeadingChannel = 12;
inline constexpr std::size_t kCellChannels = 16;

// Dense d*d*16 tensor, cells in row-major order.
struct GridTensor {
  int d = 0;
  std::vector<double> values;

  double at(int row, int col, std::size_t channel) const {
    return values[(static_cast<std::size_t>(row * d + col)) * kCellChannels + channel];
  }
};

GridTensor encode_world(const WorldState& state);

struct GeneratorConfig {
  int d = 6;
  int min_objects = 2;
  int max_objects = 8;
};

// Places exactly `num_objects` objects on distinct cells and the agent on a
// free cell. Throws Error(placement_infeasible) when num_objects + 1 > d*d.
WorldState sample_world(Rng& rng, int d, int num_objects);

// Draws the object count uniformly from [min_objects, max_objects].
WorldState sample_world(Rng& rng, const GeneratorConfig& gen);

Json to_json(const WorldState& state);
WorldState world_from_json(const Json& j);

}  // namespace thinkact
