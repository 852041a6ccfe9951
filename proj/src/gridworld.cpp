#include "thinkact/gridworld.hpp"

#include <string>

#include "thinkact/error.hpp"

namespace thinkact {

std::string_view to_string(Shape s) noexcept {
  switch (s) {
    case Shape::circle: return "circle";
    case Shape::square: return "square";
    case Shape::cylinder: return "cylinder";
  }
  return "";
}

std::string_view to_string(Color c) noexcept {
  switch (c) {
    case Color::red: return "red";
    case Color::green: return "green";
    case Color::blue: return "blue";
    case Color::yellow: return "yellow";
  }
  return "";
}

std::string_view to_string(Heading h) noexcept {
  switch (h) {
    case Heading::north: return "north";
    case Heading::east: return "east";
    case Heading::south: return "south";
    case Heading::west: return "west";
  }
  return "";
}

std::optional<Shape> parse_shape(std::string_view s) noexcept {
  for (Shape v : kShapes)
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::optional<Color> parse_color(std::string_view s) noexcept {
  for (Color v : kColors)
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::optional<Heading> parse_heading(std::string_view s) noexcept {
  for (Heading v : {Heading::north, Heading::east, Heading::south, Heading::west})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

void WorldState::validate() const {
  if (d < 2) throw Error(ErrorKind::invalid_argument, "grid side must be >= 2, got " + std::to_string(d));
  if (!contains(agent.cell)) throw Error(ErrorKind::invalid_argument, "agent outside grid");
  for (const auto& [cell, obj] : objects) {
    if (!contains(cell)) throw Error(ErrorKind::invalid_argument, "object outside grid");
    if (obj.size < kMinSize || obj.size > kMaxSize)
      throw Error(ErrorKind::invalid_argument, "object size out of range: " + std::to_string(obj.size));
  }
}

GridTensor encode_world(const WorldState& state) {
  GridTensor t;
  t.d = state.d;
  t.values.assign(static_cast<std::size_t>(state.d * state.d) * kCellChannels, 0.0);
  for (const auto& [cell, obj] : state.objects) {
    const std::size_t base = static_cast<std::size_t>(state.flat_index(cell)) * kCellChannels;
    t.values[base + kSizeChannel + static_cast<std::size_t>(obj.size - 1)] = 1.0;
    t.values[base + kColorChannel + static_cast<std::size_t>(obj.color)] = 1.0;
    t.values[base + kShapeChannel + static_cast<std::size_t>(obj.shape)] = 1.0;
  }
  const std::size_t base = static_cast<std::size_t>(state.flat_index(state.agent.cell)) * kCellChannels;
  t.values[base + kAgentChannel] = 1.0;
  t.values[base + kHeadingChannel + static_cast<std::size_t>(state.agent.heading)] = 1.0;
  return t;
}

WorldState sample_world(Rng& rng, int d, int num_objects) {
  if (d < 2) throw Error(ErrorKind::invalid_argument, "grid side must be >= 2");
  if (num_objects < 0) throw Error(ErrorKind::invalid_argument, "negative object count");
  const int cells = d * d;
  if (num_objects + 1 > cells) {
    throw Error(ErrorKind::placement_infeasible, std::to_string(num_objects) + " objects plus agent do not fit in " +
                                                     std::to_string(cells) + " cells");
  }
  // Partial Fisher-Yates over cell indices: first num_objects for objects, next one for the agent.
  std::vector<int> order(static_cast<std::size_t>(cells));
  for (int i = 0; i < cells; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i <= num_objects; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) + rng.below(static_cast<std::size_t>(cells - i));
    std::swap(order[static_cast<std::size_t>(i)], order[j]);
  }

  WorldState w;
  w.d = d;
  for (int i = 0; i < num_objects; ++i) {
    ObjectSpec obj;
    obj.shape = kShapes[rng.below(kShapes.size())];
    obj.color = kColors[rng.below(kColors.size())];
    obj.size = rng.between(kMinSize, kMaxSize);
    w.objects.emplace(w.cell_at(order[static_cast<std::size_t>(i)]), obj);
  }
  w.agent.cell = w.cell_at(order[static_cast<std::size_t>(num_objects)]);
  w.agent.heading = static_cast<Heading>(rng.below(4));
  return w;
}

WorldState sample_world(Rng& rng, const GeneratorConfig& gen) {
  if (gen.min_objects > gen.max_objects)
    throw Error(ErrorKind::invalid_argument, "min_objects exceeds max_objects");
  const int k = rng.between(gen.min_objects, gen.max_objects);
  return sample_world(rng, gen.d, k);
}

Json to_json(const WorldState& state) {
  Json objects = Json::array();
  for (const auto& [cell, obj] : state.objects) {
    objects.push_back({{"row", cell.row},
                       {"col", cell.col},
                       {"shape", to_string(obj.shape)},
                       {"color", to_string(obj.color)},
                       {"size", obj.size}});
  }
  return {{"d", state.d},
          {"agent", {{"row", state.agent.cell.row}, {"col", state.agent.cell.col}, {"heading", to_string(state.agent.heading)}}},
          {"objects", std::move(objects)}};
}

WorldState world_from_json(const Json& j) {
  try {
    WorldState w;
    w.d = j.at("d").get<int>();
    const auto& a = j.at("agent");
    w.agent.cell = {a.at("row").get<int>(), a.at("col").get<int>()};
    const auto heading = parse_heading(a.at("heading").get<std::string>());
    if (!heading) throw Error(ErrorKind::parse_error, "bad heading");
    w.agent.heading = *heading;
    for (const auto& o : j.at("objects")) {
      const auto shape = parse_shape(o.at("shape").get<std::string>());
      const auto color = parse_color(o.at("color").get<std::string>());
      if (!shape || !color) throw Error(ErrorKind::parse_error, "bad object attribute");
      const Cell cell{o.at("row").get<int>(), o.at("col").get<int>()};
      if (!w.objects.emplace(cell, ObjectSpec{*shape, *color, o.at("size").get<int>()}).second)
        throw Error(ErrorKind::parse_error, "two objects on one cell");
    }
    w.validate();
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::parse_error) throw;
    throw Error(ErrorKind::parse_error, e.what());
  }
}

}  // namespace thinkact
