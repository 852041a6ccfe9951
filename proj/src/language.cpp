#include "thinkact/language.hpp"

#include <algorithm>
#include <limits>
#include <map>

#include "thinkact/error.hpp"

namespace thinkact {

std::string_view to_string(SizeWord s) noexcept { return s == SizeWord::small ? "small" : "big"; }

std::vector<std::string> Command::words() const {
  std::vector<std::string> w{"walk", "to", definite_article ? "the" : "a"};
  if (size_word) w.emplace_back(to_string(*size_word));
  if (color_word) w.emplace_back(to_string(*color_word));
  w.emplace_back(to_string(shape_word));
  return w;
}

Command parse_command(const std::vector<std::string>& words) {
  static const Vocabulary vocab = Vocabulary::commands();
  for (const auto& w : words) {
    if (!vocab.contains(w)) throw Error(ErrorKind::unknown_token, "'" + w + "'");
  }
  auto fail = [&](const std::string& why) -> Error {
    std::string joined;
    for (const auto& w : words) joined += (joined.empty() ? "" : " ") + w;
    return Error(ErrorKind::parse_error, why + " in command '" + joined + "'");
  };
  if (words.size() < 4 || words.size() > 6 || words[0] != "walk" || words[1] != "to") throw fail("bad prefix");
  Command cmd;
  if (words[2] == "the") {
    cmd.definite_article = true;
  } else if (words[2] == "a") {
    cmd.definite_article = false;
  } else {
    throw fail("missing article");
  }
  std::size_t i = 3;
  if (words[i] == "small" || words[i] == "big") {
    cmd.size_word = words[i] == "small" ? SizeWord::small : SizeWord::big;
    ++i;
  }
  if (i < words.size()) {
    if (auto c = parse_color(words[i])) {
      cmd.color_word = *c;
      ++i;
    }
  }
  if (i + 1 != words.size()) throw fail("trailing or missing words");
  const auto shape = parse_shape(words[i]);
  if (!shape) throw fail("missing shape");
  cmd.shape_word = *shape;
  return cmd;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second)
      throw Error(ErrorKind::invalid_argument, "duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::commands() {
  return Vocabulary({"<pad>", "<sos>", "<eos>", "walk", "to", "a", "the", "small", "big", "red", "green", "blue",
                     "yellow", "circle", "square", "cylinder"});
}

std::size_t Vocabulary::index_of(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) throw Error(ErrorKind::unknown_token, "'" + std::string(token) + "'");
  return it->second;
}

const std::string& Vocabulary::token(std::size_t index) const {
  if (index >= tokens_.size()) throw Error(ErrorKind::unknown_token, "index " + std::to_string(index));
  return tokens_[index];
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<std::size_t> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(index_of(w));
  return out;
}

Json Vocabulary::to_json() const { return tokens_; }

Vocabulary Vocabulary::from_json(const Json& j) {
  try {
    return Vocabulary(j.get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, e.what());
  }
}

std::vector<Cell> referent_candidates(const Command& cmd, const WorldState& world) {
  std::vector<Cell> out;
  for (const auto& [cell, obj] : world.objects) {
    if (obj.shape != cmd.shape_word) continue;
    if (cmd.color_word && obj.color != *cmd.color_word) continue;
    out.push_back(cell);
  }
  return out;
}

namespace {

// Unique extreme-size candidate, or nullopt on a tie.
std::optional<Cell> unique_extreme(const std::vector<Cell>& candidates, const WorldState& world, bool want_small) {
  int best = want_small ? std::numeric_limits<int>::max() : std::numeric_limits<int>::min();
  for (const Cell& c : candidates) {
    const int s = world.objects.at(c).size;
    best = want_small ? std::min(best, s) : std::max(best, s);
  }
  std::optional<Cell> found;
  for (const Cell& c : candidates) {
    if (world.objects.at(c).size != best) continue;
    if (found) return std::nullopt;
    found = c;
  }
  return found;
}

}  // namespace

std::optional<Cell> try_resolve_referent(const Command& cmd, const WorldState& world) {
  const auto candidates = referent_candidates(cmd, world);
  if (candidates.empty()) return std::nullopt;
  if (!cmd.size_word) return candidates.size() == 1 ? std::optional<Cell>{candidates.front()} : std::nullopt;
  return unique_extreme(candidates, world, *cmd.size_word == SizeWord::small);
}

Cell resolve_referent(const Command& cmd, const WorldState& world) {
  const auto candidates = referent_candidates(cmd, world);
  if (candidates.empty()) throw Error(ErrorKind::no_referent, "no object matches '" + referent_class(cmd) + "'");
  if (!cmd.size_word) {
    if (candidates.size() != 1)
      throw Error(ErrorKind::ambiguous_referent,
                  std::to_string(candidates.size()) + " objects match '" + referent_class(cmd) + "'");
    return candidates.front();
  }
  const auto found = unique_extreme(candidates, world, *cmd.size_word == SizeWord::small);
  if (!found) throw Error(ErrorKind::ambiguous_referent, "size tie among objects matching '" + referent_class(cmd) + "'");
  return *found;
}

std::string referent_class(const Command& cmd) {
  std::string out;
  if (cmd.size_word) out += std::string(to_string(*cmd.size_word)) + " ";
  if (cmd.color_word) out += std::string(to_string(*cmd.color_word)) + " ";
  out += to_string(cmd.shape_word);
  return out;
}

std::vector<ReferringCommand> enumerate_commands(const WorldState& world) {
  std::vector<ReferringCommand> out;
  for (const auto& [cell, obj] : world.objects) {
    for (const std::optional<Color> color : {std::optional<Color>{}, std::optional<Color>{obj.color}}) {
      for (const std::optional<SizeWord> size :
           {std::optional<SizeWord>{}, std::optional<SizeWord>{SizeWord::small}, std::optional<SizeWord>{SizeWord::big}}) {
        Command cmd;
        cmd.shape_word = obj.shape;
        cmd.color_word = color;
        cmd.size_word = size;
        if (size && referent_candidates(cmd, world).size() < 2) continue;
        if (try_resolve_referent(cmd, world) == std::optional<Cell>{cell}) out.push_back({cmd, cell});
      }
    }
  }
  return out;
}

ReferringCommand sample_command(Rng& rng, const WorldState& world, const CommandFilter& accept) {
  std::map<Cell, std::vector<Command>> by_target;
  for (auto& rc : enumerate_commands(world)) {
    if (!accept || accept(rc.command, rc.target, world)) by_target[rc.target].push_back(rc.command);
  }
  if (by_target.empty())
    throw Error(ErrorKind::unsatisfiable_constraints, "no admissible command for this world");
  auto it = by_target.begin();
  std::advance(it, static_cast<std::ptrdiff_t>(rng.below(by_target.size())));
  ReferringCommand out{it->second[rng.below(it->second.size())], it->first};
  out.command.definite_article = rng.bernoulli(0.5);
  return out;
}

}  // namespace thinkact
