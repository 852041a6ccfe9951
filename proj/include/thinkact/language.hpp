#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "thinkact/json_types.hpp"
#include "thinkact/gridworld.hpp"
#include "thinkact/rng.hpp"

namespace thinkact {

enum class SizeWord { small, big };

std::string_view to_string(SizeWord s) noexcept;

// "walk to a|the [small|big] [color] shape". The article carries no meaning.
struct Command {
  std::optional<SizeWord> size_word;
  std::optional<Color> color_word;
  Shape shape_word = Shape::circle;
  bool definite_article = true;

  std::vector<std::string> words() const;

  friend bool operator==(const Command&, const Command&) = default;
};

// Inverse of Command::words(). Throws Error(parse_error) on malformed input
// and Error(unknown_token) on out-of-vocabulary words.
Command parse_command(const std::vector<std::string>& words);

// Bidirectional token <-> index map. Indices 0, 1, 2 are PAD, SOS, EOS.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kSos = 1;
  static constexpr std::size_t kEos = 2;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  // Fixed command vocabulary covering every word Command::words() can emit.
  static Vocabulary commands();

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t index_of(std::string_view token) const;
  const std::string& token(std::size_t index) const;
  bool contains(std::string_view token) const;

  std::vector<std::size_t> encode(const std::vector<std::string>& words) const;

  Json to_json() const;
  static Vocabulary from_json(const Json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Objects matching the command's shape and (if given) color.
std::vector<Cell> referent_candidates(const Command& cmd, const WorldState& world);

// Size words are relative: "small" picks the strictly smallest candidate,
// "big" the strictly largest. Without a size word the candidate set must be a
// singleton. Throws Error(no_referent) or Error(ambiguous_referent).
Cell resolve_referent(const Command& cmd, const WorldState& world);

// Non-throwing variant: nullopt wherever resolve_referent would throw.
std::optional<Cell> try_resolve_referent(const Command& cmd, const WorldState& world);

// "small yellow circle", "small circle", "square", ...
std::string referent_class(const Command& cmd);

struct ReferringCommand {
  Command command;
  Cell target;
};

// Every article-free command that picks out exactly one object. Size words
// are only produced when more than one object matches the rest of the phrase.
std::vector<ReferringCommand> enumerate_commands(const WorldState& world);

using CommandFilter = std::function<bool(const Command&, Cell target, const WorldState&)>;

// Draws a target uniformly among objects that have at least one admissible
// command, then a command uniformly among that object's admissible commands,
// then the article. Throws Error(unsatisfiable_constraints) when nothing is admissible.
ReferringCommand sample_command(Rng& rng, const WorldState& world, const CommandFilter& accept);

}  // namespace thinkact
