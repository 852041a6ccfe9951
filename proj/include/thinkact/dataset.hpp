#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "thinkact/json_types.hpp"
#include "thinkact/gridworld.hpp"
#include "thinkact/language.hpp"
#include "thinkact/planner.hpp"
#include "thinkact/rng.hpp"

namespace thinkact {

struct Example {
  std::vector<std::string> command;
  WorldState world;
  int target = 0;  // row * d + col
  std::vector<Action> actions;
  std::string referent;

  friend bool operator==(const Example&, const Example&) = default;
};

Json to_json(const Example& ex);
Example example_from_json(const Json& j);

enum class SplitKind { random, yellow_squares, red_squares, relativity };
enum class Phase { train, dev, test };

inline constexpr Phase kPhases[] = {Phase::train, Phase::dev, Phase::test};

// "A", "B", "C", "E"
std::string_view to_string(SplitKind k) noexcept;
std::optional<SplitKind> parse_split(std::string_view s) noexcept;
std::string_view to_string(Phase p) noexcept;

struct SplitConstraints {
  SplitKind kind = SplitKind::random;
  Phase phase = Phase::train;
};

// Dev examples follow the train constraints.
bool satisfies(const SplitConstraints& c, const Command& cmd, Cell target, const WorldState& world);

// Reason string for a constraint violation, empty when the example is admissible.
std::string constraint_violation(const SplitConstraints& c, const Command& cmd, Cell target, const WorldState& world);

ReferringCommand sample_command(Rng& rng, const WorldState& world, const SplitConstraints& constraints);

struct SplitSizes {
  std::size_t train = 20000;
  std::size_t dev = 500;
  std::size_t test = 2000;
};

struct SplitData {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;

  const std::vector<Example>& phase(Phase p) const;
};

// Stream seed for (phase, worker) under a base seed.
std::uint64_t derive_seed(std::uint64_t base, Phase phase, std::size_t worker);

// Rejection-samples worlds until `count` admissible examples exist. Throws
// Error(generation_stalled) when more than 99.9% of a 10,000-attempt window is
// rejected.
std::vector<Example> generate_examples(Rng& rng, const GeneratorConfig& gen, const SplitConstraints& constraints,
                                       std::size_t count);

// Shards each phase over `workers` threads with derived seeds and concatenates
// the shards in worker order.
SplitData generate_split(SplitKind kind, const SplitSizes& sizes, std::uint64_t seed, const GeneratorConfig& gen,
                         std::size_t workers = 1);

std::filesystem::path phase_file(const std::filesystem::path& dir, Phase p);

void write_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples);
std::vector<Example> read_jsonl(const std::filesystem::path& path);

// Writes train.jsonl, dev.jsonl, test.jsonl and vocab.json.
void write_split(const std::filesystem::path& dir, const SplitData& data);

struct SplitMeta {
  std::string split;
  std::uint64_t seed = 1;
  std::string profile;
  GeneratorConfig generator;
  std::size_t workers = 1;
  SplitSizes sizes;
};

// Writes split.json, which the CLI reads to recover the split name.
void write_split_meta(const std::filesystem::path& dir, const SplitMeta& meta);
SplitData read_split(const std::filesystem::path& dir);

struct Violation {
  Phase phase;
  std::size_t line;  // 1-based
  std::string reason;
};

struct PhaseReport {
  std::size_t records = 0;
  std::size_t violations = 0;
};

struct ValidationReport {
  std::map<Phase, PhaseReport> phases;
  std::vector<Violation> violations;
  std::vector<std::string> warnings;

  std::size_t total_violations() const { return violations.size(); }
};

// Re-derives referent, target cell and plan for every record and checks the
// phase constraints. Parse failures are reported as violations with line numbers.
ValidationReport validate_records(const std::filesystem::path& file, SplitKind kind, Phase phase);
ValidationReport validate_split(const std::filesystem::path& dir, SplitKind kind);

}  // namespace thinkact
