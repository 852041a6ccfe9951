#include "thinkact/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include "thinkact/error.hpp"

namespace thinkact {

Json to_json(const Example& ex) {
  Json actions = Json::array();
  for (Action a : ex.actions) actions.push_back(to_string(a));
  return Json{{"command", ex.command},
                        {"world", to_json(ex.world)},
                        {"target", ex.target},
                        {"actions", std::move(actions)},
                        {"referent", ex.referent}};
}

Example example_from_json(const Json& j) {
  try {
    Example ex;
    ex.command = j.at("command").get<std::vector<std::string>>();
    ex.world = world_from_json(j.at("world"));
    ex.target = j.at("target").get<int>();
    for (const auto& a : j.at("actions")) {
      const auto action = parse_action(a.get<std::string>());
      if (!action) throw Error(ErrorKind::parse_error, "unknown action '" + a.get<std::string>() + "'");
      ex.actions.push_back(*action);
    }
    ex.referent = j.at("referent").get<std::string>();
    return ex;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, e.what());
  }
}

std::string_view to_string(SplitKind k) noexcept {
  switch (k) {
    case SplitKind::random: return "A";
    case SplitKind::yellow_squares: return "B";
    case SplitKind::red_squares: return "C";
    case SplitKind::relativity: return "E";
  }
  return "";
}

std::optional<SplitKind> parse_split(std::string_view s) noexcept {
  for (SplitKind k : {SplitKind::random, SplitKind::yellow_squares, SplitKind::red_squares, SplitKind::relativity})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

std::string_view to_string(Phase p) noexcept {
  switch (p) {
    case Phase::train: return "train";
    case Phase::dev: return "dev";
    case Phase::test: return "test";
  }
  return "";
}

std::string constraint_violation(const SplitConstraints& c, const Command& cmd, Cell target, const WorldState& world) {
  const auto it = world.objects.find(target);
  if (it == world.objects.end()) return "target cell holds no object";
  const ObjectSpec& obj = it->second;
  const bool test = c.phase == Phase::test;
  switch (c.kind) {
    case SplitKind::random:
      return {};
    case SplitKind::yellow_squares: {
      const bool yellow_square = obj.shape == Shape::square && obj.color == Color::yellow;
      if (test) {
        if (!yellow_square) return "test target is not a yellow square";
        if (cmd.color_word != Color::yellow) return "test command does not say 'yellow'";
        return {};
      }
      if (yellow_square && cmd.color_word) return "yellow-square target referred to with a color word";
      return {};
    }
    case SplitKind::red_squares: {
      const bool red_square = obj.shape == Shape::square && obj.color == Color::red;
      if (test && !red_square) return "test target is not a red square";
      if (!test && red_square) return "red square is the target";
      return {};
    }
    case SplitKind::relativity: {
      const bool size2_circle = obj.shape == Shape::circle && obj.size == 2;
      const bool says_small = cmd.size_word == SizeWord::small;
      if (!test) {
        if (size2_circle && says_small) return "size-2 circle referred to as 'small'";
        return {};
      }
      if (!size2_circle) return "test target is not a size-2 circle";
      if (!says_small) return "test command does not say 'small'";
      const bool larger = std::any_of(world.objects.begin(), world.objects.end(), [](const auto& kv) {
        return kv.second.shape == Shape::circle && kv.second.size > 2;
      });
      if (!larger) return "no larger circle present";
      return {};
    }
  }
  return {};
}

bool satisfies(const SplitConstraints& c, const Command& cmd, Cell target, const WorldState& world) {
  return constraint_violation(c, cmd, target, world).empty();
}

ReferringCommand sample_command(Rng& rng, const WorldState& world, const SplitConstraints& constraints) {
  return sample_command(rng, world, [&](const Command& cmd, Cell target, const WorldState& w) {
    return satisfies(constraints, cmd, target, w);
  });
}

const std::vector<Example>& SplitData::phase(Phase p) const {
  switch (p) {
    case Phase::train: return train;
    case Phase::dev: return dev;
    case Phase::test: return test;
  }
  return train;
}

std::uint64_t derive_seed(std::uint64_t base, Phase phase, std::size_t worker) {
  // Phase streams are separated by a large odd stride; workers add their index.
  return base + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(phase) + 1) + worker;
}

std::vector<Example> generate_examples(Rng& rng, const GeneratorConfig& gen, const SplitConstraints& constraints,
                                       std::size_t count) {
  constexpr std::size_t kWindow = 10000;
  std::vector<Example> out;
  out.reserve(count);
  std::size_t window_attempts = 0;
  std::size_t window_accepts = 0;
  while (out.size() < count) {
    WorldState world = sample_world(rng, gen);
    ++window_attempts;
    std::optional<ReferringCommand> rc;
    try {
      rc = sample_command(rng, world, constraints);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::unsatisfiable_constraints) throw;
    }
    if (rc) {
      ++window_accepts;
      Example ex;
      ex.command = rc->command.words();
      ex.target = world.flat_index(rc->target);
      ex.actions = plan(world, rc->target);
      ex.referent = referent_class(rc->command);
      ex.world = std::move(world);
      out.push_back(std::move(ex));
    }
    if (window_attempts == kWindow) {
      if (window_accepts * 1000 < window_attempts) {
        throw Error(ErrorKind::generation_stalled,
                    std::to_string(window_accepts) + " of " + std::to_string(window_attempts) +
                        " sampled worlds admitted an example for split " + std::string(to_string(constraints.kind)) +
                        " " + std::string(to_string(constraints.phase)));
      }
      window_attempts = 0;
      window_accepts = 0;
    }
  }
  return out;
}

SplitData generate_split(SplitKind kind, const SplitSizes& sizes, std::uint64_t seed, const GeneratorConfig& gen,
                         std::size_t workers) {
  if (sizes.train == 0 || sizes.dev == 0 || sizes.test == 0)
    throw Error(ErrorKind::invalid_argument, "split sizes must all be >= 1");
  if (workers == 0) workers = 1;

  auto run_phase = [&](Phase phase, std::size_t count) {
    const std::size_t shards = std::min(workers, count);
    std::vector<std::vector<Example>> parts(shards);
    std::vector<std::exception_ptr> errors(shards);
    auto job = [&](std::size_t w) {
      try {
        Rng rng(derive_seed(seed, phase, w));
        const std::size_t n = count / shards + (w < count % shards ? 1 : 0);
        parts[w] = generate_examples(rng, gen, {kind, phase}, n);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    };
    if (shards == 1) {
      job(0);
    } else {
      std::vector<std::thread> threads;
      for (std::size_t w = 0; w < shards; ++w) threads.emplace_back(job, w);
      for (auto& t : threads) t.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    std::vector<Example> all;
    all.reserve(count);
    for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(all));
    return all;
  };

  SplitData data;
  data.train = run_phase(Phase::train, sizes.train);
  data.dev = run_phase(Phase::dev, sizes.dev);
  data.test = run_phase(Phase::test, sizes.test);
  return data;
}

std::filesystem::path phase_file(const std::filesystem::path& dir, Phase p) {
  return dir / (std::string(to_string(p)) + ".jsonl");
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io_error, "cannot write " + path.string());
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
  if (!out) throw Error(ErrorKind::io_error, "write failed for " + path.string());
}

std::vector<Example> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_error, "cannot read " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(Json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse_error, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorKind::parse_error, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_split(const std::filesystem::path& dir, const SplitData& data) {
  std::filesystem::create_directories(dir);
  for (Phase p : kPhases) write_jsonl(phase_file(dir, p), data.phase(p));
  std::ofstream vocab(dir / "vocab.json", std::ios::binary);
  vocab << Vocabulary::commands().to_json().dump() << '\n';
}

void write_split_meta(const std::filesystem::path& dir, const SplitMeta& meta) {
  std::filesystem::create_directories(dir);
  const Json j{{"split", meta.split},
               {"seed", meta.seed},
               {"profile", meta.profile},
               {"d", meta.generator.d},
               {"min_objects", meta.generator.min_objects},
               {"max_objects", meta.generator.max_objects},
               {"workers", meta.workers},
               {"sizes", {{"train", meta.sizes.train}, {"dev", meta.sizes.dev}, {"test", meta.sizes.test}}}};
  std::ofstream out(dir / "split.json", std::ios::binary);
  if (!out) throw Error(ErrorKind::io_error, "cannot write " + (dir / "split.json").string());
  out << j.dump(2) << '\n';
}

SplitData read_split(const std::filesystem::path& dir) {
  SplitData data;
  data.train = read_jsonl(phase_file(dir, Phase::train));
  data.dev = read_jsonl(phase_file(dir, Phase::dev));
  data.test = read_jsonl(phase_file(dir, Phase::test));
  return data;
}

namespace {

std::string check_record(const Example& ex, const SplitConstraints& constraints) {
  const Command cmd = parse_command(ex.command);
  const WorldState& w = ex.world;
  if (ex.target < 0 || ex.target >= w.d * w.d) return "target index out of range";
  const Cell target = w.cell_at(ex.target);
  if (w.objects.count(w.agent.cell)) return "agent starts on an object";
  const auto resolved = try_resolve_referent(cmd, w);
  if (!resolved) return "command does not resolve to a unique object";
  if (*resolved != target) return "command resolves to a different cell";
  if (plan(w, target) != ex.actions) return "actions differ from the canonical plan";
  if (referent_class(cmd) != ex.referent) return "referent class mismatch";
  return constraint_violation(constraints, cmd, target, w);
}

}  // namespace

ValidationReport validate_records(const std::filesystem::path& file, SplitKind kind, Phase phase) {
  ValidationReport report;
  PhaseReport& pr = report.phases[phase];
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_error, "cannot read " + file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ++pr.records;
    std::string reason;
    try {
      reason = check_record(example_from_json(Json::parse(line)), {kind, phase});
    } catch (const nlohmann::json::exception& e) {
      reason = std::string("parse error: ") + e.what();
    } catch (const Error& e) {
      reason = e.what();
    }
    if (!reason.empty()) {
      ++pr.violations;
      report.violations.push_back({phase, lineno, std::move(reason)});
    }
  }
  if (pr.records == 0) report.warnings.push_back(file.string() + " contains no records");
  return report;
}

ValidationReport validate_split(const std::filesystem::path& dir, SplitKind kind) {
  ValidationReport all;
  for (Phase p : kPhases) {
    auto r = validate_records(phase_file(dir, p), kind, p);
    all.phases[p] = r.phases[p];
    all.violations.insert(all.violations.end(), r.violations.begin(), r.violations.end());
    all.warnings.insert(all.warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  return all;
}

}  // namespace thinkact
