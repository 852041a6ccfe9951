#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "support.hpp"
#include "thinkact/dataset.hpp"
#include "thinkact/error.hpp"

using namespace thinkact;
namespace fs = std::filesystem;

namespace {

const GeneratorConfig kMicro{4, 2, 8};

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("thinkact_dataset_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const ObjectSpec& target_object(const Example& ex) { return ex.world.objects.at(ex.world.cell_at(ex.target)); }

bool has_word(const Example& ex, const std::string& w) {
  return std::find(ex.command.begin(), ex.command.end(), w) != ex.command.end();
}

// Independent re-derivation of every stored field.
void check_consistent(const Example& ex) {
  const Command cmd = parse_command(ex.command);
  CHECK(ex.world.flat_index(resolve_referent(cmd, ex.world)) == ex.target);
  CHECK(plan(ex.world, ex.world.cell_at(ex.target)) == ex.actions);
  CHECK(ex.referent == referent_class(cmd));
  CHECK(static_cast<int>(ex.actions.size()) == testing::bfs_plan_length(ex.world, ex.world.cell_at(ex.target)));
  CHECK_FALSE(ex.world.objects.count(ex.world.agent.cell));
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("split C train never targets a red square, test always does") {
    const auto data = generate_split(SplitKind::red_squares, {400, 50, 200}, 7, kMicro);
    int red_non_square = 0, non_red_square = 0;
    for (const auto* phase : {&data.train, &data.dev}) {
      for (const auto& ex : *phase) {
        const auto& o = target_object(ex);
        CHECK_FALSE((o.shape == Shape::square && o.color == Color::red));
        red_non_square += o.color == Color::red;
        non_red_square += o.shape == Shape::square;
        check_consistent(ex);
      }
    }
    CHECK(red_non_square > 0);
    CHECK(non_red_square > 0);
    for (const auto& ex : data.test) {
      const auto& o = target_object(ex);
      CHECK((o.shape == Shape::square && o.color == Color::red));
      check_consistent(ex);
    }
  }

  TEST_CASE("split B constraints") {
    const auto data = generate_split(SplitKind::yellow_squares, {400, 50, 200}, 3, kMicro);
    for (const auto& ex : data.train) {
      const auto& o = target_object(ex);
      if (o.shape == Shape::square && o.color == Color::yellow) CHECK_FALSE(has_word(ex, "yellow"));
    }
    for (const auto& ex : data.test) {
      const auto& o = target_object(ex);
      CHECK((o.shape == Shape::square && o.color == Color::yellow));
      CHECK(has_word(ex, "yellow"));
    }
  }

  TEST_CASE("split E test scan") {
    const auto data = generate_split(SplitKind::relativity, {400, 50, 200}, 5, kMicro);
    for (const auto& ex : data.test) {
      const auto& o = target_object(ex);
      CHECK(o.shape == Shape::circle);
      CHECK(o.size == 2);
      CHECK(has_word(ex, "small"));
      int circles = 0;
      bool larger = false;
      for (const auto& [c, other] : ex.world.objects) {
        circles += other.shape == Shape::circle;
        larger |= other.shape == Shape::circle && other.size > 2;
      }
      CHECK(circles >= 2);
      CHECK(larger);
      check_consistent(ex);
    }
    for (const auto& ex : data.train) {
      const auto& o = target_object(ex);
      if (o.shape == Shape::circle && o.size == 2) CHECK_FALSE(has_word(ex, "small"));
    }
  }

  TEST_CASE("split A examples are consistent") {
    const auto data = generate_split(SplitKind::random, {300, 50, 100}, 11, kMicro);
    CHECK(data.train.size() == 300u);
    CHECK(data.dev.size() == 50u);
    CHECK(data.test.size() == 100u);
    for (const auto* phase : {&data.train, &data.dev, &data.test})
      for (const auto& ex : *phase) check_consistent(ex);
  }

  TEST_CASE("empty request is rejected") {
    CHECK_THROWS_AS(generate_split(SplitKind::random, {0, 10, 10}, 1, kMicro), Error);
  }

  TEST_CASE("contradictory config stalls") {
    Rng rng(1);
    try {
      generate_examples(rng, GeneratorConfig{4, 1, 1}, {SplitKind::relativity, Phase::test}, 5);
      FAIL("expected generation-stalled");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::generation_stalled);
    }
  }

  TEST_CASE("generation is deterministic and sharding is order-stable") {
    const auto a = generate_split(SplitKind::random, {120, 20, 40}, 9, kMicro, 3);
    const auto b = generate_split(SplitKind::random, {120, 20, 40}, 9, kMicro, 3);
    CHECK(a.train == b.train);
    CHECK(a.dev == b.dev);
    CHECK(a.test == b.test);
    const auto c = generate_split(SplitKind::random, {120, 20, 40}, 10, kMicro, 3);
    CHECK_FALSE(a.train == c.train);
    std::set<std::uint64_t> seeds;
    for (Phase p : kPhases)
      for (std::size_t w = 0; w < 4; ++w) seeds.insert(derive_seed(9, p, w));
    CHECK(seeds.size() == 12u);
  }

  TEST_CASE("jsonl round trip and schema") {
    const auto data = generate_split(SplitKind::relativity, {30, 5, 10}, 2, kMicro);
    const auto dir = scratch("roundtrip");
    write_split(dir, data);
    const auto back = read_split(dir);
    CHECK(back.train == data.train);
    CHECK(back.dev == data.dev);
    CHECK(back.test == data.test);
    const Json j = to_json(data.test.front());
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"command", "world", "target", "actions", "referent"});
    CHECK(example_from_json(j) == data.test.front());
  }

  TEST_CASE("fresh split validates clean") {
    const auto data = generate_split(SplitKind::yellow_squares, {200, 30, 60}, 4, kMicro);
    const auto dir = scratch("clean");
    write_split(dir, data);
    const auto report = validate_split(dir, SplitKind::yellow_squares);
    CHECK(report.total_violations() == 0u);
    CHECK(report.phases.at(Phase::train).records == 200u);
    CHECK(report.phases.at(Phase::test).records == 60u);
  }

  TEST_CASE("planted fault is reported at its line") {
    const auto data = generate_split(SplitKind::yellow_squares, {50, 5, 5}, 4, kMicro);
    const auto dir = scratch("planted");
    auto train = data.train;
    train.insert(train.begin() + 17, data.test.front());
    write_jsonl(dir / "train.jsonl", train);
    const auto report = validate_records(dir / "train.jsonl", SplitKind::yellow_squares, Phase::train);
    REQUIRE(report.total_violations() == 1u);
    CHECK(report.violations.front().line == 18u);
    CHECK(report.phases.at(Phase::train).records == 51u);
  }

  TEST_CASE("tampered plan and target are violations") {
    const auto data = generate_split(SplitKind::random, {10, 2, 2}, 8, kMicro);
    const auto dir = scratch("tampered");
    auto train = data.train;
    train[2].actions.push_back(Action::turn_left);
    train[5].target = (train[5].target + 1) % 16;
    write_jsonl(dir / "train.jsonl", train);
    const auto report = validate_records(dir / "train.jsonl", SplitKind::random, Phase::train);
    REQUIRE(report.total_violations() == 2u);
    CHECK(report.violations[0].line == 3u);
    CHECK(report.violations[1].line == 6u);
  }

  TEST_CASE("empty file gives zero records and a warning") {
    const auto dir = scratch("empty");
    std::ofstream(dir / "train.jsonl").close();
    const auto report = validate_records(dir / "train.jsonl", SplitKind::random, Phase::train);
    CHECK(report.total_violations() == 0u);
    CHECK(report.phases.at(Phase::train).records == 0u);
    CHECK(report.warnings.size() == 1u);
  }

  TEST_CASE("malformed lines carry line numbers") {
    const auto data = generate_split(SplitKind::random, {3, 1, 1}, 8, kMicro);
    const auto dir = scratch("malformed");
    {
      std::ofstream out(dir / "train.jsonl");
      out << to_json(data.train[0]).dump() << "\n{not json\n" << to_json(data.train[1]).dump() << "\n";
    }
    const auto report = validate_records(dir / "train.jsonl", SplitKind::random, Phase::train);
    REQUIRE(report.total_violations() == 1u);
    CHECK(report.violations.front().line == 2u);
    try {
      read_jsonl(dir / "train.jsonl");
      FAIL("expected parse error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::parse_error);
      CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
  }
}
