#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <tuple>
#include <vector>

#include "thinkact/dataset.hpp"
#include "thinkact/gridworld.hpp"
#include "thinkact/model.hpp"
#include "thinkact/planner.hpp"

namespace testing {

using namespace thinkact;

inline WorldState make_world(int d, Cell agent, Heading h, std::vector<std::pair<Cell, ObjectSpec>> objects) {
  WorldState w;
  w.d = d;
  w.agent = {agent, h};
  for (auto& [c, o] : objects) w.objects[c] = o;
  return w;
}

// Breadth-first search over (row, col, heading) with unit-cost action edges.
inline int bfs_plan_length(const WorldState& w, Cell target) {
  auto key = [&](Cell c, Heading h) { return (c.row * w.d + c.col) * 4 + static_cast<int>(h); };
  std::vector<int> dist(static_cast<std::size_t>(w.d * w.d * 4), -1);
  std::deque<std::pair<Cell, Heading>> queue;
  dist[static_cast<std::size_t>(key(w.agent.cell, w.agent.heading))] = 0;
  queue.emplace_back(w.agent.cell, w.agent.heading);
  while (!queue.empty()) {
    auto [c, h] = queue.front();
    queue.pop_front();
    const int d0 = dist[static_cast<std::size_t>(key(c, h))];
    if (c == target) return d0;
    const int dr[] = {-1, 0, 1, 0};
    const int dc[] = {0, 1, 0, -1};
    const int hi = static_cast<int>(h);
    std::vector<std::pair<Cell, Heading>> next{
        {c, static_cast<Heading>((hi + 3) % 4)},
        {c, static_cast<Heading>((hi + 1) % 4)},
    };
    Cell fwd{c.row + dr[hi], c.col + dc[hi]};
    if (fwd.row >= 0 && fwd.col >= 0 && fwd.row < w.d && fwd.col < w.d) next.emplace_back(fwd, h);
    for (auto& [nc, nh] : next) {
      auto& slot = dist[static_cast<std::size_t>(key(nc, nh))];
      if (slot < 0) {
        slot = d0 + 1;
        queue.emplace_back(nc, nh);
      }
    }
  }
  return -1;
}

// Shortest sequence length found by trying every action string of length
// 0, 1, 2, ... in a plain simulator.
inline int exhaustive_plan_length(const WorldState& w, Cell target, int max_len) {
  const int dr[] = {-1, 0, 1, 0};
  const int dc[] = {0, 1, 0, -1};
  for (int len = 0; len <= max_len; ++len) {
    long total = 1;
    for (int i = 0; i < len; ++i) total *= 3;
    for (long code = 0; code < total; ++code) {
      Cell c = w.agent.cell;
      int h = static_cast<int>(w.agent.heading);
      long rest = code;
      for (int i = 0; i < len; ++i) {
        const int a = static_cast<int>(rest % 3);
        rest /= 3;
        if (a == 0) {
          Cell n{c.row + dr[h], c.col + dc[h]};
          if (n.row >= 0 && n.col >= 0 && n.row < w.d && n.col < w.d) c = n;
        } else if (a == 1) {
          h = (h + 3) % 4;
        } else {
          h = (h + 1) % 4;
        }
      }
      if (c == target) return len;
    }
  }
  return -1;
}

// Small prepared examples from a d=4 generator.
inline std::vector<PreparedExample> micro_examples(std::size_t n, std::uint64_t seed,
                                                   SplitKind kind = SplitKind::random) {
  Rng rng(seed);
  return prepare_all(generate_examples(rng, GeneratorConfig{4, 2, 8}, {kind, Phase::train}, n),
                     Vocabulary::commands());
}

inline std::vector<double> values(const diff::Value& v) { return {v.data().begin(), v.data().end()}; }

}  // namespace testing
