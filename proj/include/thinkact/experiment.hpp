#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "thinkact/dataset.hpp"
#include "thinkact/evalkit.hpp"
#include "thinkact/model.hpp"
#include "thinkact/trainer.hpp"

namespace thinkact {

struct PreparedSplit {
  std::string split;
  std::vector<PreparedExample> train;
  std::vector<PreparedExample> dev;
  std::vector<PreparedExample> test;
};

PreparedSplit prepare_split(const std::string& split, const SplitData& data);

struct ExperimentRun {
  RunRecord record;
  TrainResult training;
  EvalSummary test;
};

// Initializes a model from `seed`, trains it, and evaluates the best-dev
// parameters on the test phase. With `out_dir`, writes model.json/.bin,
// metrics.csv, config.json, result.json and referents.csv there.
ExperimentRun run_experiment(const PreparedSplit& data, const ModelConfig& model, const TrainConfig& train,
                             std::uint64_t seed, const std::optional<std::filesystem::path>& out_dir,
                             std::size_t workers = 1);

// Default weighting for a variant: on for world/both, ablated for the baselines.
Weighting default_weighting(Variant v) noexcept;

std::string referents_csv(const std::vector<ReferentRow>& rows);

}  // namespace thinkact
