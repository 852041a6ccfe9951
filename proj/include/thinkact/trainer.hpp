#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "thinkact/dataset.hpp"
#include "thinkact/diffcore.hpp"
#include "thinkact/json_types.hpp"
#include "thinkact/model.hpp"

namespace thinkact {

struct TrainConfig {
  std::size_t iterations = 3000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t eval_every = 500;  // dev evaluation and checkpoint cadence; the final step is always evaluated
  std::size_t dev_limit = 0;     // 0 evaluates the whole dev set

  // Throws Error(invalid_argument) when iterations or batch_size is 0 or lr is negative.
  void validate() const;
};

// Everything one profile fixes: data sizes, generator, model widths and training schedule.
struct Profile {
  std::string name;
  GeneratorConfig generator;
  SplitSizes sizes;
  ModelConfig model;
  TrainConfig train;
};

Profile micro_profile();
Profile full_profile();
// Throws Error(invalid_argument) for names other than "micro" and "full".
Profile profile_by_name(const std::string& name);

// Reads the hyperparameter file. Recognized keys: cnn_dropout, decoder_dropout,
// encoder_dropout, aux_weight, variant, weighting, iterations, batch_size,
// learning_rate, seeds, eval_every, dev_limit. Unknown keys are rejected.
void apply_config(const Json& j, ModelConfig& model, TrainConfig& train);
Json config_to_json(const ModelConfig& model, const TrainConfig& train);

struct LossParts {
  diff::Value total;
  double sequence = 0.0;
  double aux = 0.0;
};

// (1 - w) * mean token cross-entropy + w * cross-entropy of the target cell.
// Without target scores, or with w = 0, only the sequence term remains.
LossParts total_loss(const diff::Value& sequence_logits, const std::vector<std::size_t>& gold,
                     const std::optional<TargetScores>& target, std::size_t target_cell, double aux_weight);

struct MetricsRow {
  std::size_t step = 0;
  double loss = 0.0;
  double sequence_loss = 0.0;
  double aux_loss = 0.0;
  std::optional<double> dev_exact_match;
  std::optional<double> dev_target_accuracy;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  std::size_t best_step = 0;
  double best_dev_exact_match = -1.0;
  double best_dev_target_accuracy = 0.0;
  std::optional<std::filesystem::path> checkpoint;
};

struct TrainOptions {
  std::uint64_t seed = 1;
  // When set, metrics.csv and the best checkpoint (model.json + model.bin) are written here.
  std::optional<std::filesystem::path> out_dir;
};

// Trains `model` in place with Adam. Batches are drawn from a seeded shuffle of
// the training set; each example's graph is built and backpropagated on its
// own with loss scaled by 1/batch. After training the model holds the
// parameters of the step with the best dev exact match (earliest on ties).
// Throws Error(nan_loss) naming the iteration when the loss stops being finite.
TrainResult train(Model& model, const std::vector<PreparedExample>& train_set,
                  const std::vector<PreparedExample>& dev_set, const TrainConfig& config, const TrainOptions& options);

std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct GridSetting {
  ModelConfig model;
  TrainConfig train;
};

struct GridOutcome {
  std::size_t best_index = 0;
  std::vector<double> dev_exact_match;
};

// Trains every setting with `seed` and returns the index with the highest dev
// exact match, lowest index on ties. Throws Error(invalid_argument) when empty.
GridOutcome hyper_grid(const std::vector<GridSetting>& settings, const std::vector<PreparedExample>& train_set,
                       const std::vector<PreparedExample>& dev_set, std::uint64_t seed);

// Grid over the hyperparameter ranges used for model selection:
// dropout rates in {0, 0.1, 0.3} for each module and aux_weight in {0.3, 0.5, 0.7}.
std::vector<GridSetting> default_grid(const ModelConfig& base_model, const TrainConfig& base_train);

}  // namespace thinkact
