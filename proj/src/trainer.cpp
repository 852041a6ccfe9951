#include "thinkact/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "thinkact/checkpoint.hpp"
#include "thinkact/error.hpp"
#include "thinkact/evalkit.hpp"

namespace thinkact {

void TrainConfig::validate() const {
  if (iterations == 0) throw Error(ErrorKind::invalid_argument, "iterations must be > 0");
  if (batch_size == 0) throw Error(ErrorKind::invalid_argument, "batch_size must be > 0");
  if (!(learning_rate >= 0.0)) throw Error(ErrorKind::invalid_argument, "learning_rate must be >= 0");
  if (eval_every == 0) throw Error(ErrorKind::invalid_argument, "eval_every must be > 0");
}

Profile micro_profile() {
  Profile p;
  p.name = "micro";
  p.generator = GeneratorConfig{4, 2, 8};
  p.sizes = SplitSizes{3000, 500, 500};
  p.model = ModelConfig::micro();
  p.train.iterations = 3000;
  p.train.batch_size = 32;
  p.train.eval_every = 500;
  return p;
}

Profile full_profile() {
  Profile p;
  p.name = "full";
  p.generator = GeneratorConfig{6, 2, 8};
  p.sizes = SplitSizes{20000, 500, 2000};
  p.model = ModelConfig::full();
  p.train.iterations = 200000;
  p.train.batch_size = 200;
  p.train.eval_every = 1000;
  return p;
}

Profile profile_by_name(const std::string& name) {
  if (name == "micro") return micro_profile();
  if (name == "full") return full_profile();
  throw Error(ErrorKind::invalid_argument, "unknown profile '" + name + "' (expected micro or full)");
}

void apply_config(const Json& j, ModelConfig& model, TrainConfig& train) {
  if (!j.is_object()) throw Error(ErrorKind::parse_error, "config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "cnn_dropout") model.cnn_dropout = value.get<double>();
      else if (key == "decoder_dropout") model.decoder_dropout = value.get<double>();
      else if (key == "encoder_dropout") model.encoder_dropout = value.get<double>();
      else if (key == "aux_weight") model.aux_weight = value.get<double>();
      else if (key == "variant" || key == "weighting") model = ModelConfig::from_json(Json{{key, value}}, model);
      else if (key == "iterations") train.iterations = value.get<std::size_t>();
      else if (key == "batch_size") train.batch_size = value.get<std::size_t>();
      else if (key == "learning_rate") train.learning_rate = value.get<double>();
      else if (key == "seeds") train.seeds = value.get<std::vector<std::uint64_t>>();
      else if (key == "eval_every") train.eval_every = value.get<std::size_t>();
      else if (key == "dev_limit") train.dev_limit = value.get<std::size_t>();
      else throw Error(ErrorKind::parse_error, "unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, e.what());
  }
}

Json config_to_json(const ModelConfig& model, const TrainConfig& train) {
  return Json{{"cnn_dropout", model.cnn_dropout},
              {"decoder_dropout", model.decoder_dropout},
              {"encoder_dropout", model.encoder_dropout},
              {"aux_weight", model.aux_weight},
              {"variant", to_string(model.variant)},
              {"weighting", to_string(model.weighting)},
              {"iterations", train.iterations},
              {"batch_size", train.batch_size},
              {"learning_rate", train.learning_rate},
              {"seeds", train.seeds},
              {"eval_every", train.eval_every},
              {"dev_limit", train.dev_limit}};
}

LossParts total_loss(const diff::Value& sequence_logits, const std::vector<std::size_t>& gold,
                     const std::optional<TargetScores>& target, std::size_t target_cell, double aux_weight) {
  const diff::Value seq = diff::cross_entropy(sequence_logits, gold);
  LossParts parts;
  parts.sequence = seq.item();
  if (!target || aux_weight == 0.0) {
    parts.total = seq;
    return parts;
  }
  if (target_cell >= target->scores.size())
    throw Error(ErrorKind::invalid_argument, "target cell " + std::to_string(target_cell) + " outside " +
                                                 std::to_string(target->scores.size()) + " scores");
  const diff::Value aux = diff::cross_entropy(target->scores, {target_cell});
  parts.aux = aux.item();
  parts.total = diff::add(diff::scale(seq, 1.0 - aux_weight), diff::scale(aux, aux_weight));
  return parts;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "step,loss,seq_loss,aux_loss,dev_exact_match,dev_target_acc\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,", r.step, r.loss, r.sequence_loss, r.aux_loss);
    out += buf;
    if (r.dev_exact_match) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.dev_exact_match);
      out += buf;
    }
    out += ',';
    if (r.dev_target_accuracy) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.dev_target_accuracy);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::vector<double>> snapshot(const diff::ParameterStore& store) {
  std::vector<std::vector<double>> out;
  for (const auto& p : store.all()) out.emplace_back(p.value.data().begin(), p.value.data().end());
  return out;
}

void restore(diff::ParameterStore& store, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    diff::Value v = store.all()[i].value;
    std::copy(values[i].begin(), values[i].end(), v.mutable_data().begin());
  }
}

}  // namespace

TrainResult train(Model& model, const std::vector<PreparedExample>& train_set,
                  const std::vector<PreparedExample>& dev_set, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw Error(ErrorKind::invalid_argument, "training set is empty");
  const ModelConfig& mc = model.config();
  Rng rng(options.seed ^ 0xA0761D6478BD642Full);  // kept apart from the init stream of the same seed
  diff::Adam adam(model.parameters(), diff::AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8});

  std::vector<PreparedExample> dev(dev_set.begin(),
                                   config.dev_limit > 0 && config.dev_limit < dev_set.size()
                                       ? dev_set.begin() + static_cast<std::ptrdiff_t>(config.dev_limit)
                                       : dev_set.end());

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);
  const auto manifest = options.out_dir ? std::optional(*options.out_dir / "model.json") : std::nullopt;

  TrainResult result;
  std::vector<std::vector<double>> best = snapshot(model.parameters());
  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);

  for (std::size_t step = 1; step <= config.iterations; ++step) {
    model.parameters().zero_grad();
    MetricsRow row;
    row.step = step;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const PreparedExample& ex = train_set[order[cursor++]];
      ForwardResult fwd = model.forward(ex, Mode::train, rng);
      LossParts loss = total_loss(fwd.logits, ex.gold, fwd.target, ex.target, mc.aux_weight);
      const double value = loss.total.item();
      if (!std::isfinite(value))
        throw Error(ErrorKind::nan_loss, "non-finite loss at iteration " + std::to_string(step));
      diff::scale(loss.total, inv_batch).backward();
      row.loss += value * inv_batch;
      row.sequence_loss += loss.sequence * inv_batch;
      row.aux_loss += loss.aux * inv_batch;
    }
    adam.step();

    if (step % config.eval_every == 0 || step == config.iterations) {
      if (!dev.empty()) {
        const EvalSummary s = evaluate(model, dev, 1);
        row.dev_exact_match = s.exact_match;
        row.dev_target_accuracy = s.target_accuracy;
      } else {
        row.dev_exact_match = 0.0;
      }
      if (*row.dev_exact_match > result.best_dev_exact_match) {
        result.best_dev_exact_match = *row.dev_exact_match;
        result.best_dev_target_accuracy = row.dev_target_accuracy.value_or(0.0);
        result.best_step = step;
        best = snapshot(model.parameters());
        if (manifest) {
          Json meta{{"model", mc.to_json()},
                    {"train", config_to_json(mc, config)},
                    {"seed", options.seed},
                    {"dev_exact_match", result.best_dev_exact_match}};
          diff::save_checkpoint(*manifest, model.parameters(), step, meta);
          result.checkpoint = manifest;
        }
      }
    }
    result.metrics.push_back(row);
  }
  restore(model.parameters(), best);

  if (options.out_dir) {
    std::ofstream out(*options.out_dir / "metrics.csv", std::ios::binary);
    if (!out) throw Error(ErrorKind::io_error, "cannot write metrics.csv");
    out << metrics_csv(result.metrics);
  }
  return result;
}

GridOutcome hyper_grid(const std::vector<GridSetting>& settings, const std::vector<PreparedExample>& train_set,
                       const std::vector<PreparedExample>& dev_set, std::uint64_t seed) {
  if (settings.empty()) throw Error(ErrorKind::invalid_argument, "hyperparameter grid is empty");
  GridOutcome out;
  for (std::size_t i = 0; i < settings.size(); ++i) {
    Model model(settings[i].model, seed);
    const TrainResult r = train(model, train_set, dev_set, settings[i].train, TrainOptions{seed, std::nullopt});
    out.dev_exact_match.push_back(r.best_dev_exact_match);
    if (r.best_dev_exact_match > out.dev_exact_match[out.best_index]) out.best_index = i;
  }
  return out;
}

std::vector<GridSetting> default_grid(const ModelConfig& base_model, const TrainConfig& base_train) {
  std::vector<GridSetting> out;
  const double rates[] = {0.0, 0.1, 0.3};
  const double weights[] = {0.3, 0.5, 0.7};
  for (double enc : rates)
    for (double dec : rates)
      for (double cnn : rates)
        for (double w : weights) {
          GridSetting s{base_model, base_train};
          s.model.encoder_dropout = enc;
          s.model.decoder_dropout = dec;
          s.model.cnn_dropout = cnn;
          s.model.aux_weight = w;
          out.push_back(s);
        }
  return out;
}

}  // namespace thinkact
