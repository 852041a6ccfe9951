#include "thinkact/experiment.hpp"

#include <cstdio>
#include <fstream>

#include "thinkact/error.hpp"

namespace thinkact {

PreparedSplit prepare_split(const std::string& split, const SplitData& data) {
  const Vocabulary vocab = Vocabulary::commands();
  return {split, prepare_all(data.train, vocab), prepare_all(data.dev, vocab), prepare_all(data.test, vocab)};
}

Weighting default_weighting(Variant v) noexcept {
  return v == Variant::world || v == Variant::both ? Weighting::on : Weighting::ablated;
}

std::string referents_csv(const std::vector<ReferentRow>& rows) {
  std::string out = "referent,count,exact_match\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%zu,%.6f\n", r.count, r.exact_match);
    out += r.referent + buf;
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io_error, "cannot write " + path.string());
  out << text;
}

}  // namespace

ExperimentRun run_experiment(const PreparedSplit& data, const ModelConfig& model_config, const TrainConfig& train_config,
                             std::uint64_t seed, const std::optional<std::filesystem::path>& out_dir,
                             std::size_t workers) {
  Model model(model_config, seed);
  ExperimentRun run;
  run.training = train(model, data.train, data.dev, train_config, TrainOptions{seed, out_dir});
  run.test = evaluate(model, data.test, workers);
  run.record = make_record(data.split, model_config, seed, run.test);
  if (out_dir) {
    write_text(*out_dir / "config.json", config_to_json(model_config, train_config).dump(2) + "\n");
    write_text(*out_dir / "result.json", to_json(run.record).dump(2) + "\n");
    write_text(*out_dir / "referents.csv", referents_csv(breakdown_by_referent(run.test.outcomes)));
  }
  return run;
}

}  // namespace thinkact
