#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "thinkact/checkpoint.hpp"
#include "thinkact/dataset.hpp"
#include "thinkact/error.hpp"
#include "thinkact/evalkit.hpp"
#include "thinkact/experiment.hpp"
#include "thinkact/gradcheck.hpp"
#include "thinkact/trainer.hpp"

namespace fs = std::filesystem;
using namespace thinkact;

namespace {

void log_line(const std::string& msg) {
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%H:%M:%S", std::localtime(&now));
  std::cerr << "[" << stamp << "] " << msg << std::endl;
}

Json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_error, "cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io_error, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

SplitKind require_split(const std::string& s) {
  const auto k = parse_split(s);
  if (!k) throw Error(ErrorKind::invalid_argument, "unknown split '" + s + "' (expected A, B, C or E)");
  return *k;
}

struct RunFlags {
  std::string profile = "micro";
  std::string config;
  std::string variant = "world";
  std::string weighting;
  std::size_t iterations = 0;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--profile", f.profile, "micro or full")->check(CLI::IsMember({"micro", "full"}));
  cmd->add_option("--config", f.config, "JSON hyperparameter file");
  cmd->add_option("--variant", f.variant, "baseline_no_aux, baseline_aux, world or both");
  cmd->add_option("--weighting", f.weighting, "on or ablated (default: on for world/both, ablated otherwise)");
  cmd->add_option("--iterations", f.iterations, "override the profile's iteration count");
}

Profile resolve(const RunFlags& f) {
  Profile p = profile_by_name(f.profile);
  if (!f.config.empty()) apply_config(read_json_file(f.config), p.model, p.train);
  const auto v = parse_variant(f.variant);
  if (!v) throw Error(ErrorKind::invalid_argument, "unknown variant '" + f.variant + "'");
  p.model.variant = *v;
  if (f.weighting.empty()) {
    p.model.weighting = default_weighting(*v);
  } else {
    const auto w = parse_weighting(f.weighting);
    if (!w) throw Error(ErrorKind::invalid_argument, "unknown weighting '" + f.weighting + "'");
    p.model.weighting = *w;
  }
  if (f.iterations > 0) p.train.iterations = f.iterations;
  p.model.validate();
  p.train.validate();
  return p;
}

std::string split_of_data(const fs::path& dir) {
  const fs::path meta = dir / "split.json";
  if (!fs::exists(meta)) throw Error(ErrorKind::io_error, meta.string() + " not found; was the directory made by generate?");
  return read_json_file(meta).at("split").get<std::string>();
}

// ---- subcommands ------------------------------------------------------------

struct GenerateArgs {
  std::string split;
  std::uint64_t seed = 1;
  std::string out;
  std::string profile = "micro";
  std::size_t workers = 1;
  std::size_t train_size = 0, dev_size = 0, test_size = 0;
};

int cmd_generate(const GenerateArgs& a) {
  const SplitKind kind = require_split(a.split);
  Profile p = profile_by_name(a.profile);
  if (a.train_size) p.sizes.train = a.train_size;
  if (a.dev_size) p.sizes.dev = a.dev_size;
  if (a.test_size) p.sizes.test = a.test_size;
  const SplitData data = generate_split(kind, p.sizes, a.seed, p.generator, a.workers);
  write_split(a.out, data);
  write_split_meta(a.out, {a.split, a.seed, a.profile, p.generator, a.workers, p.sizes});
  std::cout << "wrote " << data.train.size() << " train, " << data.dev.size() << " dev, " << data.test.size()
            << " test examples for split " << a.split << " to " << a.out << "\n";
  return 0;
}

int cmd_validate(const std::string& dir, std::string split) {
  if (split.empty()) split = split_of_data(dir);
  const ValidationReport r = validate_split(dir, require_split(split));
  for (const auto& [phase, pr] : r.phases)
    std::cout << to_string(phase) << ": " << pr.records << " records, " << pr.violations << " violations\n";
  for (const auto& w : r.warnings) std::cout << "warning: " << w << "\n";
  std::size_t shown = 0;
  for (const auto& v : r.violations) {
    if (shown++ == 20) {
      std::cout << "... " << r.violations.size() - 20 << " more\n";
      break;
    }
    std::cout << to_string(v.phase) << ".jsonl:" << v.line << ": " << v.reason << "\n";
  }
  std::cout << "total violations: " << r.total_violations() << "\n";
  return r.total_violations() == 0 ? 0 : 1;
}

int cmd_train(const std::string& data_dir, const std::string& out, std::uint64_t seed, const RunFlags& flags,
              std::size_t workers) {
  const Profile p = resolve(flags);
  const std::string split = split_of_data(data_dir);
  const PreparedSplit data = prepare_split(split, read_split(data_dir));
  log_line("training " + std::string(to_string(p.model.variant)) + "/" + std::string(to_string(p.model.weighting)) +
           " on split " + split + " for " + std::to_string(p.train.iterations) + " iterations");
  const ExperimentRun run = run_experiment(data, p.model, p.train, seed, fs::path(out), workers);
  std::printf("best step %zu dev exact match %.4f dev target accuracy %.4f\n", run.training.best_step,
              run.training.best_dev_exact_match, run.training.best_dev_target_accuracy);
  std::printf("test exact match %.2f%%", run.record.exact_match);
  if (run.record.target_accuracy) std::printf(" target accuracy %.2f%%", *run.record.target_accuracy);
  std::printf("\n");
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& checkpoint, const std::string& out,
             const std::string& phase_name, std::size_t workers) {
  const Json manifest = diff::read_manifest(checkpoint);
  const Json& meta = manifest.at("meta");
  const ModelConfig config = ModelConfig::from_json(meta.at("model"));
  const std::uint64_t seed = meta.at("seed").get<std::uint64_t>();
  Model model(config, seed);
  diff::load_checkpoint(checkpoint, model.parameters());

  const std::string split = split_of_data(data_dir);
  const SplitData data = read_split(data_dir);
  Phase phase = Phase::test;
  if (phase_name == "dev") phase = Phase::dev;
  else if (phase_name == "train") phase = Phase::train;
  else if (phase_name != "test") throw Error(ErrorKind::invalid_argument, "unknown phase '" + phase_name + "'");
  const auto examples = prepare_all(data.phase(phase), Vocabulary::commands());
  const EvalSummary s = evaluate(model, examples, workers);
  const RunRecord record = make_record(split, config, seed, s);

  fs::create_directories(out);
  write_json_file(fs::path(out) / "result.json", to_json(record));
  std::ofstream(fs::path(out) / "referents.csv", std::ios::binary) << referents_csv(breakdown_by_referent(s.outcomes));
  std::printf("%s exact match %.2f%%", phase_name.c_str(), record.exact_match);
  if (record.target_accuracy) std::printf(" target accuracy %.2f%%", *record.target_accuracy);
  std::printf(" over %zu examples\n", s.count);
  return 0;
}

int cmd_gradcheck(double eps, std::size_t coordinates, std::uint64_t seed) {
  double worst = 0.0;
  for (const auto& c : check_primitives(eps, seed)) {
    std::printf("%-22s max rel error %.3e over %zu coordinates\n", c.name.c_str(), c.result.max_relative_error,
                c.result.coordinates);
    worst = std::max(worst, c.result.max_relative_error);
  }
  for (Variant v : {Variant::world, Variant::both, Variant::baseline_aux, Variant::baseline_no_aux}) {
    const auto r = check_model(gradcheck_config(v, default_weighting(v)), eps, coordinates, seed);
    std::printf("model/%-16s max rel error %.3e over %zu coordinates (worst %s)\n",
                std::string(to_string(v)).c_str(), r.max_relative_error, r.coordinates, r.worst.c_str());
    worst = std::max(worst, r.max_relative_error);
  }
  std::printf("max relative error %.3e\n", worst);
  return worst < 1e-3 ? 0 : 1;
}

std::vector<RunRecord> collect_results(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      for (const auto& e : fs::recursive_directory_iterator(in))
        if (e.is_regular_file() && e.path().filename() == "result.json") files.push_back(e.path());
    } else {
      files.emplace_back(in);
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> runs;
  for (const auto& f : files) runs.push_back(run_record_from_json(read_json_file(f)));
  return runs;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  const auto runs = collect_results(inputs);
  if (runs.empty()) throw Error(ErrorKind::empty_cell, "no result.json files found");
  write_report(out, runs);
  std::cout << exact_match_table(runs).str();
  std::cout << "wrote report for " << runs.size() << " runs to " << out << "\n";
  return 0;
}

struct ReproArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::size_t seeds = 3;
  std::vector<std::string> splits{"A", "B", "C", "E"};
  std::vector<std::string> variants{"baseline_no_aux", "baseline_aux", "world", "both"};
  bool ablation = false;
};

int cmd_repro(const ReproArgs& a, const RunFlags& flags) {
  const fs::path root(a.out);
  std::vector<RunRecord> records;
  for (const auto& split : a.splits) {
    const SplitKind kind = require_split(split);
    Profile base = resolve(flags);
    log_line("generating split " + split);
    const SplitData raw = generate_split(kind, base.sizes, a.seed, base.generator, a.workers);
    write_split(root / "data" / split, raw);
    write_split_meta(root / "data" / split, {split, a.seed, flags.profile, base.generator, a.workers, base.sizes});
    const PreparedSplit data = prepare_split(split, raw);

    std::vector<std::pair<std::string, Weighting>> cells;
    for (const auto& v : a.variants) {
      const auto variant = parse_variant(v);
      if (!variant) throw Error(ErrorKind::invalid_argument, "unknown variant '" + v + "'");
      cells.emplace_back(v, default_weighting(*variant));
      if (a.ablation && default_weighting(*variant) == Weighting::on) cells.emplace_back(v, Weighting::ablated);
    }
    for (const auto& [v, w] : cells) {
      RunFlags f = flags;
      f.variant = v;
      f.weighting = std::string(to_string(w));
      const Profile p = resolve(f);
      for (std::size_t i = 0; i < a.seeds; ++i) {
        const std::uint64_t seed = a.seed + i;
        const fs::path dir = root / "runs" / split / (v + "-" + f.weighting) / ("seed" + std::to_string(seed));
        log_line("split " + split + " " + v + "/" + f.weighting + " seed " + std::to_string(seed));
        const ExperimentRun run = run_experiment(data, p.model, p.train, seed, dir, a.workers);
        records.push_back(run.record);
      }
    }
  }
  write_report(root / "report", records);
  std::cout << exact_match_table(records).str() << "\n" << target_accuracy_table(records).str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grid-world command following with target-first auxiliary heads"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Generate a split as JSONL files");
  generate->add_option("--split", gen.split, "A, B, C or E")->required();
  generate->add_option("--seed", gen.seed, "base seed");
  generate->add_option("--out", gen.out, "output directory")->required();
  generate->add_option("--profile", gen.profile, "micro or full")->check(CLI::IsMember({"micro", "full"}));
  generate->add_option("--workers", gen.workers, "generation threads");
  generate->add_option("--train-size", gen.train_size, "override the profile's train size");
  generate->add_option("--dev-size", gen.dev_size, "override the profile's dev size");
  generate->add_option("--test-size", gen.test_size, "override the profile's test size");

  std::string validate_dir, validate_split_name;
  auto* validate = app.add_subcommand("validate", "Check every record of a split against its constraints");
  validate->add_option("dir", validate_dir, "split directory")->required();
  validate->add_option("--split", validate_split_name, "A, B, C or E (default: read from split.json)");

  RunFlags train_flags;
  std::string train_data, train_out;
  std::uint64_t train_seed = 1;
  std::size_t train_workers = 1;
  auto* train_cmd = app.add_subcommand("train", "Train one model and evaluate it on the test phase");
  train_cmd->add_option("--data", train_data, "split directory")->required();
  train_cmd->add_option("--out", train_out, "run directory")->required();
  train_cmd->add_option("--seed", train_seed, "initialization and shuffling seed");
  train_cmd->add_option("--workers", train_workers, "evaluation threads");
  add_run_flags(train_cmd, train_flags);

  std::string eval_data, eval_checkpoint, eval_out, eval_phase = "test";
  std::size_t eval_workers = 1;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--data", eval_data, "split directory")->required();
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "model.json written by train")->required();
  eval_cmd->add_option("--out", eval_out, "output directory")->required();
  eval_cmd->add_option("--phase", eval_phase, "train, dev or test");
  eval_cmd->add_option("--workers", eval_workers, "evaluation threads");

  double eps = 1e-5;
  std::size_t coordinates = 60;
  std::uint64_t gc_seed = 1;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of primitives and full-model loss");
  gradcheck->add_option("--eps", eps, "central difference step");
  gradcheck->add_option("--coordinates", coordinates, "coordinates sampled per model");
  gradcheck->add_option("--seed", gc_seed, "sampling seed");

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Aggregate result.json files into tables");
  report->add_option("inputs", report_inputs, "result.json files or directories to search")->required();
  report->add_option("--out", report_out, "report directory")->required();

  ReproArgs repro;
  RunFlags repro_flags;
  auto* repro_cmd = app.add_subcommand("repro-micro", "Generate, train and evaluate every split and variant");
  repro_cmd->add_option("--out", repro.out, "output directory")->required();
  repro_cmd->add_option("--seed", repro.seed, "data seed; run seeds are seed, seed+1, ...");
  repro_cmd->add_option("--workers", repro.workers, "generation and evaluation threads");
  repro_cmd->add_option("--seeds", repro.seeds, "runs per cell");
  repro_cmd->add_option("--split", repro.splits, "splits to run")->delimiter(',');
  repro_cmd->add_option("--variants", repro.variants, "variants to run")->delimiter(',');
  repro_cmd->add_flag("--ablation", repro.ablation, "also run world/both with weighting ablated");
  repro_cmd->add_option("--profile", repro_flags.profile, "micro or full")->check(CLI::IsMember({"micro", "full"}));
  repro_cmd->add_option("--config", repro_flags.config, "JSON hyperparameter file");
  repro_cmd->add_option("--iterations", repro_flags.iterations, "override the profile's iteration count");

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({}))
      if (sub->get_name() == argv[1]) known = true;
    if (!known) {
      std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
      return 2;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*validate) return cmd_validate(validate_dir, validate_split_name);
    if (*train_cmd) return cmd_train(train_data, train_out, train_seed, train_flags, train_workers);
    if (*eval_cmd) return cmd_eval(eval_data, eval_checkpoint, eval_out, eval_phase, eval_workers);
    if (*gradcheck) return cmd_gradcheck(eps, coordinates, gc_seed);
    if (*report) return cmd_report(report_inputs, report_out);
    if (*repro_cmd) return cmd_repro(repro, repro_flags);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
