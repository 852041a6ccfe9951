#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "thinkact/json_types.hpp"
#include "thinkact/model.hpp"

namespace thinkact {

// Token-for-token equality including length.
bool exact_match(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& gold);

// Index of the largest score; the lowest index wins ties.
std::size_t argmax(std::span<const double> scores);
bool target_accuracy(std::span<const double> scores, std::size_t target_cell);

struct ExampleOutcome {
  bool exact = false;
  std::optional<bool> target_hit;  // absent for models without target scores
  bool capped = false;             // decoding stopped at the step cap without EOS
  std::string referent;
  std::vector<std::size_t> predicted;
};

struct EvalSummary {
  std::size_t count = 0;
  double exact_match = 0.0;  // fraction in [0, 1]
  std::optional<double> target_accuracy;
  std::vector<ExampleOutcome> outcomes;
};

// 2 * (longest gold sequence, EOS included) + 5.
std::size_t decode_cap(const std::vector<PreparedExample>& examples);

// Greedy-decodes every example. `workers` threads share the read-only model.
EvalSummary evaluate(const Model& model, const std::vector<PreparedExample>& examples, std::size_t workers = 1);

struct ReferentRow {
  std::string referent;
  std::size_t count = 0;
  double exact_match = 0.0;  // fraction in [0, 1]
};

// Per-class mean exact match, classes sorted lexicographically.
std::vector<ReferentRow> breakdown_by_referent(const std::vector<ExampleOutcome>& outcomes);

// ---- reports ----------------------------------------------------------------

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

// Throws Error(empty_cell) on an empty input.
MeanStd mean_std(const std::vector<double>& values);
// "m ± s" with two decimals.
std::string format_mean_std(const MeanStd& m);
std::string format_cell(const std::vector<double>& values);

// One trained-and-evaluated model. Metrics are percentages.
struct RunRecord {
  std::string split;  // "A", "B", "C", "E"
  Variant variant = Variant::world;
  Weighting weighting = Weighting::on;
  std::uint64_t seed = 0;
  double exact_match = 0.0;
  std::optional<double> target_accuracy;
  std::map<std::string, double> referent_exact_match;

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

Json to_json(const RunRecord& r);
RunRecord run_record_from_json(const Json& j);

RunRecord make_record(const std::string& split, const ModelConfig& config, std::uint64_t seed,
                      const EvalSummary& summary);

// "A: Random" and so on.
std::string split_label(const std::string& split);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string str() const;
};

// Cells without runs print "n/a"; the GECA column is always "n/a" since the
// augmentation baseline is not implemented.
CsvTable results_table(const std::vector<RunRecord>& runs);
CsvTable aggregate_table(const std::vector<RunRecord>& runs);
CsvTable exact_match_table(const std::vector<RunRecord>& runs);        // split x variant exact match
CsvTable target_accuracy_table(const std::vector<RunRecord>& runs);    // split x aux variant target accuracy
CsvTable referent_table(const std::vector<RunRecord>& runs,
                        const std::string& split = "E");               // referent x aux variant exact match
CsvTable ablation_table(const std::vector<RunRecord>& runs);           // ablated world/both, both metrics
CsvTable scatter_table(const std::vector<RunRecord>& runs);            // one row per (variant, weighting, split)

// Writes results.csv, table.csv, table1.csv, tableA1.csv, tableA2.csv, tableA3.csv and scatter.csv.
void write_report(const std::filesystem::path& dir, const std::vector<RunRecord>& runs);

}  // namespace thinkact
