#include "thinkact/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>
#include <tuple>

#include "thinkact/error.hpp"

namespace thinkact {

bool exact_match(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& gold) {
  return predicted == gold;
}

std::size_t argmax(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorKind::invalid_argument, "argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

bool target_accuracy(std::span<const double> scores, std::size_t target_cell) {
  return argmax(scores) == target_cell;
}

std::size_t decode_cap(const std::vector<PreparedExample>& examples) {
  std::size_t longest = 0;
  for (const auto& ex : examples) longest = std::max(longest, ex.gold.size());
  return 2 * longest + 5;
}

EvalSummary evaluate(const Model& model, const std::vector<PreparedExample>& examples, std::size_t workers) {
  EvalSummary summary;
  summary.count = examples.size();
  summary.outcomes.resize(examples.size());
  const std::size_t cap = decode_cap(examples);

  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const PreparedExample& ex = examples[i];
      DecodeResult d = model.greedy_decode(ex, cap);
      ExampleOutcome& o = summary.outcomes[i];
      o.capped = !d.terminated;
      o.exact = d.terminated && exact_match(d.tokens, ex.gold);
      if (d.target) o.target_hit = target_accuracy(d.target->scores.data(), ex.target);
      o.referent = ex.referent;
      o.predicted = std::move(d.tokens);
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, examples.size()));
  if (workers == 1) {
    run(0, examples.size());
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk = (examples.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(examples.size(), begin + chunk);
      if (begin < end) threads.emplace_back(run, begin, end);
    }
    for (auto& t : threads) t.join();
  }

  if (examples.empty()) return summary;
  std::size_t exact = 0, hits = 0, scored = 0;
  for (const auto& o : summary.outcomes) {
    exact += o.exact;
    if (o.target_hit) {
      ++scored;
      hits += *o.target_hit;
    }
  }
  summary.exact_match = static_cast<double>(exact) / static_cast<double>(examples.size());
  if (scored > 0) summary.target_accuracy = static_cast<double>(hits) / static_cast<double>(scored);
  return summary;
}

std::vector<ReferentRow> breakdown_by_referent(const std::vector<ExampleOutcome>& outcomes) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> groups;  // count, exact
  for (const auto& o : outcomes) {
    auto& g = groups[o.referent];
    ++g.first;
    g.second += o.exact;
  }
  std::vector<ReferentRow> rows;
  for (const auto& [referent, g] : groups)
    rows.push_back({referent, g.first, static_cast<double>(g.second) / static_cast<double>(g.first)});
  return rows;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorKind::empty_cell, "no values to aggregate");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

std::string format_mean_std(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", m.mean + 0.0, m.stddev + 0.0);
  return buf;
}

std::string format_cell(const std::vector<double>& values) { return format_mean_std(mean_std(values)); }

Json to_json(const RunRecord& r) {
  Json referents = Json::object();
  for (const auto& [k, v] : r.referent_exact_match) referents[k] = v;
  return Json{{"split", r.split},
              {"variant", to_string(r.variant)},
              {"weighting", to_string(r.weighting)},
              {"seed", r.seed},
              {"exact_match", r.exact_match},
              {"target_accuracy", r.target_accuracy ? Json(*r.target_accuracy) : Json(nullptr)},
              {"referent_exact_match", std::move(referents)}};
}

RunRecord run_record_from_json(const Json& j) {
  try {
    RunRecord r;
    r.split = j.at("split").get<std::string>();
    const auto v = parse_variant(j.at("variant").get<std::string>());
    const auto w = parse_weighting(j.at("weighting").get<std::string>());
    if (!v || !w) throw Error(ErrorKind::parse_error, "bad variant or weighting in run record");
    r.variant = *v;
    r.weighting = *w;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.exact_match = j.at("exact_match").get<double>();
    if (j.contains("target_accuracy") && !j.at("target_accuracy").is_null())
      r.target_accuracy = j.at("target_accuracy").get<double>();
    if (j.contains("referent_exact_match"))
      for (const auto& [k, v2] : j.at("referent_exact_match").items()) r.referent_exact_match[k] = v2.get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, e.what());
  }
}

RunRecord make_record(const std::string& split, const ModelConfig& config, std::uint64_t seed,
                      const EvalSummary& summary) {
  RunRecord r;
  r.split = split;
  r.variant = config.variant;
  r.weighting = config.weighting;
  r.seed = seed;
  r.exact_match = 100.0 * summary.exact_match;
  if (summary.target_accuracy) r.target_accuracy = 100.0 * *summary.target_accuracy;
  for (const auto& row : breakdown_by_referent(summary.outcomes)) r.referent_exact_match[row.referent] = 100.0 * row.exact_match;
  return r;
}

std::string split_label(const std::string& split) {
  if (split == "A") return "A: Random";
  if (split == "B") return "B: Yellow squares";
  if (split == "C") return "C: Red squares";
  if (split == "E") return "E: Relativity";
  return split;
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v + 0.0);
  return buf;
}

int split_rank(const std::string& s) {
  static const std::vector<std::string> order{"A", "B", "C", "E"};
  const auto it = std::find(order.begin(), order.end(), s);
  return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

std::vector<RunRecord> sorted(std::vector<RunRecord> runs) {
  std::stable_sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::make_tuple(split_rank(a.split), a.split, a.variant, a.weighting, a.seed) <
           std::make_tuple(split_rank(b.split), b.split, b.variant, b.weighting, b.seed);
  });
  return runs;
}

std::vector<std::string> splits_of(const std::vector<RunRecord>& runs) {
  std::vector<std::string> out;
  for (const auto& r : sorted(runs))
    if (std::find(out.begin(), out.end(), r.split) == out.end()) out.push_back(r.split);
  return out;
}

struct Column {
  Variant variant;
  Weighting weighting;
};

std::vector<double> exact_values(const std::vector<RunRecord>& runs, const std::string& split, Column c) {
  std::vector<double> out;
  for (const auto& r : runs)
    if (r.split == split && r.variant == c.variant && r.weighting == c.weighting) out.push_back(r.exact_match);
  return out;
}

std::vector<double> target_values(const std::vector<RunRecord>& runs, const std::string& split, Column c) {
  std::vector<double> out;
  for (const auto& r : runs)
    if (r.split == split && r.variant == c.variant && r.weighting == c.weighting && r.target_accuracy)
      out.push_back(*r.target_accuracy);
  return out;
}

std::string cell_or_na(const std::vector<double>& values) { return values.empty() ? "n/a" : format_cell(values); }

constexpr Column kNoAux{Variant::baseline_no_aux, Weighting::ablated};
constexpr Column kBaselineAux{Variant::baseline_aux, Weighting::ablated};
constexpr Column kWorld{Variant::world, Weighting::on};
constexpr Column kBoth{Variant::both, Weighting::on};
constexpr Column kWorldAblated{Variant::world, Weighting::ablated};
constexpr Column kBothAblated{Variant::both, Weighting::ablated};

}  // namespace

std::string CsvTable::str() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(cells[i]);
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

CsvTable results_table(const std::vector<RunRecord>& runs) {
  CsvTable t{{"split", "variant", "weighting", "seed", "exact_match", "target_accuracy"}, {}};
  for (const auto& r : sorted(runs))
    t.rows.push_back({r.split, std::string(to_string(r.variant)), std::string(to_string(r.weighting)),
                      std::to_string(r.seed), number(r.exact_match),
                      r.target_accuracy ? number(*r.target_accuracy) : ""});
  return t;
}

CsvTable aggregate_table(const std::vector<RunRecord>& runs) {
  CsvTable t{{"split", "variant", "weighting", "seeds", "exact_match", "target_accuracy"}, {}};
  const auto ordered = sorted(runs);
  for (std::size_t i = 0; i < ordered.size();) {
    std::size_t j = i;
    std::vector<double> em, ta;
    while (j < ordered.size() && ordered[j].split == ordered[i].split && ordered[j].variant == ordered[i].variant &&
           ordered[j].weighting == ordered[i].weighting) {
      em.push_back(ordered[j].exact_match);
      if (ordered[j].target_accuracy) ta.push_back(*ordered[j].target_accuracy);
      ++j;
    }
    t.rows.push_back({ordered[i].split, std::string(to_string(ordered[i].variant)),
                      std::string(to_string(ordered[i].weighting)), std::to_string(em.size()), format_cell(em),
                      cell_or_na(ta)});
    i = j;
  }
  return t;
}

CsvTable exact_match_table(const std::vector<RunRecord>& runs) {
  CsvTable t{{"Split", "Baseline w/o aux", "GECA", "Baseline w/ aux", "Ours (world)", "Ours (both)"}, {}};
  for (const auto& s : splits_of(runs))
    t.rows.push_back({split_label(s), cell_or_na(exact_values(runs, s, kNoAux)), "n/a",
                      cell_or_na(exact_values(runs, s, kBaselineAux)), cell_or_na(exact_values(runs, s, kWorld)),
                      cell_or_na(exact_values(runs, s, kBoth))});
  return t;
}

CsvTable target_accuracy_table(const std::vector<RunRecord>& runs) {
  CsvTable t{{"Split", "Baseline w/ aux", "Ours (world)", "Ours (both)"}, {}};
  for (const auto& s : splits_of(runs))
    t.rows.push_back({split_label(s), cell_or_na(target_values(runs, s, kBaselineAux)),
                      cell_or_na(target_values(runs, s, kWorld)), cell_or_na(target_values(runs, s, kBoth))});
  return t;
}

CsvTable referent_table(const std::vector<RunRecord>& runs, const std::string& split) {
  CsvTable t{{"Referred target", "Baseline w/ aux", "Ours (world)", "Ours (both)"}, {}};
  std::set<std::string> referents;
  for (const auto& r : runs)
    if (r.split == split)
      for (const auto& kv : r.referent_exact_match) referents.insert(kv.first);
  auto values = [&](const std::string& referent, Column c) {
    std::vector<double> out;
    for (const auto& r : runs) {
      if (r.split != split || r.variant != c.variant || r.weighting != c.weighting) continue;
      const auto it = r.referent_exact_match.find(referent);
      if (it != r.referent_exact_match.end()) out.push_back(it->second);
    }
    return out;
  };
  for (const auto& ref : referents)
    t.rows.push_back({ref, cell_or_na(values(ref, kBaselineAux)), cell_or_na(values(ref, kWorld)),
                      cell_or_na(values(ref, kBoth))});
  return t;
}

CsvTable ablation_table(const std::vector<RunRecord>& runs) {
  CsvTable t{{"Split", "Exact match: World, ablated", "Exact match: Both, ablated",
              "Target prediction accuracy: World, ablated", "Target prediction accuracy: Both, ablated"},
             {}};
  for (const auto& s : splits_of(runs))
    t.rows.push_back({split_label(s), cell_or_na(exact_values(runs, s, kWorldAblated)),
                      cell_or_na(exact_values(runs, s, kBothAblated)), cell_or_na(target_values(runs, s, kWorldAblated)),
                      cell_or_na(target_values(runs, s, kBothAblated))});
  return t;
}

CsvTable scatter_table(const std::vector<RunRecord>& runs) {
  CsvTable t{{"variant", "weighting", "split", "exact_match_mean", "target_accuracy_mean", "seeds"}, {}};
  const auto ordered = sorted(runs);
  std::vector<std::tuple<Variant, Weighting, std::string>> keys;
  for (const auto& r : ordered)
    if (r.target_accuracy) {
      auto key = std::make_tuple(r.variant, r.weighting, r.split);
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    }
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    return std::make_tuple(std::get<0>(a), std::get<1>(a), split_rank(std::get<2>(a)), std::get<2>(a)) <
           std::make_tuple(std::get<0>(b), std::get<1>(b), split_rank(std::get<2>(b)), std::get<2>(b));
  });
  for (const auto& [variant, weighting, split] : keys) {
    const Column c{variant, weighting};
    const auto em = exact_values(ordered, split, c);
    const auto ta = target_values(ordered, split, c);
    t.rows.push_back({std::string(to_string(variant)), std::string(to_string(weighting)), split,
                      number(mean_std(em).mean), number(mean_std(ta).mean), std::to_string(ta.size())});
  }
  return t;
}

void write_report(const std::filesystem::path& dir, const std::vector<RunRecord>& runs) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const CsvTable& t) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error(ErrorKind::io_error, "cannot write " + (dir / name).string());
    out << t.str();
  };
  write("results.csv", results_table(runs));
  write("table.csv", aggregate_table(runs));
  write("table1.csv", exact_match_table(runs));
  write("tableA1.csv", target_accuracy_table(runs));
  write("tableA2.csv", referent_table(runs));
  write("tableA3.csv", ablation_table(runs));
  write("scatter.csv", scatter_table(runs));
}

}  // namespace thinkact
