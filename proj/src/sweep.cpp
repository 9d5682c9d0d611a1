#include "sdnet/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace sdnet {
namespace {

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

}  // namespace

std::vector<SweepCell> sweep_cells(const SweepSpec& spec) {
  if (spec.budgets.empty() || spec.variants.empty() || spec.folds < 1) {
    throw ArgumentError("a sweep needs at least one budget, one variant and one fold");
  }
  std::vector<SweepCell> cells;
  for (std::int64_t fold = 0; fold < spec.folds; ++fold) {
    for (auto budget : spec.budgets) {
      for (auto variant : spec.variants) cells.push_back({variant, budget, fold});
    }
  }
  return cells;
}

TrainConfig cell_config(const SweepSpec& spec, const SweepCell& cell) {
  auto config = spec.base;
  config.variant = cell.variant;
  config.n_labelled = cell.n_labelled;
  config.fold = cell.fold;
  config.seed = spec.base.seed + static_cast<std::uint64_t>(cell.fold);
  return config;
}

void check_sweep_feasible(const std::vector<LabelledSample>& dataset, const SweepSpec& spec) {
  for (auto budget : spec.budgets) {
    if (budget < 1) throw ArgumentError("sweep budgets must be positive, got " + std::to_string(budget));
  }
  for (const auto& cell : sweep_cells(spec)) {
    try {
      (void)make_training_data(dataset, cell_config(spec, cell));
    } catch (const ArgumentError& e) {
      throw ArgumentError("budget " + std::to_string(cell.n_labelled) + " in fold " + std::to_string(cell.fold) +
                          " is infeasible: " + e.what());
    }
  }
}

std::string cell_dir_name(const SweepCell& cell) {
  return to_string(cell.variant) + "_n" + std::to_string(cell.n_labelled) + "_f" + std::to_string(cell.fold);
}

MetricRecord run_sweep_cell(const std::vector<LabelledSample>& dataset, const SweepSpec& spec, const SweepCell& cell,
                            const std::filesystem::path& run_dir) {
  const auto config = cell_config(spec, cell);
  const auto data = make_training_data(dataset, config);
  auto state = make_train_state(config);
  run_training(state, data, RunOutputs{run_dir, {}});
  auto best = state.best_params();
  auto record = evaluate_model(best, data.test, &data.split);
  record.variant = to_string(cell.variant);
  record.dataset = spec.dataset_tag;
  record.fold = cell.fold;
  record.n_labelled = cell.n_labelled;
  return record;
}

std::vector<MetricRecord> run_label_sweep(const std::vector<LabelledSample>& dataset, const SweepSpec& spec,
                                          const std::filesystem::path& run_root) {
  check_sweep_feasible(dataset, spec);
  std::vector<MetricRecord> records;
  for (const auto& cell : sweep_cells(spec)) {
    const auto dir = run_root.empty() ? std::filesystem::path() : run_root / cell_dir_name(cell);
    records.push_back(run_sweep_cell(dataset, spec, cell, dir));
  }
  return records;
}

void write_records_csv(std::ostream& out, const std::vector<MetricRecord>& records) {
  out << "variant,dataset,fold,n_labelled,mean_dice,per_subject\n";
  for (const auto& r : records) {
    nlohmann::ordered_json subjects = nlohmann::ordered_json::object();
    for (const auto& [id, dice] : r.per_subject) subjects[id] = dice;
    out << r.variant << ',' << r.dataset << ',' << r.fold << ',' << r.n_labelled << ','
        << std::setprecision(17) << r.mean_dice << ',' << csv_quote(subjects.dump()) << '\n';
  }
}

std::vector<MetricRecord> read_records_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("empty sweep CSV");
  std::vector<MetricRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw IngestionError("malformed sweep CSV row: " + line);
    MetricRecord r;
    try {
      r.variant = f[0];
      r.dataset = f[1];
      r.fold = std::stoll(f[2]);
      r.n_labelled = std::stoll(f[3]);
      r.mean_dice = std::stod(f[4]);
      const auto subjects = nlohmann::ordered_json::parse(f[5]);
      for (const auto& [id, dice] : subjects.items()) r.per_subject.emplace_back(id, dice.get<double>());
    } catch (const std::exception& e) {
      throw IngestionError("malformed sweep CSV row (" + std::string(e.what()) + "): " + line);
    }
    records.push_back(std::move(r));
  }
  return records;
}

double fold_mean(const std::vector<MetricRecord>& records, const std::string& variant, std::int64_t n_labelled) {
  double sum = 0.0;
  int count = 0;
  for (const auto& r : records) {
    if (r.variant == variant && r.n_labelled == n_labelled) {
      sum += r.mean_dice;
      ++count;
    }
  }
  return count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / count;
}

void write_summary_csv(std::ostream& out, const std::vector<MetricRecord>& records) {
  std::vector<std::string> variants;
  std::set<std::int64_t, std::greater<>> budgets;
  for (const auto& r : records) {
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
    budgets.insert(r.n_labelled);
  }
  out << "labelled_images";
  for (auto b : budgets) out << ',' << b;
  out << '\n';
  for (const auto& v : variants) {
    out << v;
    for (auto b : budgets) {
      const double m = fold_mean(records, v, b);
      out << ',';
      if (!std::isnan(m)) out << std::fixed << std::setprecision(4) << m << std::defaultfloat;
    }
    out << '\n';
  }
}

}  // namespace sdnet
