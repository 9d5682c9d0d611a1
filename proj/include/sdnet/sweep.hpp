#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "sdnet/evaluation.hpp"
#include "sdnet/trainer.hpp"

namespace sdnet {

/// Label-budget sweep: every (variant, budget, fold) cell is trained on the
/// fold's split with the same unlabelled pool and evaluated on its test set.
struct SweepSpec {
  std::vector<std::int64_t> budgets;
  std::vector<ModelVariant> variants{ModelVariant::kUnet, ModelVariant::kGan, ModelVariant::kSdnet};
  std::int64_t folds = 3;
  /// Template for every cell; variant, n_labelled, fold and seed are set per cell.
  TrainConfig base;
  std::string dataset_tag = "phantom";
};

struct SweepCell {
  ModelVariant variant = ModelVariant::kSdnet;
  std::int64_t n_labelled = 0;
  std::int64_t fold = 0;
};

/// Cells ordered by fold, then budget, then variant.
std::vector<SweepCell> sweep_cells(const SweepSpec& spec);
/// Cell config: the base config with the cell's variant, budget and fold.
/// The fold also offsets the seed, so folds double as independent seeds.
TrainConfig cell_config(const SweepSpec& spec, const SweepCell& cell);
/// Raises ArgumentError when some budget cannot be drawn from some fold.
void check_sweep_feasible(const std::vector<LabelledSample>& dataset, const SweepSpec& spec);

/// Trains and evaluates one cell. A non-empty `run_dir` receives the
/// trainer's logs and checkpoints.
MetricRecord run_sweep_cell(const std::vector<LabelledSample>& dataset, const SweepSpec& spec, const SweepCell& cell,
                            const std::filesystem::path& run_dir = {});
/// Runs every cell in order. Run directories are `<run_root>/<variant>_n<budget>_f<fold>`.
std::vector<MetricRecord> run_label_sweep(const std::vector<LabelledSample>& dataset, const SweepSpec& spec,
                                          const std::filesystem::path& run_root = {});
std::string cell_dir_name(const SweepCell& cell);

/// One row per record: variant,dataset,fold,n_labelled,mean_dice,per_subject
/// where per_subject is a JSON object (subject -> Dice) in a quoted field.
void write_records_csv(std::ostream& out, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_records_csv(std::istream& in);
/// Rows are variants, columns are budgets (descending); cells hold the mean
/// over folds of the mean test Dice.
void write_summary_csv(std::ostream& out, const std::vector<MetricRecord>& records);

/// Mean over folds for one (variant, budget); NaN when absent.
double fold_mean(const std::vector<MetricRecord>& records, const std::string& variant, std::int64_t n_labelled);

}  // namespace sdnet
