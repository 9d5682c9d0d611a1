#include "sdnet/cli.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "sdnet/config.hpp"
#include "sdnet/evaluation.hpp"
#include "sdnet/latent_lab.hpp"
#include "sdnet/nifti.hpp"
#include "sdnet/phantom.hpp"
#include "sdnet/sweep.hpp"
#include "sdnet/trainer.hpp"

extern char** environ;

namespace sdnet::cli {
namespace {

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file");
  cmd->add_option("--set", args.overrides, "override as key=value (repeatable, last wins)");
}

TrainConfig resolve_config(const ConfigArgs& args) {
  KeyValues kv;
  if (!args.config_path.empty()) kv = read_config_file(args.config_path);
  for (const auto& o : args.overrides) apply_override(kv, o);
  auto config = train_config_from(kv);
  config.validate();
  return config;
}

std::filesystem::path prepare_out(const std::string& out, const std::string& subcommand) {
  const std::filesystem::path dir = out.empty() ? default_output_dir(subcommand) : std::filesystem::path(out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void write_snapshot(const std::filesystem::path& dir, const KeyValues& kv, std::uint64_t seed) {
  std::ostringstream cfg;
  write_key_values(cfg, kv);
  write_text(dir / "config.cfg", cfg.str());
  write_text(dir / "seed.txt", std::to_string(seed) + "\n");
}

void write_snapshot(const std::filesystem::path& dir, const TrainConfig& config) {
  write_snapshot(dir, to_key_values(config), config.seed);
}

std::vector<LabelledSample> load_data(const TrainConfig& config) {
  if (config.data_dir.empty()) throw ConfigError("data.dir is not set");
  return load_dataset(config.data_dir);
}

std::string dataset_tag(const TrainConfig& config) {
  const auto manifest = load_manifest(config.data_dir);
  return manifest.value("dataset", std::string("custom"));
}

void write_records(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
  std::ostringstream csv;
  write_records_csv(csv, records);
  write_text(path, csv.str());
}

NetworkParams load_any_params(const std::filesystem::path& path) {
  const auto contents = read_checkpoint(path);
  if (contents.meta.value("kind", std::string()) == "train_state") return resume(path).best_params();
  return load_params(path);
}

// --- phantom ---------------------------------------------------------------

struct PhantomArgs {
  std::int64_t n = 600;
  std::uint64_t seed = 0;
  std::int64_t size = 64;
  std::int64_t slices_per_subject = 10;
  std::string out;
};

int cmd_phantom(const PhantomArgs& a) {
  const auto dir = prepare_out(a.out, "phantom");
  PhantomSpec spec;
  spec.seed = a.seed;
  spec.image_size = a.size;
  spec.slices_per_subject = a.slices_per_subject;
  const auto samples = generate_phantom(spec, a.n);
  save_dataset(samples, nlohmann::json{{"dataset", "phantom"}, {"phantom", spec}}, dir);
  write_snapshot(dir,
                 KeyValues{{"n", std::to_string(a.n)},
                           {"seed", std::to_string(a.seed)},
                           {"size", std::to_string(a.size)},
                           {"slices_per_subject", std::to_string(a.slices_per_subject)}},
                 a.seed);
  std::cout << "wrote " << samples.size() << " phantom samples to " << dir.string() << '\n';
  return 0;
}

// --- preprocess ------------------------------------------------------------

struct PreprocessArgs {
  std::string input;
  std::string out;
  double label = 2.0;
  std::int64_t size = kCanonicalSize;
  std::string tag = "acdc";
};

std::string subject_of(const std::filesystem::path& image) {
  const auto parent = image.parent_path().filename().string();
  if (!parent.empty() && parent.rfind("patient", 0) == 0) return parent;
  const auto name = image.filename().string();
  return name.substr(0, name.find('_'));
}

int cmd_preprocess(const PreprocessArgs& a) {
  if (!std::filesystem::is_directory(a.input)) throw IngestionError("input directory " + a.input + " not found");
  std::vector<std::filesystem::path> labels;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a.input)) {
    const auto name = e.path().filename().string();
    if (name.ends_with("_gt.nii") || name.ends_with("_gt.nii.gz")) labels.push_back(e.path());
  }
  std::sort(labels.begin(), labels.end());
  if (labels.empty()) throw IngestionError("no *_gt.nii[.gz] label volumes under " + a.input);

  const auto dir = prepare_out(a.out, "preprocess");
  std::vector<LabelledSample> samples;
  for (const auto& label_path : labels) {
    auto image_name = label_path.filename().string();
    image_name.erase(image_name.find("_gt.nii"), 3);
    const auto image_path = label_path.parent_path() / image_name;
    const auto subject = subject_of(image_path);
    auto slices = preprocess_volume(load_volume(image_path), load_volume(label_path), static_cast<float>(a.label),
                                    subject + "_" + image_name.substr(0, image_name.find(".nii")), a.size);
    for (auto& s : slices) {
      s.subject_id = subject;
      samples.push_back(std::move(s));
    }
  }
  save_dataset(samples, nlohmann::json{{"dataset", a.tag}, {"source", a.input}}, dir);
  std::ostringstream label;
  label << a.label;
  write_snapshot(dir,
                 KeyValues{{"input", a.input}, {"label", label.str()}, {"size", std::to_string(a.size)},
                           {"tag", a.tag}},
                 0);
  std::cout << "wrote " << samples.size() << " slices from " << labels.size() << " volumes to " << dir.string()
            << '\n';
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  ConfigArgs config;
  std::string out;
  std::string resume_from;
};

int cmd_train(const TrainArgs& a) {
  const auto dir = prepare_out(a.out, "train");
  TrainState state;
  if (a.resume_from.empty()) {
    state = make_train_state(resolve_config(a.config));
  } else {
    state = resume(a.resume_from);
  }
  write_snapshot(dir, state.config);
  const auto data = make_training_data(load_data(state.config), state.config);
  run_training(state, data, RunOutputs{dir, [](const LossReport& r) {
                                         if (r.step % 50 == 0) {
                                           std::cout << "step " << r.step << " composite " << r.composite << '\n';
                                         }
                                       }});
  auto best = state.best_params();
  auto record = evaluate_model(best, data.test, &data.split);
  record.variant = to_string(state.config.variant);
  record.dataset = dataset_tag(state.config);
  record.fold = state.config.fold;
  record.n_labelled = state.config.n_labelled;
  write_records(dir / "test_metrics.csv", {record});
  std::cout << "test Dice " << record.mean_dice << " (best validation epoch " << state.best_epoch << ")\n";
  return 0;
}

// --- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  ConfigArgs config;
  std::string checkpoint;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto config = resolve_config(a.config);
  const auto dir = prepare_out(a.out, "evaluate");
  write_snapshot(dir, config);
  auto params = load_any_params(a.checkpoint);
  const auto data = make_training_data(load_data(config), config);
  auto record = evaluate_model(params, data.test, &data.split);
  record.variant = to_string(config.variant);
  record.dataset = dataset_tag(config);
  record.fold = config.fold;
  record.n_labelled = config.n_labelled;
  write_records(dir / "test_metrics.csv", {record});
  std::cout << "test Dice " << record.mean_dice << " over " << record.per_subject.size() << " subjects\n";
  return 0;
}

// --- sweep -----------------------------------------------------------------

struct SweepArgs {
  ConfigArgs config;
  std::vector<std::int64_t> budgets;
  std::vector<std::string> variants{"unet", "gan", "sdnet"};
  std::int64_t folds = 3;
  int jobs = 1;
  int cell = -1;
  std::string out;
};

std::filesystem::path cell_csv(const std::filesystem::path& dir, const SweepCell& cell) {
  return dir / "cells" / (cell_dir_name(cell) + ".csv");
}

void run_cell(const std::vector<LabelledSample>& dataset, const SweepSpec& spec, const SweepCell& cell,
              const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "cells");
  const auto record = run_sweep_cell(dataset, spec, cell, dir / "runs" / cell_dir_name(cell));
  write_records(cell_csv(dir, cell), {record});
  std::cout << cell_dir_name(cell) << " mean Dice " << record.mean_dice << '\n';
}

/// Runs cells in child processes of this executable, at most `jobs` at a time.
void run_cells_parallel(const SweepArgs& a, const std::vector<SweepCell>& cells, const std::filesystem::path& dir) {
  const std::string exe = std::filesystem::read_symlink("/proc/self/exe").string();
  std::ostringstream budgets;
  for (std::size_t i = 0; i < a.budgets.size(); ++i) budgets << (i ? "," : "") << a.budgets[i];
  std::ostringstream variants;
  for (std::size_t i = 0; i < a.variants.size(); ++i) variants << (i ? "," : "") << a.variants[i];

  std::map<pid_t, std::size_t> running;
  std::size_t next = 0;
  bool failed = false;
  auto wait_one = [&] {
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) throw TrainingError("waitpid failed while running sweep workers");
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) failed = true;
    running.erase(pid);
  };
  while (next < cells.size() || !running.empty()) {
    if (next < cells.size() && !failed && static_cast<int>(running.size()) < a.jobs) {
      std::vector<std::string> args = {exe,        "sweep",          "--config",          (dir / "config.cfg").string(),
                                       "--budgets", budgets.str(),    "--variants",        variants.str(),
                                       "--folds",   std::to_string(a.folds), "--cell", std::to_string(next),
                                       "--out",     dir.string()};
      std::vector<char*> argv;
      for (auto& s : args) argv.push_back(s.data());
      argv.push_back(nullptr);
      pid_t pid = 0;
      if (posix_spawn(&pid, exe.c_str(), nullptr, nullptr, argv.data(), environ) != 0) {
        throw TrainingError("cannot spawn sweep worker");
      }
      running[pid] = next++;
    } else {
      if (running.empty()) break;
      wait_one();
    }
  }
  if (failed) throw TrainingError("a sweep worker failed; see its output above");
}

int cmd_sweep(const SweepArgs& a) {
  if (a.jobs < 1) throw ArgumentError("--jobs must be at least 1");
  SweepSpec spec;
  spec.base = resolve_config(a.config);
  spec.budgets = a.budgets;
  spec.folds = a.folds;
  spec.variants.clear();
  for (const auto& v : a.variants) spec.variants.push_back(variant_from_string(v));
  const auto dataset = load_data(spec.base);
  spec.dataset_tag = dataset_tag(spec.base);
  const auto cells = sweep_cells(spec);
  const auto dir = prepare_out(a.out, "sweep");

  if (a.cell >= 0) {
    if (a.cell >= static_cast<int>(cells.size())) throw ArgumentError("--cell index out of range");
    run_cell(dataset, spec, cells[static_cast<std::size_t>(a.cell)], dir);
    return 0;
  }

  check_sweep_feasible(dataset, spec);
  write_snapshot(dir, spec.base);
  if (a.jobs == 1) {
    for (const auto& cell : cells) run_cell(dataset, spec, cell, dir);
  } else {
    run_cells_parallel(a, cells, dir);
  }

  std::vector<MetricRecord> records;
  for (const auto& cell : cells) {
    std::ifstream in(cell_csv(dir, cell));
    if (!in) throw IoError("missing sweep cell result " + cell_csv(dir, cell).string());
    for (auto& r : read_records_csv(in)) records.push_back(std::move(r));
  }
  write_records(dir / "sweep_records.csv", records);
  std::ostringstream summary;
  write_summary_csv(summary, records);
  write_text(dir / "summary.csv", summary.str());
  std::cout << summary.str();
  return 0;
}

// --- arith -----------------------------------------------------------------

struct ArithArgs {
  std::string checkpoint;
  std::string job_file;
  std::string data;
  std::string out;
};

int cmd_arith(const ArithArgs& a) {
  auto params = load_any_params(a.checkpoint);
  const auto file = read_job_file(a.job_file);
  const auto samples = load_dataset(a.data);
  const auto jobs = make_jobs(file, samples);
  const auto dir = prepare_out(a.out, "arith");
  write_snapshot(dir,
                 KeyValues{{"checkpoint", a.checkpoint}, {"jobs", a.job_file}, {"data", a.data}, {"tag", file.tag}},
                 0);
  const auto path = dir / file.output;
  const auto layout = emit_figure(params, jobs, path, file.tag);
  std::cout << "wrote " << layout.rows << "x" << layout.columns << " figure to " << path.string() << '\n';
  return 0;
}

}  // namespace

std::filesystem::path default_output_dir(const std::string& subcommand) {
  const char* root = std::getenv(kOutputRootEnv);
  return std::filesystem::path(root != nullptr && *root != '\0' ? root : "runs") / subcommand;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Semi-supervised cardiac segmentation via spatial/non-spatial decomposition"};
  app.require_subcommand(1);

  PhantomArgs phantom;
  auto* ph = app.add_subcommand("phantom", "generate a synthetic ring-phantom dataset");
  ph->add_option("--n", phantom.n, "number of slices")->check(CLI::PositiveNumber);
  ph->add_option("--seed", phantom.seed, "generator seed");
  ph->add_option("--size", phantom.size, "image edge length (multiple of 16)");
  ph->add_option("--slices-per-subject", phantom.slices_per_subject, "slices per synthetic subject");
  ph->add_option("--out", phantom.out, "output directory");

  PreprocessArgs pre;
  auto* pp = app.add_subcommand("preprocess", "convert NIfTI image/label volume pairs into a slice dataset");
  pp->add_option("--input", pre.input, "directory searched for *_gt.nii[.gz] labels and their images")->required();
  pp->add_option("--label", pre.label, "label value marking myocardium");
  pp->add_option("--size", pre.size, "output edge length (multiple of 16)");
  pp->add_option("--tag", pre.tag, "dataset tag stored in the manifest");
  pp->add_option("--out", pre.out, "output directory");

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "train one model variant");
  add_config_options(tr, train.config);
  tr->add_option("--resume", train.resume_from, "continue from a training-state checkpoint");
  tr->add_option("--out", train.out, "output directory");

  EvaluateArgs eval;
  auto* ev = app.add_subcommand("evaluate", "compute test Dice for a checkpoint");
  add_config_options(ev, eval.config);
  ev->add_option("--checkpoint", eval.checkpoint, "parameter or training-state checkpoint")->required();
  ev->add_option("--out", eval.out, "output directory");

  SweepArgs sweep;
  auto* sw = app.add_subcommand("sweep", "label-budget sweep over variants and folds");
  add_config_options(sw, sweep.config);
  sw->add_option("--budgets", sweep.budgets, "labelled-image budgets")->delimiter(',')->required();
  sw->add_option("--variants", sweep.variants, "subset of unet,gan,sdnet")->delimiter(',');
  sw->add_option("--folds", sweep.folds, "cross-validation folds")->check(CLI::PositiveNumber);
  sw->add_option("--jobs", sweep.jobs, "parallel worker processes");
  sw->add_option("--cell", sweep.cell, "run a single cell (worker mode)")->group("");
  sw->add_option("--out", sweep.out, "output directory");

  ArithArgs arith;
  auto* ar = app.add_subcommand("arith", "latent-space recombination figure");
  ar->add_option("--checkpoint", arith.checkpoint, "trained parameters")->required();
  ar->add_option("--jobs-file", arith.job_file, "JSON job file")->required();
  ar->add_option("--data", arith.data, "dataset directory holding the referenced samples")->required();
  ar->add_option("--out", arith.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (ph->parsed()) return cmd_phantom(phantom);
    if (pp->parsed()) return cmd_preprocess(pre);
    if (tr->parsed()) return cmd_train(train);
    if (ev->parsed()) return cmd_evaluate(eval);
    if (sw->parsed()) return cmd_sweep(sweep);
    if (ar->parsed()) return cmd_arith(arith);
  } catch (const Error& e) {
    std::cerr << "error [" << e.category() << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error [io]: " << e.what() << '\n';
    return 1;
  } catch (const c10::Error& e) {
    std::cerr << "error [tensor]: " << e.what_without_backtrace() << '\n';
    return 1;
  }
  return 2;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace sdnet::cli
