#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sdnet/data_pipeline.hpp"
#include "sdnet/networks.hpp"
#include "sdnet/objectives.hpp"

namespace sdnet {

enum class ModelVariant { kSdnet, kUnet, kGan };

std::string to_string(ModelVariant v);
ModelVariant variant_from_string(const std::string& name);

struct OptimizerSettings {
  std::string method = "adam";
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;

  friend bool operator==(const OptimizerSettings&, const OptimizerSettings&) = default;
};

struct TrainConfig {
  ModelVariant variant = ModelVariant::kSdnet;
  std::int64_t n_labelled = 100;
  std::int64_t n_unlabelled = 500;
  std::int64_t batch_size = 8;
  std::int64_t epochs = 100;
  /// When positive, replaces `epochs` by the number of whole epochs needed to
  /// run at least this many labelled steps.
  std::int64_t labelled_steps = 0;
  /// Upper bound on unlabelled steps per labelled step.
  std::int64_t max_interleave = 10;
  OptimizerSettings optimizer;
  LossWeights weights;
  std::uint64_t seed = 0;
  /// Epochs between checkpoints; 0 writes only the final state.
  std::int64_t checkpoint_every = 0;
  /// Skip discriminator updates (their losses are still reported).
  bool freeze_discriminators = false;
  ArchDescriptor arch;
  std::string data_dir;
  std::int64_t fold = 0;
  std::int64_t folds = 3;
  std::uint64_t split_seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Unlabelled steps that follow each labelled step:
/// max(1, round(n_unlabelled / n_labelled)) capped at `cap`, 0 without unlabelled data.
std::int64_t interleave_ratio(std::int64_t n_labelled, std::int64_t n_unlabelled, std::int64_t cap = 10);

/// Materialised inputs of one training run.
struct TrainingData {
  std::vector<LabelledSample> labelled;
  std::vector<UnlabelledSample> unlabelled;
  std::vector<MaskMap> mask_pool;
  std::vector<LabelledSample> validation;
  std::vector<LabelledSample> test;
  SplitSpec split;
  LabelBudget budget;
};

/// Splits `dataset` by subject for `config.fold`, draws the label budget from
/// the training subjects and gathers the validation and test slices.
TrainingData make_training_data(const std::vector<LabelledSample>& dataset, const TrainConfig& config);

/// Everything a run mutates. Owned by exactly one training loop.
struct TrainState {
  TrainConfig config;
  NetworkParams params;
  std::unique_ptr<torch::optim::Adam> generator_opt;
  std::unique_ptr<torch::optim::Adam> image_disc_opt;
  std::unique_ptr<torch::optim::Adam> mask_disc_opt;
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double best_validation_dice = -1.0;
  std::int64_t best_epoch = -1;
  NamedTensors best_snapshot;
  std::mt19937_64 rng;

  /// Networks holding the best-validation snapshot (current ones if none yet).
  NetworkParams best_params() const;
};

TrainState make_train_state(const TrainConfig& config);

/// One generator update then one update for each discriminator. Masks in
/// `pool_masks` are unpaired real masks for D_M. Images/masks are [B,1,H,W].
LossReport train_step_labelled(TrainState& state, const torch::Tensor& images, const torch::Tensor& masks,
                               const torch::Tensor& pool_masks);
/// Same without L_M and L_I (sdnet) or without the Dice term (gan). Not
/// available for the supervised U-Net.
LossReport train_step_unlabelled(TrainState& state, const torch::Tensor& images, const torch::Tensor& pool_masks);

/// Draws `n` masks (with replacement) from the pool using the state's RNG.
torch::Tensor sample_pool_masks(TrainState& state, const std::vector<MaskMap>& pool, std::int64_t n);

struct EpochReport {
  std::int64_t epoch = 0;
  std::int64_t labelled_steps = 0;
  std::int64_t unlabelled_steps = 0;
  double mean_composite = 0.0;
  double validation_dice = 0.0;
};

using StepCallback = std::function<void(const LossReport&)>;

/// One pass over the labelled set: each labelled batch is followed by
/// `interleave_ratio` unlabelled batches (none for the U-Net). Validation Dice
/// is computed at the end and the best snapshot updated.
EpochReport train_epoch(TrainState& state, const TrainingData& data, const StepCallback& on_step = {});

/// Sink for run artifacts; an empty `out_dir` disables file output.
struct RunOutputs {
  std::filesystem::path out_dir;
  StepCallback on_step;
};

/// Trains until the configured number of epochs, writing `losses.csv`,
/// `validation.csv` and checkpoints under `out_dir`. Resumes from
/// `state.epoch` when given a restored state.
void run_training(TrainState& state, const TrainingData& data, const RunOutputs& outputs = {});

TrainState train_sdnet(const TrainConfig& config, const TrainingData& data, const RunOutputs& outputs = {});
/// Supervised U-Net (decomposer trunk and mask head) with the Dice loss only.
TrainState train_baseline_unet(const TrainConfig& config, const TrainingData& data, const RunOutputs& outputs = {});
/// Dice on labelled batches plus the mask-adversarial generator loss on all
/// batches, against D_M.
TrainState train_baseline_gan(const TrainConfig& config, const TrainingData& data, const RunOutputs& outputs = {});

/// Round-trips step counter, epoch, parameters, optimizer moments, RNG state
/// and best snapshot. Raises CheckpointError on version mismatch or corruption.
void checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState resume(const std::filesystem::path& path);

/// Number of epochs `run_training` will execute for this config and data.
std::int64_t planned_epochs(const TrainConfig& config, std::int64_t n_labelled);

}  // namespace sdnet
