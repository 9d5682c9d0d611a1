#include "sdnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "sdnet/config.hpp"
#include "sdnet/evaluation.hpp"

namespace sdnet {
namespace {

constexpr int kTrainStateVersion = 1;

std::unique_ptr<torch::optim::Adam> make_adam(const std::vector<torch::Tensor>& params, const OptimizerSettings& o) {
  return std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(o.lr).betas(std::make_tuple(o.beta1, o.beta2)));
}

/// Stops gradients from reaching the discriminators during a generator update.
class FrozenDiscriminators {
 public:
  explicit FrozenDiscriminators(NetworkParams& p) {
    for (auto* m : {&p.image_discriminator, &p.mask_discriminator}) {
      for (auto& t : (*m)->parameters()) {
        t.requires_grad_(false);
        frozen_.push_back(t);
      }
    }
  }
  ~FrozenDiscriminators() {
    for (auto& t : frozen_) t.requires_grad_(true);
  }
  FrozenDiscriminators(const FrozenDiscriminators&) = delete;
  FrozenDiscriminators& operator=(const FrozenDiscriminators&) = delete;

 private:
  std::vector<torch::Tensor> frozen_;
};

double value_of(const torch::Tensor& t) { return t.detach().item<double>(); }

void require_finite(const LossReport& r) {
  if (!r.valid()) {
    std::ostringstream row;
    write_csv_row(row, r);
    throw TrainingError("non-finite loss at step " + std::to_string(r.step) + "; report: " + kLossCsvHeader + " / " +
                        row.str());
  }
}

torch::Tensor update_disc(torch::optim::Adam& opt, Discriminator& d, const torch::Tensor& real,
                          const torch::Tensor& fake, bool frozen) {
  if (frozen) {
    torch::NoGradGuard no_grad;
    return lsgan_disc_loss(d->forward(real), d->forward(fake));
  }
  opt.zero_grad();
  auto loss = lsgan_disc_loss(d->forward(real), d->forward(fake.detach()));
  loss.backward();
  opt.step();
  return loss.detach();
}

void check_batch(const TrainState& state, const torch::Tensor& images) {
  if (images.size(0) < 1) throw ArgumentError("training batch is empty");
  check_canonical(images, state.params.arch, "training images");
}

torch::Tensor stack_images(const std::vector<const Grid*>& grids) { return stack_grids(grids); }

}  // namespace

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::kSdnet: return "sdnet";
    case ModelVariant::kUnet: return "unet";
    case ModelVariant::kGan: return "gan";
  }
  return "?";
}

ModelVariant variant_from_string(const std::string& name) {
  if (name == "sdnet") return ModelVariant::kSdnet;
  if (name == "unet") return ModelVariant::kUnet;
  if (name == "gan") return ModelVariant::kGan;
  throw ArgumentError("unknown model variant '" + name + "' (expected sdnet, unet or gan)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (labelled_steps < 0) throw ConfigError("labelled_steps must be non-negative");
  if (max_interleave < 1) throw ConfigError("max_interleave must be at least 1");
  if (n_labelled < 0 || n_unlabelled < 0) throw ConfigError("label budget must be non-negative");
  if (optimizer.method != "adam") throw ConfigError("unsupported optimizer '" + optimizer.method + "'");
  if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
  for (double w : {weights.mask_dice, weights.mask_adversarial, weights.reconstruction, weights.image_supervised,
                   weights.image_adversarial}) {
    if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
  try {
    arch.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

std::int64_t interleave_ratio(std::int64_t n_labelled, std::int64_t n_unlabelled, std::int64_t cap) {
  if (n_unlabelled <= 0) return 0;
  if (n_labelled <= 0) return cap;
  const auto ratio = std::llround(static_cast<double>(n_unlabelled) / static_cast<double>(n_labelled));
  return std::clamp<std::int64_t>(ratio, 1, cap);
}

std::int64_t planned_epochs(const TrainConfig& config, std::int64_t n_labelled) {
  if (config.labelled_steps <= 0 || n_labelled <= 0) return config.epochs;
  const std::int64_t per_epoch = (n_labelled + config.batch_size - 1) / config.batch_size;
  return std::max<std::int64_t>(1, (config.labelled_steps + per_epoch - 1) / per_epoch);
}

TrainingData make_training_data(const std::vector<LabelledSample>& dataset, const TrainConfig& config) {
  std::vector<std::string> subjects;
  std::set<std::string> seen;
  for (const auto& s : dataset) {
    if (seen.insert(s.subject_id).second) subjects.push_back(s.subject_id);
  }
  TrainingData data;
  data.split = make_splits(subjects, config.fold, config.folds, config.split_seed);
  const std::set<std::string> train(data.split.train.begin(), data.split.train.end());
  const std::set<std::string> val(data.split.validation.begin(), data.split.validation.end());
  const std::set<std::string> test(data.split.test.begin(), data.split.test.end());

  std::vector<LabelledSample> train_samples;
  for (const auto& s : dataset) {
    if (train.contains(s.subject_id)) train_samples.push_back(s);
    if (val.contains(s.subject_id)) data.validation.push_back(s);
    if (test.contains(s.subject_id)) data.test.push_back(s);
  }
  data.budget = make_label_budget(train_samples, config.n_labelled, config.n_unlabelled, config.seed);

  std::map<std::string, const LabelledSample*> by_id;
  for (const auto& s : train_samples) by_id[s.id] = &s;
  for (const auto& id : data.budget.labelled_ids) data.labelled.push_back(*by_id.at(id));
  for (const auto& id : data.budget.unlabelled_ids) {
    const auto& s = *by_id.at(id);
    data.unlabelled.push_back(UnlabelledSample{s.id, s.subject_id, s.image});
  }
  for (const auto& id : data.budget.mask_pool_ids) data.mask_pool.push_back(by_id.at(id)->mask);
  return data;
}

NetworkParams TrainState::best_params() const {
  auto copy = params.clone();
  if (!best_snapshot.empty()) copy.load_state(best_snapshot);
  return copy;
}

TrainState make_train_state(const TrainConfig& config) {
  config.validate();
  TrainState state;
  state.config = config;
  state.params = init_params(config.arch, config.seed);
  state.params.train(true);
  const auto gen_params = config.variant == ModelVariant::kSdnet ? state.params.generator_parameters()
                                                                 : state.params.decomposer->parameters();
  state.generator_opt = make_adam(gen_params, config.optimizer);
  state.image_disc_opt = make_adam(state.params.image_discriminator->parameters(), config.optimizer);
  state.mask_disc_opt = make_adam(state.params.mask_discriminator->parameters(), config.optimizer);
  state.rng.seed(config.seed ^ 0x5d4e3c2b1a09f8e7ull);
  return state;
}

torch::Tensor sample_pool_masks(TrainState& state, const std::vector<MaskMap>& pool, std::int64_t n) {
  if (pool.empty()) throw ConfigError("the unpaired mask pool is empty");
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<const Grid*> grids;
  grids.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) grids.push_back(&pool[pick(state.rng)].pixels);
  return stack_images(grids);
}

LossReport train_step_labelled(TrainState& state, const torch::Tensor& images, const torch::Tensor& masks,
                               const torch::Tensor& pool_masks) {
  check_batch(state, images);
  auto& p = state.params;
  const auto& w = state.config.weights;
  const auto variant = state.config.variant;
  LossReport r;
  r.step = state.step + 1;
  r.kind = "labelled";

  torch::Tensor fake_image;
  torch::Tensor fake_mask;
  {
    FrozenDiscriminators freeze(p);
    state.generator_opt->zero_grad();
    torch::Tensor total;
    if (variant == ModelVariant::kUnet) {
      const auto soft = p.decomposer->segment(images);
      total = loss_dice(masks, soft);
      r.l_m = value_of(total);
    } else if (variant == ModelVariant::kGan) {
      const auto soft = p.decomposer->segment(images);
      GeneratorTerms<torch::Tensor> t;
      t.mask_dice = loss_dice(masks, soft);
      t.mask_adversarial = lsgan_gen_loss(p.mask_discriminator->forward(soft));
      total = w.mask_dice * *t.mask_dice + w.mask_adversarial * *t.mask_adversarial;
      r.l_m = value_of(*t.mask_dice);
      r.a_m_gen = value_of(*t.mask_adversarial);
      fake_mask = soft.detach();
    } else {
      const auto dec = p.decomposer->forward(images);
      const auto rec = p.reconstructor->forward(binarize_st(dec.mask), dec.z);
      GeneratorTerms<torch::Tensor> t;
      t.mask_dice = loss_dice(masks, dec.mask);
      t.mask_adversarial = lsgan_gen_loss(p.mask_discriminator->forward(dec.mask));
      t.reconstruction = loss_rec(images, rec);
      t.image_supervised = loss_image_supervised(images, masks, dec.z, p.reconstructor);
      t.image_adversarial = lsgan_gen_loss(p.image_discriminator->forward(rec));
      total = composite_labelled(t, w);
      r.l_m = value_of(*t.mask_dice);
      r.a_m_gen = value_of(*t.mask_adversarial);
      r.l_rec = value_of(*t.reconstruction);
      r.l_i = value_of(*t.image_supervised);
      r.a_i_gen = value_of(*t.image_adversarial);
      fake_image = rec.detach();
      fake_mask = dec.mask.detach();
    }
    r.composite = value_of(total);
    require_finite(r);
    total.backward();
    state.generator_opt->step();
  }

  const bool frozen = state.config.freeze_discriminators;
  if (fake_image.defined()) {
    r.d_x_loss = value_of(update_disc(*state.image_disc_opt, p.image_discriminator, images, fake_image, frozen));
  }
  if (fake_mask.defined()) {
    r.d_m_loss = value_of(update_disc(*state.mask_disc_opt, p.mask_discriminator, pool_masks, fake_mask, frozen));
  }
  require_finite(r);
  state.step = r.step;
  return r;
}

LossReport train_step_unlabelled(TrainState& state, const torch::Tensor& images, const torch::Tensor& pool_masks) {
  check_batch(state, images);
  auto& p = state.params;
  const auto& w = state.config.weights;
  const auto variant = state.config.variant;
  if (variant == ModelVariant::kUnet) {
    throw UsageError("the supervised U-Net baseline has no unlabelled step");
  }
  LossReport r;
  r.step = state.step + 1;
  r.kind = "unlabelled";

  torch::Tensor fake_image;
  torch::Tensor fake_mask;
  {
    FrozenDiscriminators freeze(p);
    state.generator_opt->zero_grad();
    torch::Tensor total;
    if (variant == ModelVariant::kGan) {
      const auto soft = p.decomposer->segment(images);
      const auto adv = lsgan_gen_loss(p.mask_discriminator->forward(soft));
      total = w.mask_adversarial * adv;
      r.a_m_gen = value_of(adv);
      fake_mask = soft.detach();
    } else {
      const auto dec = p.decomposer->forward(images);
      const auto rec = p.reconstructor->forward(binarize_st(dec.mask), dec.z);
      GeneratorTerms<torch::Tensor> t;
      t.mask_adversarial = lsgan_gen_loss(p.mask_discriminator->forward(dec.mask));
      t.reconstruction = loss_rec(images, rec);
      t.image_adversarial = lsgan_gen_loss(p.image_discriminator->forward(rec));
      total = composite_unlabelled(t, w);
      r.a_m_gen = value_of(*t.mask_adversarial);
      r.l_rec = value_of(*t.reconstruction);
      r.a_i_gen = value_of(*t.image_adversarial);
      fake_image = rec.detach();
      fake_mask = dec.mask.detach();
    }
    r.composite = value_of(total);
    require_finite(r);
    total.backward();
    state.generator_opt->step();
  }

  const bool frozen = state.config.freeze_discriminators;
  if (fake_image.defined()) {
    r.d_x_loss = value_of(update_disc(*state.image_disc_opt, p.image_discriminator, images, fake_image, frozen));
  }
  r.d_m_loss = value_of(update_disc(*state.mask_disc_opt, p.mask_discriminator, pool_masks, fake_mask, frozen));
  require_finite(r);
  state.step = r.step;
  return r;
}

EpochReport train_epoch(TrainState& state, const TrainingData& data, const StepCallback& on_step) {
  const auto& cfg = state.config;
  if (data.labelled.empty()) {
    throw ConfigError("the labelled set is empty; every model variant needs labelled data");
  }
  const bool uses_pool = cfg.variant != ModelVariant::kUnet;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t k =
      uses_pool ? interleave_ratio(static_cast<std::int64_t>(data.labelled.size()),
                                   static_cast<std::int64_t>(data.unlabelled.size()), cfg.max_interleave)
                : 0;

  std::vector<std::size_t> order(data.labelled.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), state.rng);
  std::vector<std::size_t> u_order(data.unlabelled.size());
  std::iota(u_order.begin(), u_order.end(), 0);
  std::shuffle(u_order.begin(), u_order.end(), state.rng);
  std::size_t u_cursor = 0;

  EpochReport report;
  double composite_sum = 0.0;
  auto emit = [&](const LossReport& r) {
    composite_sum += r.composite;
    if (on_step) on_step(r);
  };

  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    std::vector<const Grid*> images;
    std::vector<const Grid*> masks;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(&data.labelled[order[i]].image.pixels);
      masks.push_back(&data.labelled[order[i]].mask.pixels);
    }
    const auto n = static_cast<std::int64_t>(images.size());
    const auto pool = uses_pool ? sample_pool_masks(state, data.mask_pool, n) : torch::Tensor();
    emit(train_step_labelled(state, stack_images(images), stack_images(masks), pool));
    ++report.labelled_steps;

    for (std::int64_t j = 0; j < k; ++j) {
      std::vector<const Grid*> u_images;
      while (u_images.size() < bs) {
        if (u_cursor == u_order.size()) {
          std::shuffle(u_order.begin(), u_order.end(), state.rng);
          u_cursor = 0;
        }
        u_images.push_back(&data.unlabelled[u_order[u_cursor++]].image.pixels);
      }
      const auto u_pool = sample_pool_masks(state, data.mask_pool, static_cast<std::int64_t>(u_images.size()));
      emit(train_step_unlabelled(state, stack_images(u_images), u_pool));
      ++report.unlabelled_steps;
    }
  }

  state.epoch += 1;
  report.epoch = state.epoch;
  report.mean_composite = composite_sum / static_cast<double>(report.labelled_steps + report.unlabelled_steps);
  report.validation_dice = data.validation.empty() ? 0.0 : evaluate_model(state.params, data.validation).mean_dice;
  if (!data.validation.empty() && report.validation_dice > state.best_validation_dice) {
    state.best_validation_dice = report.validation_dice;
    state.best_epoch = state.epoch;
    state.best_snapshot.clear();
    for (const auto& [name, t] : state.params.named_state()) {
      state.best_snapshot.emplace_back(name, t.detach().clone());
    }
  }
  return report;
}

void run_training(TrainState& state, const TrainingData& data, const RunOutputs& outputs) {
  const auto epochs = planned_epochs(state.config, static_cast<std::int64_t>(data.labelled.size()));
  std::ofstream losses;
  std::ofstream validation;
  if (!outputs.out_dir.empty()) {
    std::filesystem::create_directories(outputs.out_dir);
    const auto loss_path = outputs.out_dir / "losses.csv";
    const auto val_path = outputs.out_dir / "validation.csv";
    const bool fresh = state.step == 0;
    losses.open(loss_path, fresh ? std::ios::trunc : std::ios::app);
    validation.open(val_path, fresh ? std::ios::trunc : std::ios::app);
    if (!losses || !validation) throw IoError("cannot write training logs under " + outputs.out_dir.string());
    if (fresh) {
      losses << kLossCsvHeader << '\n';
      validation << "epoch,labelled_steps,unlabelled_steps,mean_composite,validation_dice\n";
    }
  }
  auto on_step = [&](const LossReport& r) {
    if (losses.is_open()) write_csv_row(losses, r);
    if (outputs.on_step) outputs.on_step(r);
  };

  while (state.epoch < epochs) {
    const auto rep = train_epoch(state, data, on_step);
    if (validation.is_open()) {
      validation << rep.epoch << ',' << rep.labelled_steps << ',' << rep.unlabelled_steps << ','
                 << std::setprecision(9) << rep.mean_composite << ',' << rep.validation_dice << '\n';
      losses.flush();
      validation.flush();
    }
    if (!outputs.out_dir.empty() && state.config.checkpoint_every > 0 &&
        state.epoch % state.config.checkpoint_every == 0) {
      std::ostringstream name;
      name << "checkpoint_epoch" << std::setw(4) << std::setfill('0') << state.epoch << ".ckpt";
      checkpoint(state, outputs.out_dir / name.str());
    }
  }
  if (!outputs.out_dir.empty()) {
    checkpoint(state, outputs.out_dir / "final.ckpt");
    save_params(state.best_params(), outputs.out_dir / "best_params.ckpt", state.step);
  }
}

namespace {
TrainState train_variant(TrainConfig config, ModelVariant variant, const TrainingData& data,
                         const RunOutputs& outputs) {
  config.variant = variant;
  auto state = make_train_state(config);
  run_training(state, data, outputs);
  return state;
}
}  // namespace

TrainState train_sdnet(const TrainConfig& config, const TrainingData& data, const RunOutputs& outputs) {
  return train_variant(config, ModelVariant::kSdnet, data, outputs);
}

TrainState train_baseline_unet(const TrainConfig& config, const TrainingData& data, const RunOutputs& outputs) {
  return train_variant(config, ModelVariant::kUnet, data, outputs);
}

TrainState train_baseline_gan(const TrainConfig& config, const TrainingData& data, const RunOutputs& outputs) {
  return train_variant(config, ModelVariant::kGan, data, outputs);
}

namespace {

void save_optimizer(const std::string& tag, torch::optim::Adam& opt, nlohmann::json& steps, NamedTensors& out) {
  auto& group = opt.param_groups().front();
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < group.params().size(); ++i) {
    const auto& param = group.params()[i];
    const auto it = opt.state().find(param.unsafeGetTensorImpl());
    if (it == opt.state().end()) {
      list.push_back(-1);
      continue;
    }
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    list.push_back(s.step());
    out.emplace_back("opt." + tag + "." + std::to_string(i) + ".exp_avg", s.exp_avg());
    out.emplace_back("opt." + tag + "." + std::to_string(i) + ".exp_avg_sq", s.exp_avg_sq());
  }
  steps[tag] = list;
}

void load_optimizer(const std::string& tag, torch::optim::Adam& opt, const nlohmann::json& steps,
                    const CheckpointContents& contents) {
  auto& group = opt.param_groups().front();
  const auto& list = steps.at(tag);
  if (list.size() != group.params().size()) {
    throw CheckpointError("optimizer '" + tag + "' parameter count mismatch");
  }
  for (std::size_t i = 0; i < group.params().size(); ++i) {
    const auto step = list.at(i).get<std::int64_t>();
    if (step < 0) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(step);
    s->exp_avg(contents.get("opt." + tag + "." + std::to_string(i) + ".exp_avg").clone());
    s->exp_avg_sq(contents.get("opt." + tag + "." + std::to_string(i) + ".exp_avg_sq").clone());
    opt.state()[group.params()[i].unsafeGetTensorImpl()] = std::move(s);
  }
}

}  // namespace

void checkpoint(const TrainState& state, const std::filesystem::path& path) {
  NamedTensors tensors;
  for (const auto& [name, t] : state.params.named_state()) tensors.emplace_back("params." + name, t);
  for (const auto& [name, t] : state.best_snapshot) tensors.emplace_back("best." + name, t);
  nlohmann::json steps;
  save_optimizer("generator", *state.generator_opt, steps, tensors);
  save_optimizer("image_disc", *state.image_disc_opt, steps, tensors);
  save_optimizer("mask_disc", *state.mask_disc_opt, steps, tensors);

  std::ostringstream rng;
  rng << state.rng;
  nlohmann::json config(to_key_values(state.config));
  const nlohmann::json meta{{"kind", "train_state"},
                            {"state_version", kTrainStateVersion},
                            {"arch", state.params.arch},
                            {"config", config},
                            {"step", state.step},
                            {"epoch", state.epoch},
                            {"best_validation_dice", state.best_validation_dice},
                            {"best_epoch", state.best_epoch},
                            {"has_best", !state.best_snapshot.empty()},
                            {"optimizer_steps", steps},
                            {"rng", rng.str()}};
  write_checkpoint(path, meta, tensors);
}

TrainState resume(const std::filesystem::path& path) {
  const auto contents = read_checkpoint(path);
  const auto& meta = contents.meta;
  try {
    if (meta.at("kind") != "train_state") throw CheckpointError("file is not a training-state checkpoint");
    if (meta.at("state_version").get<int>() != kTrainStateVersion) {
      throw CheckpointError("training-state version mismatch");
    }
    const auto config = train_config_from(meta.at("config").get<KeyValues>());
    if (meta.at("arch") != nlohmann::json(config.arch)) {
      throw CheckpointError("checkpoint architecture disagrees with its config");
    }
    auto state = make_train_state(config);
    NamedTensors params;
    for (const auto& [name, _] : state.params.named_state()) params.emplace_back(name, contents.get("params." + name));
    state.params.load_state(params);
    if (meta.at("has_best").get<bool>()) {
      for (const auto& [name, _] : params) state.best_snapshot.emplace_back(name, contents.get("best." + name).clone());
    }
    const auto& steps = meta.at("optimizer_steps");
    load_optimizer("generator", *state.generator_opt, steps, contents);
    load_optimizer("image_disc", *state.image_disc_opt, steps, contents);
    load_optimizer("mask_disc", *state.mask_disc_opt, steps, contents);
    state.step = meta.at("step").get<std::int64_t>();
    state.epoch = meta.at("epoch").get<std::int64_t>();
    state.best_validation_dice = meta.at("best_validation_dice").get<double>();
    state.best_epoch = meta.at("best_epoch").get<std::int64_t>();
    std::istringstream rng(meta.at("rng").get<std::string>());
    rng >> state.rng;
    if (!rng) throw CheckpointError("corrupt RNG state in checkpoint");
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt training-state metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid config in checkpoint: ") + e.what());
  }
}

}  // namespace sdnet
