#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "sdnet/config.hpp"
#include "sdnet/phantom.hpp"
#include "sdnet/trainer.hpp"
#include "test_support.hpp"

using namespace sdnet;
using sdnet::testing::small_phantom_spec;
using sdnet::testing::TempDir;
using sdnet::testing::tiny_config;

namespace {

const std::vector<LabelledSample>& dataset() {
  static const auto data = generate_phantom(small_phantom_spec(1), 100);
  return data;
}

struct Batch {
  torch::Tensor images;
  torch::Tensor masks;
  torch::Tensor pool;
};

Batch batch_from(const TrainingData& data, std::size_t offset, std::size_t n) {
  std::vector<const Grid*> images;
  std::vector<const Grid*> masks;
  std::vector<const Grid*> pool;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = data.labelled[(offset + i) % data.labelled.size()];
    images.push_back(&s.image.pixels);
    masks.push_back(&s.mask.pixels);
    pool.push_back(&data.mask_pool[(offset + i) % data.mask_pool.size()].pixels);
  }
  return {stack_grids(images), stack_grids(masks), stack_grids(pool)};
}

std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

bool unchanged(const torch::nn::Module& m, const std::vector<torch::Tensor>& before) {
  const auto now = m.parameters();
  for (std::size_t i = 0; i < now.size(); ++i) {
    if (!torch::equal(now[i], before[i])) return false;
  }
  return true;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Interleave, RatioExamples) {
  EXPECT_EQ(interleave_ratio(11, 1100), 10);
  EXPECT_EQ(interleave_ratio(284, 284), 1);
  EXPECT_EQ(interleave_ratio(100, 500), 5);
  EXPECT_EQ(interleave_ratio(284, 100), 1);
  EXPECT_EQ(interleave_ratio(10, 0), 0);
  EXPECT_EQ(interleave_ratio(10, 500, 20), 20);
}

TEST(Interleave, PlannedEpochs) {
  auto c = tiny_config();
  c.epochs = 7;
  EXPECT_EQ(planned_epochs(c, 8), 7);
  c.labelled_steps = 10;
  c.batch_size = 4;
  EXPECT_EQ(planned_epochs(c, 8), 5);
  EXPECT_EQ(planned_epochs(c, 9), 4);
}

TEST(TrainingData, SplitsAndBudget) {
  const auto cfg = tiny_config();
  const auto data = make_training_data(dataset(), cfg);
  EXPECT_EQ(data.labelled.size(), 8u);
  EXPECT_EQ(data.unlabelled.size(), 16u);
  EXPECT_FALSE(data.mask_pool.empty());
  EXPECT_FALSE(data.validation.empty());
  EXPECT_FALSE(data.test.empty());
  const std::set<std::string> train(data.split.train.begin(), data.split.train.end());
  for (const auto& s : data.test) EXPECT_FALSE(train.contains(s.subject_id));
  for (const auto& s : data.validation) EXPECT_FALSE(train.contains(s.subject_id));
  for (const auto& s : data.labelled) EXPECT_TRUE(train.contains(s.subject_id));
  for (const auto& s : data.unlabelled) EXPECT_TRUE(train.contains(s.subject_id));
}

TEST(TrainStep, LabelledUpdatesAllFourNetworks) {
  auto state = make_train_state(tiny_config());
  const auto data = make_training_data(dataset(), state.config);
  const auto b = batch_from(data, 0, 4);
  const auto f = snapshot(*state.params.decomposer);
  const auto g = snapshot(*state.params.reconstructor);
  const auto dx = snapshot(*state.params.image_discriminator);
  const auto dm = snapshot(*state.params.mask_discriminator);
  const auto r = train_step_labelled(state, b.images, b.masks, b.pool);
  EXPECT_FALSE(unchanged(*state.params.decomposer, f));
  EXPECT_FALSE(unchanged(*state.params.reconstructor, g));
  EXPECT_FALSE(unchanged(*state.params.image_discriminator, dx));
  EXPECT_FALSE(unchanged(*state.params.mask_discriminator, dm));
  EXPECT_EQ(r.step, 1);
  EXPECT_EQ(state.step, 1);
  EXPECT_EQ(r.kind, "labelled");
  for (const auto& v : {r.l_rec, r.l_m, r.l_i, r.a_i_gen, r.a_m_gen, r.d_x_loss, r.d_m_loss}) {
    ASSERT_TRUE(v.has_value());
    EXPECT_TRUE(std::isfinite(*v));
  }
  EXPECT_TRUE(r.valid());
}

TEST(TrainStep, DeterministicForSameSeed) {
  const auto cfg = tiny_config();
  const auto data = make_training_data(dataset(), cfg);
  auto a = make_train_state(cfg);
  auto b = make_train_state(cfg);
  for (int i = 0; i < 3; ++i) {
    const auto batch = batch_from(data, static_cast<std::size_t>(i) * 4, 4);
    EXPECT_EQ(train_step_labelled(a, batch.images, batch.masks, batch.pool),
              train_step_labelled(b, batch.images, batch.masks, batch.pool));
    EXPECT_EQ(train_step_unlabelled(a, batch.images, batch.pool), train_step_unlabelled(b, batch.images, batch.pool));
  }
}

TEST(TrainStep, UnlabelledReportOmitsSupervisedTerms) {
  auto state = make_train_state(tiny_config());
  const auto data = make_training_data(dataset(), state.config);
  const auto b = batch_from(data, 0, 4);
  const auto r = train_step_unlabelled(state, b.images, b.pool);
  EXPECT_EQ(r.kind, "unlabelled");
  EXPECT_FALSE(r.l_m.has_value());
  EXPECT_FALSE(r.l_i.has_value());
  EXPECT_TRUE(r.l_rec.has_value());
  EXPECT_TRUE(r.a_i_gen.has_value());
  EXPECT_TRUE(r.a_m_gen.has_value());
  const LossWeights w;
  EXPECT_NEAR(r.composite, w.mask_adversarial * *r.a_m_gen + w.reconstruction * *r.l_rec +
                               w.image_adversarial * *r.a_i_gen, 1e-5);
}

TEST(TrainStep, UnlabelledGeneratorIgnoresPoolMasks) {
  const auto cfg = tiny_config();
  const auto data = make_training_data(dataset(), cfg);
  auto a = make_train_state(cfg);
  auto b = make_train_state(cfg);
  const auto batch = batch_from(data, 0, 4);
  const auto other_pool = batch_from(data, 3, 4).pool.flip({2});
  const auto ra = train_step_unlabelled(a, batch.images, batch.pool);
  const auto rb = train_step_unlabelled(b, batch.images, other_pool);
  EXPECT_EQ(ra.l_rec, rb.l_rec);
  EXPECT_EQ(ra.a_i_gen, rb.a_i_gen);
  EXPECT_EQ(ra.a_m_gen, rb.a_m_gen);
  EXPECT_EQ(ra.composite, rb.composite);
  EXPECT_NE(ra.d_m_loss, rb.d_m_loss);
  EXPECT_TRUE(unchanged(*b.params.decomposer, snapshot(*a.params.decomposer)));
  EXPECT_TRUE(unchanged(*b.params.reconstructor, snapshot(*a.params.reconstructor)));
}

TEST(TrainStep, DiscriminatorUpdateLeavesGeneratorUntouched) {
  auto cfg = tiny_config();
  cfg.weights = LossWeights{0, 0, 0, 0, 0};
  auto state = make_train_state(cfg);
  const auto data = make_training_data(dataset(), cfg);
  const auto b = batch_from(data, 0, 4);
  const auto f = snapshot(*state.params.decomposer);
  const auto g = snapshot(*state.params.reconstructor);
  const auto dx = snapshot(*state.params.image_discriminator);
  train_step_labelled(state, b.images, b.masks, b.pool);
  train_step_unlabelled(state, b.images, b.pool);
  EXPECT_TRUE(unchanged(*state.params.decomposer, f));
  EXPECT_TRUE(unchanged(*state.params.reconstructor, g));
  EXPECT_FALSE(unchanged(*state.params.image_discriminator, dx));
}

TEST(TrainStep, GeneratorUpdateLeavesDiscriminatorsUntouched) {
  auto cfg = tiny_config();
  cfg.freeze_discriminators = true;
  auto state = make_train_state(cfg);
  const auto data = make_training_data(dataset(), cfg);
  const auto b = batch_from(data, 0, 4);
  const auto f = snapshot(*state.params.decomposer);
  const auto dx = snapshot(*state.params.image_discriminator);
  const auto dm = snapshot(*state.params.mask_discriminator);
  const auto r = train_step_labelled(state, b.images, b.masks, b.pool);
  EXPECT_FALSE(unchanged(*state.params.decomposer, f));
  EXPECT_TRUE(unchanged(*state.params.image_discriminator, dx));
  EXPECT_TRUE(unchanged(*state.params.mask_discriminator, dm));
  EXPECT_TRUE(r.d_x_loss.has_value());
  EXPECT_TRUE(r.d_m_loss.has_value());
}

TEST(TrainStep, NonFiniteLossIsTrainingError) {
  auto state = make_train_state(tiny_config());
  const auto data = make_training_data(dataset(), state.config);
  auto b = batch_from(data, 0, 4);
  b.images[0][0][3][3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(train_step_labelled(state, b.images, b.masks, b.pool), TrainingError);
}

TEST(TrainStep, RejectsWrongSizeBatch) {
  auto state = make_train_state(tiny_config());
  EXPECT_THROW(train_step_unlabelled(state, torch::zeros({2, 1, 16, 16}), torch::zeros({2, 1, 16, 16})), ShapeError);
}

TEST(Baselines, UnetUsesNoUnlabelledData) {
  auto cfg = tiny_config(ModelVariant::kUnet);
  auto state = make_train_state(cfg);
  const auto data = make_training_data(dataset(), cfg);
  ASSERT_FALSE(data.unlabelled.empty());
  const auto b = batch_from(data, 0, 4);
  const auto r = train_step_labelled(state, b.images, b.masks, torch::Tensor());
  EXPECT_TRUE(r.l_m.has_value());
  EXPECT_FALSE(r.l_rec.has_value());
  EXPECT_FALSE(r.a_m_gen.has_value());
  EXPECT_FALSE(r.d_m_loss.has_value());
  EXPECT_DOUBLE_EQ(r.composite, *r.l_m);
  EXPECT_THROW(train_step_unlabelled(state, b.images, b.pool), UsageError);

  std::vector<LossReport> reports;
  const auto epoch = train_epoch(state, data, [&](const LossReport& x) { reports.push_back(x); });
  EXPECT_EQ(epoch.unlabelled_steps, 0);
  EXPECT_EQ(epoch.labelled_steps, 2);
  for (const auto& x : reports) EXPECT_EQ(x.kind, "labelled");
}

TEST(Baselines, GanReportsDiceAndAdversarialOnly) {
  auto cfg = tiny_config(ModelVariant::kGan);
  auto state = make_train_state(cfg);
  const auto data = make_training_data(dataset(), cfg);
  const auto b = batch_from(data, 0, 4);
  const auto dm = snapshot(*state.params.mask_discriminator);
  const auto r = train_step_labelled(state, b.images, b.masks, b.pool);
  EXPECT_TRUE(r.l_m.has_value());
  EXPECT_TRUE(r.a_m_gen.has_value());
  EXPECT_TRUE(r.d_m_loss.has_value());
  EXPECT_FALSE(r.l_rec.has_value());
  EXPECT_FALSE(r.l_i.has_value());
  EXPECT_FALSE(r.a_i_gen.has_value());
  EXPECT_FALSE(r.d_x_loss.has_value());
  EXPECT_FALSE(unchanged(*state.params.mask_discriminator, dm));
  const auto u = train_step_unlabelled(state, b.images, b.pool);
  EXPECT_FALSE(u.l_m.has_value());
  EXPECT_TRUE(u.a_m_gen.has_value());

  cfg.n_unlabelled = 0;
  auto degenerate = make_train_state(cfg);
  const auto labelled_only = make_training_data(dataset(), cfg);
  const auto epoch = train_epoch(degenerate, labelled_only);
  EXPECT_EQ(epoch.unlabelled_steps, 0);
  EXPECT_EQ(epoch.labelled_steps, 2);
}

TEST(Epoch, InterleavesAndTracksBest) {
  auto cfg = tiny_config();
  auto state = make_train_state(cfg);
  const auto data = make_training_data(dataset(), cfg);
  std::vector<std::string> kinds;
  const auto e1 = train_epoch(state, data, [&](const LossReport& r) { kinds.push_back(r.kind); });
  // 8 labelled at batch 4 -> 2 labelled batches, each followed by k = 2 unlabelled batches.
  const std::vector<std::string> expected{"labelled", "unlabelled", "unlabelled", "labelled", "unlabelled",
                                          "unlabelled"};
  EXPECT_EQ(kinds, expected);
  EXPECT_EQ(e1.epoch, 1);
  EXPECT_EQ(state.step, 6);
  EXPECT_GE(e1.validation_dice, 0.0);
  EXPECT_LE(e1.validation_dice, 1.0);
  EXPECT_EQ(state.best_validation_dice, e1.validation_dice);
  EXPECT_EQ(state.best_epoch, 1);
  double best = state.best_validation_dice;
  for (int i = 0; i < 3; ++i) {
    const auto e = train_epoch(state, data);
    EXPECT_GE(state.best_validation_dice, best);
    best = state.best_validation_dice;
    EXPECT_GE(best, e.validation_dice);
  }
}

TEST(Epoch, EmptyLabelledSetIsConfigError) {
  auto state = make_train_state(tiny_config());
  auto data = make_training_data(dataset(), state.config);
  data.labelled.clear();
  EXPECT_THROW(train_epoch(state, data), ConfigError);
}

TEST(Checkpoint, ResumeReproducesNextTenSteps) {
  TempDir dir("resume");
  auto cfg = tiny_config();
  const auto data = make_training_data(dataset(), cfg);
  auto state = make_train_state(cfg);
  train_epoch(state, data);
  checkpoint(state, dir / "mid.ckpt");

  auto resumed = resume(dir / "mid.ckpt");
  EXPECT_EQ(resumed.step, state.step);
  EXPECT_EQ(resumed.epoch, state.epoch);
  EXPECT_EQ(resumed.best_validation_dice, state.best_validation_dice);
  EXPECT_EQ(resumed.config, state.config);
  for (int i = 0; i < 5; ++i) {
    const auto b = batch_from(data, static_cast<std::size_t>(i), 4);
    const auto pa = sample_pool_masks(state, data.mask_pool, 4);
    const auto pb = sample_pool_masks(resumed, data.mask_pool, 4);
    ASSERT_TRUE(torch::equal(pa, pb));
    EXPECT_EQ(train_step_labelled(state, b.images, b.masks, pa), train_step_labelled(resumed, b.images, b.masks, pb));
    EXPECT_EQ(train_step_unlabelled(state, b.images, pa), train_step_unlabelled(resumed, b.images, pb));
  }
}

TEST(Checkpoint, CorruptOrMismatchedFiles) {
  TempDir dir("corrupt");
  auto state = make_train_state(tiny_config());
  checkpoint(state, dir / "ok.ckpt");
  auto bytes = sdnet::testing::file_bytes(dir / "ok.ckpt");
  std::ofstream(dir / "truncated.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(resume(dir / "truncated.ckpt"), CheckpointError);
  bytes[0] = 'X';
  std::ofstream(dir / "magic.ckpt", std::ios::binary) << bytes;
  EXPECT_THROW(resume(dir / "magic.ckpt"), CheckpointError);
  EXPECT_THROW(resume(dir / "absent.ckpt"), CheckpointError);
  save_params(state.params, dir / "params.ckpt");
  EXPECT_THROW(resume(dir / "params.ckpt"), CheckpointError);
}

TEST(Checkpoint, RunTrainingArtifactsAreReproducible) {
  TempDir dir("artifacts");
  auto cfg = tiny_config();
  cfg.epochs = 2;
  cfg.checkpoint_every = 1;
  const auto data = make_training_data(dataset(), cfg);
  for (const char* name : {"a", "b"}) {
    auto state = make_train_state(cfg);
    run_training(state, data, RunOutputs{dir / name, {}});
  }
  for (const char* file : {"losses.csv", "validation.csv", "final.ckpt", "best_params.ckpt",
                           "checkpoint_epoch0001.ckpt", "checkpoint_epoch0002.ckpt"}) {
    ASSERT_TRUE(std::filesystem::exists(dir / "a" / file)) << file;
    EXPECT_EQ(sdnet::testing::file_bytes(dir / "a" / file), sdnet::testing::file_bytes(dir / "b" / file)) << file;
  }
  const auto losses = read_file(dir / "a" / "losses.csv");
  EXPECT_EQ(std::count(losses.begin(), losses.end(), '\n'), 1 + 2 * 6);

  // Resuming from the epoch-1 checkpoint finishes with identical artifacts.
  std::filesystem::create_directories(dir / "c");
  std::filesystem::copy_file(dir / "a" / "checkpoint_epoch0001.ckpt", dir / "c" / "start.ckpt");
  auto resumed = resume(dir / "c" / "start.ckpt");
  run_training(resumed, data, RunOutputs{dir / "c", {}});
  EXPECT_EQ(sdnet::testing::file_bytes(dir / "a" / "final.ckpt"), sdnet::testing::file_bytes(dir / "c" / "final.ckpt"));
}

TEST(Config, KeyValueRoundTripAndErrors) {
  auto cfg = tiny_config(ModelVariant::kGan);
  cfg.optimizer.lr = 3.3e-4;
  cfg.weights.image_adversarial = 0.7;
  cfg.data_dir = "/data/phantom";
  cfg.freeze_discriminators = true;
  EXPECT_EQ(train_config_from(to_key_values(cfg)), cfg);

  std::istringstream doc("# comment\nvariant = unet\n\noptimizer.lr=0.01\nweights.lambda3 = 2\n");
  auto kv = parse_key_values(doc);
  apply_override(kv, "optimizer.lr=0.02");
  apply_override(kv, "optimizer.lr = 0.03");
  const auto parsed = train_config_from(kv);
  EXPECT_EQ(parsed.variant, ModelVariant::kUnet);
  EXPECT_EQ(parsed.optimizer.lr, 0.03);
  EXPECT_EQ(parsed.weights.reconstruction, 2.0);
  EXPECT_EQ(parsed.batch_size, 8);

  EXPECT_THROW(train_config_from({{"no_such_key", "1"}}), ConfigError);
  EXPECT_THROW(train_config_from({{"batch_size", "eight"}}), ConfigError);
  EXPECT_THROW(train_config_from({{"variant", "resnet"}}), ConfigError);
  std::istringstream bad("batch_size 8\n");
  EXPECT_THROW(parse_key_values(bad), ConfigError);
  EXPECT_THROW(apply_override(kv, "novalue"), ConfigError);
  auto invalid = tiny_config();
  invalid.batch_size = 0;
  EXPECT_THROW(invalid.validate(), ConfigError);
  EXPECT_THROW(make_train_state(invalid), ConfigError);
}
