#include <gtest/gtest.h>

#include "sdnet/networks.hpp"
#include "sdnet/objectives.hpp"
#include "test_support.hpp"

using namespace sdnet;
using sdnet::testing::gradient_check;
using sdnet::testing::random_grid;
using sdnet::testing::random_tensor;
using sdnet::testing::TempDir;
using sdnet::testing::tiny_arch;

TEST(Decompose, FullSizeShapesAndRanges) {
  auto params = init_params(ArchDescriptor{}, 0);
  std::mt19937_64 rng(1);
  const ImageSlice x{random_grid(rng, 224, 224, -1, 1), 1.37};
  const auto d = decompose(params, x);
  EXPECT_EQ(d.mask.pixels.height, 224);
  EXPECT_EQ(d.mask.pixels.width, 224);
  ASSERT_EQ(d.z.values.size(), 16u);
  for (float v : d.mask.pixels.data) {
    ASSERT_GT(v, 0.0f);
    ASSERT_LT(v, 1.0f);
  }
  for (float v : d.z.values) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Decompose, InvariantsOverRandomInputs) {
  auto params = init_params(tiny_arch(), 3);
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const ImageSlice x{random_grid(rng, 32, 32, -1, 1), 1.37};
    const auto d = decompose(params, x);
    ASSERT_TRUE(d.mask.pixels.same_shape(x.pixels));
    ASSERT_EQ(d.z.values.size(), 16u);
    for (float v : d.mask.pixels.data) {
      ASSERT_GT(v, 0.0f);
      ASSERT_LT(v, 1.0f);
    }
    for (float v : d.z.values) {
      ASSERT_GT(v, 0.0f);
      ASSERT_LT(v, 1.0f);
    }
  }
}

TEST(Decompose, DeterministicInInferenceAndInputSensitive) {
  auto params = init_params(tiny_arch(), 4);
  std::mt19937_64 rng(3);
  const ImageSlice a{random_grid(rng, 32, 32, -1, 1), 1.0};
  const ImageSlice b{random_grid(rng, 32, 32, -1, 1), 1.0};
  const auto da = decompose(params, a);
  const auto da2 = decompose(params, a);
  EXPECT_EQ(da.mask.pixels, da2.mask.pixels);
  EXPECT_EQ(da.z, da2.z);
  EXPECT_NE(da.z, decompose(params, b).z);
  EXPECT_TRUE(params.decomposer->is_training());
}

TEST(Decompose, WrongSizeIsShapeError) {
  auto params = init_params(tiny_arch(), 0);
  EXPECT_THROW(decompose(params, ImageSlice{Grid(48, 48), 1.0}), ShapeError);
  EXPECT_THROW(params.decomposer->forward(torch::zeros({1, 2, 32, 32})), ShapeError);
  EXPECT_THROW(reconstruct(params, MaskMap{Grid(16, 16), true}, LatentCode{std::vector<float>(16, 0.5f)}),
               ShapeError);
  EXPECT_THROW(reconstruct(params, MaskMap{Grid(32, 32), true}, LatentCode{std::vector<float>(8, 0.5f)}),
               ShapeError);
  EXPECT_THROW(discriminate_image(params, ImageSlice{Grid(31, 32), 1.0}), ShapeError);
}

TEST(Decompose, MaskGradientMatchesFiniteDifferences) {
  auto params = init_params(tiny_arch(), 5);
  params.to(torch::kFloat64);
  std::mt19937_64 rng(4);
  const auto x = random_tensor(rng, {2, 1, 32, 32}, -1, 1);
  // One mask pixel as a function of the first encoder convolution's weights.
  auto weight = params.decomposer->named_parameters()["encoders.0.body.0.weight"];
  const auto w0 = weight.detach().clone();
  auto pixel = [&](const torch::Tensor& w) {
    torch::NoGradGuard guard;
    weight.copy_(w);
    return params.decomposer->segment(x)[0][0][10][12].item<double>();
  };
  auto analytic_of = [&] {
    params.decomposer->zero_grad();
    {
      torch::NoGradGuard guard;
      weight.copy_(w0);
    }
    auto out = params.decomposer->segment(x)[0][0][10][12];
    out.backward();
    return weight.grad().detach().clone();
  };
  const auto grad = analytic_of();
  const double h = 1e-6;
  auto flat = w0.reshape({-1});
  std::uniform_int_distribution<std::int64_t> pick(0, flat.numel() - 1);
  for (int k = 0; k < 10; ++k) {
    const auto i = pick(rng);
    auto plus = flat.clone();
    auto minus = flat.clone();
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (pixel(plus.view(w0.sizes())) - pixel(minus.view(w0.sizes()))) / (2 * h);
    const double a = grad.reshape({-1})[i].item<double>();
    EXPECT_LE(std::abs(a - numeric), 1e-3 * std::max({std::abs(a), std::abs(numeric), 1e-6})) << "coordinate " << i;
  }
  torch::NoGradGuard guard;
  weight.copy_(w0);
}

TEST(BinarizeSt, ForwardThreshold) {
  const auto m = torch::tensor({0.7, 0.3, 0.5, 0.49999, 0.0, 1.0});
  const auto b = binarize_st(m);
  const std::vector<double> expected{1, 0, 1, 0, 0, 1};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(b[static_cast<std::int64_t>(i)].item<double>(), expected[i]);
  EXPECT_EQ(binarize_st(torch::full({1, 1, 8, 8}, 0.49)).sum().item<double>(), 0.0);
}

TEST(BinarizeSt, IdempotentAndIdentityBackward) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    auto m = random_tensor(rng, {2, 1, 8, 8}, 0, 1).requires_grad_(true);
    const auto b = binarize_st(m);
    EXPECT_TRUE(torch::equal(binarize_st(b.detach()), b.detach()));
    const auto upstream = random_tensor(rng, {2, 1, 8, 8}, -3, 3);
    b.backward(upstream);
    EXPECT_TRUE(torch::equal(m.grad(), upstream));
  }
}

TEST(Reconstruct, RangeShapeAndDeterminism) {
  auto params = init_params(tiny_arch(), 6);
  std::mt19937_64 rng(6);
  const MaskMap m{sdnet::testing::random_binary_grid(rng, 32, 32, 0.3), true};
  LatentCode z;
  for (int i = 0; i < 16; ++i) z.values.push_back(static_cast<float>(i) / 16.0f);
  const auto a = reconstruct(params, m, z);
  EXPECT_TRUE(a.pixels.same_shape(m.pixels));
  for (float v : a.pixels.data) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(a.pixels, reconstruct(params, m, z).pixels);

  // Extreme inputs still map into [-1, 1].
  params.train(true);
  const auto wild = params.reconstructor->forward(torch::ones({2, 1, 32, 32}) * 50, torch::full({2, 16}, -80.0));
  EXPECT_LE(wild.abs().max().item<double>(), 1.0);
}

TEST(Reconstruct, EveryLatentComponentMatters) {
  auto params = init_params(tiny_arch(), 7);
  params.to(torch::kFloat64);
  InferenceScope scope(params);
  std::mt19937_64 rng(7);
  const auto mask = (random_tensor(rng, {1, 1, 32, 32}, 0, 1) > 0.5).to(torch::kFloat64);
  const auto z = random_tensor(rng, {1, 16}, 0.1, 0.9);
  const auto base = params.reconstructor->forward(mask, z);
  for (std::int64_t k = 0; k < 16; ++k) {
    auto zp = z.clone();
    zp[0][k] += 1e-4;
    const auto diff = (params.reconstructor->forward(mask, zp) - base).abs().max().item<double>();
    EXPECT_GT(diff, 0.0) << "z component " << k << " has no effect";
  }
}

// Far from the border and with an empty mask, a constant z broadcast gives the
// convolutions nothing position-dependent to work with; the dense projection does.
TEST(Reconstruct, ProjectedLatentHasSpatialLayout) {
  std::mt19937_64 rng(8);
  const auto empty = torch::zeros({1, 1, 32, 32}, torch::kFloat64);
  const auto z = random_tensor(rng, {1, 16}, 0.1, 0.9);
  for (std::int64_t grid : {0, 8}) {
    auto arch = tiny_arch();
    arch.z_grid = grid;
    auto params = init_params(arch, 8);
    params.to(torch::kFloat64);
    InferenceScope scope(params);
    const auto out = params.reconstructor->forward(empty, z);
    const double a = out[0][0][12][12].item<double>();
    const double b = out[0][0][19][19].item<double>();
    if (grid == 0) {
      EXPECT_EQ(a, b);
    } else {
      EXPECT_NE(a, b);
    }
    bool has_map = false;
    for (const auto& item : params.reconstructor->named_parameters()) has_map |= item.key().rfind("z_map", 0) == 0;
    EXPECT_EQ(has_map, grid > 0);
  }
}

TEST(Discriminators, FiniteScoresAndInputGradients) {
  auto params = init_params(tiny_arch(), 8);
  std::mt19937_64 rng(8);
  const ImageSlice x{random_grid(rng, 32, 32, -1, 1), 1.0};
  const double s = discriminate_image(params, x);
  EXPECT_TRUE(std::isfinite(s));
  EXPECT_EQ(s, discriminate_image(params, x));
  EXPECT_TRUE(std::isfinite(discriminate_mask(params, MaskMap{Grid(32, 32), true})));

  params.to(torch::kFloat64);
  for (auto* d : {&params.image_discriminator, &params.mask_discriminator}) {
    auto f = [&](const torch::Tensor& v) { return (*d)->forward(v).sum(); };
    EXPECT_LT(gradient_check(f, random_tensor(rng, {2, 1, 32, 32}, -1, 1), 10, rng), 1e-3);
  }
}

TEST(Params, SeedDeterminismAndRoundTrip) {
  TempDir dir("params");
  const auto a = init_params(tiny_arch(), 11);
  const auto b = init_params(tiny_arch(), 11);
  const auto c = init_params(tiny_arch(), 12);
  const auto sa = a.named_state();
  const auto sb = b.named_state();
  const auto sc = c.named_state();
  ASSERT_EQ(sa.size(), sb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_TRUE(torch::equal(sa[i].second, sb[i].second)) << sa[i].first;
    any_diff = any_diff || !torch::equal(sa[i].second, sc[i].second);
  }
  EXPECT_TRUE(any_diff);

  auto trained = init_params(tiny_arch(), 13);
  {
    // Move BatchNorm running statistics away from their initial values.
    torch::NoGradGuard guard;
    trained.decomposer->forward(torch::randn({2, 1, 32, 32}));
  }
  save_params(trained, dir / "p.ckpt", 42);
  auto loaded = load_params(dir / "p.ckpt", tiny_arch());
  const auto st = trained.named_state();
  const auto sl = loaded.named_state();
  for (std::size_t i = 0; i < st.size(); ++i) EXPECT_TRUE(torch::equal(st[i].second, sl[i].second)) << st[i].first;
  std::mt19937_64 rng(9);
  const ImageSlice x{random_grid(rng, 32, 32, -1, 1), 1.0};
  const auto da = decompose(trained, x);
  const auto dl = decompose(loaded, x);
  EXPECT_EQ(da.mask.pixels, dl.mask.pixels);
  EXPECT_EQ(da.z, dl.z);
  EXPECT_EQ(reconstruct(trained, binarize(da.mask), da.z).pixels, reconstruct(loaded, binarize(dl.mask), dl.z).pixels);

  auto other = tiny_arch();
  other.base_width = 8;
  EXPECT_THROW(load_params(dir / "p.ckpt", other), CheckpointError);
  EXPECT_THROW(load_params(dir / "absent.ckpt"), CheckpointError);
}

TEST(Params, CloneIsIndependent) {
  auto a = init_params(tiny_arch(), 14);
  auto b = a.clone();
  {
    torch::NoGradGuard guard;
    b.decomposer->parameters().front().add_(1.0);
  }
  EXPECT_FALSE(torch::equal(a.decomposer->parameters().front(), b.decomposer->parameters().front()));
}

TEST(EndToEnd, EveryDecomposerParameterGetsGradient) {
  auto params = init_params(tiny_arch(), 15);
  std::mt19937_64 rng(10);
  const auto x = random_tensor(rng, {4, 1, 32, 32}, -1, 1).to(torch::kFloat32);
  const auto d = params.decomposer->forward(x);
  const auto rec = params.reconstructor->forward(binarize_st(d.mask), d.z);
  loss_rec(x, rec).backward();
  for (const auto& item : params.decomposer->named_parameters()) {
    ASSERT_TRUE(item.value().grad().defined()) << item.key();
    EXPECT_GT(item.value().grad().abs().max().item<double>(), 0.0) << item.key();
  }
}

TEST(Arch, Validation) {
  auto a = tiny_arch();
  a.image_size = 40;
  EXPECT_THROW(a.validate(), ArgumentError);
  a = tiny_arch();
  a.z_dim = 0;
  EXPECT_THROW(init_params(a, 0), ArgumentError);
  a = tiny_arch();
  a.z_grid = -1;
  EXPECT_THROW(a.validate(), ArgumentError);
  a = tiny_arch();
  a.z_grid = 0;
  nlohmann::json j = a;
  EXPECT_EQ(j.get<ArchDescriptor>(), a);
}
