#pragma once

#include <cstdint>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <torch/torch.h>

#include "sdnet/grid.hpp"
#include "sdnet/networks.hpp"
#include "sdnet/phantom.hpp"
#include "sdnet/trainer.hpp"

namespace sdnet::testing {

/// Small enough for fast unit tests, deep enough to exercise every level.
inline ArchDescriptor tiny_arch(std::int64_t size = 32) {
  ArchDescriptor a;
  a.image_size = size;
  a.levels = 4;
  a.base_width = 4;
  a.z_dim = 16;
  a.recon_width = 8;
  a.res_blocks = 3;
  a.disc_width = 4;
  a.disc_layers = 4;
  return a;
}

/// Phantom geometry scaled down to 32x32 images.
inline PhantomSpec small_phantom_spec(std::uint64_t seed = 0) {
  PhantomSpec spec;
  spec.image_size = 32;
  spec.ring_center_range = {-3.0, 3.0};
  spec.ring_radius_range = {6.0, 9.0};
  spec.ring_thickness_range = {2.0, 3.0};
  spec.distractor_radius_range = {2.0, 3.5};
  spec.seed = seed;
  return spec;
}

/// Training config for tiny_arch() on small_phantom_spec() data.
inline TrainConfig tiny_config(ModelVariant variant = ModelVariant::kSdnet) {
  TrainConfig c;
  c.variant = variant;
  c.arch = tiny_arch();
  c.n_labelled = 8;
  c.n_unlabelled = 16;
  c.batch_size = 4;
  c.epochs = 1;
  c.optimizer.lr = 1e-3;
  c.seed = 5;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("sdnet_" + name + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline Grid random_grid(std::mt19937_64& rng, std::int64_t h, std::int64_t w, float lo, float hi) {
  std::uniform_real_distribution<float> u(lo, hi);
  Grid g(h, w);
  for (float& v : g.data) v = u(rng);
  return g;
}

inline Grid random_binary_grid(std::mt19937_64& rng, std::int64_t h, std::int64_t w, double p) {
  std::bernoulli_distribution b(p);
  Grid g(h, w);
  for (float& v : g.data) v = b(rng) ? 1.0f : 0.0f;
  return g;
}

inline std::string file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Worst central-difference mismatch of `f` (scalar-valued, float64) at `x`
/// over `coords` random coordinates plus one random direction. The error of
/// one comparison is |a - n| / max(|a|, |n|, floor).
inline double gradient_check(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x0,
                             int coords, std::mt19937_64& rng, double h = 1e-6, double floor = 1e-6) {
  auto x = x0.detach().clone().requires_grad_(true);
  f(x).backward();
  const auto analytic = x.grad().detach().clone();
  torch::NoGradGuard no_grad;
  auto value = [&](const torch::Tensor& v) { return f(v).item<double>(); };
  auto rel = [&](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}); };

  double worst = 0.0;
  auto flat = x0.detach().reshape({-1});
  std::uniform_int_distribution<std::int64_t> pick(0, flat.numel() - 1);
  for (int k = 0; k < coords; ++k) {
    const auto i = pick(rng);
    auto plus = flat.clone();
    auto minus = flat.clone();
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (value(plus.view(x0.sizes())) - value(minus.view(x0.sizes()))) / (2 * h);
    worst = std::max(worst, rel(analytic.reshape({-1})[i].item<double>(), numeric));
  }
  std::normal_distribution<double> normal;
  auto dir = torch::empty(x0.sizes(), torch::kFloat64);
  auto* d = dir.data_ptr<double>();
  for (std::int64_t i = 0; i < dir.numel(); ++i) d[i] = normal(rng);
  const double directional = (analytic * dir).sum().item<double>();
  const double numeric = (value(x0 + h * dir) - value(x0 - h * dir)) / (2 * h);
  return std::max(worst, rel(directional, numeric));
}

/// Uniform float64 tensor in [lo, hi) drawn from `rng`.
inline torch::Tensor random_tensor(std::mt19937_64& rng, std::vector<std::int64_t> shape, double lo, double hi) {
  auto t = torch::empty(shape, torch::kFloat64);
  std::uniform_real_distribution<double> u(lo, hi);
  auto* p = t.data_ptr<double>();
  for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = u(rng);
  return t;
}

}  // namespace sdnet::testing
