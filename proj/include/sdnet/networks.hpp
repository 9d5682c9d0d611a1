#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "sdnet/checkpoint.hpp"
#include "sdnet/grid.hpp"

namespace sdnet {

/// Shape of the four networks. Defaults are the full-resolution setup
/// (224 px input, U-Net widths 64/128/256/512); desk-scale runs shrink
/// `image_size` and the widths.
struct ArchDescriptor {
  std::int64_t image_size = 224;
  std::int64_t levels = 4;
  std::int64_t base_width = 64;
  std::int64_t z_dim = 16;
  std::int64_t recon_width = 64;
  std::int64_t res_blocks = 3;
  /// Side of the spatial grid z is projected onto before the reconstructor;
  /// 0 broadcasts z as constant planes instead.
  std::int64_t z_grid = 8;
  std::int64_t disc_width = 64;
  std::int64_t disc_layers = 4;
  double leaky_slope = 0.2;

  void validate() const;
  /// Width of U-Net level `level` (base_width * 2^level).
  std::int64_t width_at(std::int64_t level) const { return base_width << level; }

  friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

void to_json(nlohmann::json& j, const ArchDescriptor& a);
void from_json(const nlohmann::json& j, ArchDescriptor& a);

/// Batched decomposer output: mask [B,1,H,W] in (0,1) and z [B,z_dim] in (0,1).
struct Decomposition {
  torch::Tensor mask;
  torch::Tensor z;
};

/// conv3x3 -> BatchNorm -> LeakyReLU, twice.
class DoubleConvImpl : public torch::nn::Module {
 public:
  DoubleConvImpl(std::int64_t in, std::int64_t out, double slope);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_;
};
TORCH_MODULE(DoubleConv);

/// f: U-Net trunk with a sigmoid mask head plus a z head on the bottleneck.
class DecomposerImpl : public torch::nn::Module {
 public:
  explicit DecomposerImpl(const ArchDescriptor& arch);

  Decomposition forward(const torch::Tensor& x);
  /// Mask head only; the z head is not evaluated.
  torch::Tensor segment(const torch::Tensor& x);

 private:
  torch::Tensor trunk(const torch::Tensor& x, torch::Tensor* bottleneck);

  ArchDescriptor arch_;
  torch::nn::ModuleList encoders_;
  DoubleConv bottleneck_{nullptr};
  torch::nn::ModuleList upsamplers_;
  torch::nn::ModuleList decoders_;
  torch::nn::Conv2d mask_head_{nullptr};
  torch::nn::Sequential z_convs_;
  torch::nn::Linear z_hidden_{nullptr};
  torch::nn::Linear z_out_{nullptr};
};
TORCH_MODULE(Decomposer);

/// Two conv3x3+BatchNorm+LeakyReLU stages with an additive skip.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(std::int64_t width, double slope);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_;
};
TORCH_MODULE(ResidualBlock);

/// g: (binary mask, z) -> image in [-1,1]. z is broadcast over the image and
/// concatenated with the mask channel.
class ReconstructorImpl : public torch::nn::Module {
 public:
  explicit ReconstructorImpl(const ArchDescriptor& arch);
  torch::Tensor forward(const torch::Tensor& mask, const torch::Tensor& z);

 private:
  ArchDescriptor arch_;
  torch::nn::Linear z_map_{nullptr};
  torch::nn::Sequential stem_;
  torch::nn::Sequential blocks_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Reconstructor);

/// Least-squares patch discriminator; returns one unbounded score per sample
/// (mean of the patch score map).
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const ArchDescriptor& arch);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  ArchDescriptor arch_;
  torch::nn::Sequential body_;
};
TORCH_MODULE(Discriminator);

/// Threshold at 0.5 (>= maps to 1) whose backward pass is the identity.
torch::Tensor binarize_st(const torch::Tensor& soft_mask);

/// Parameters of f, g, D_X and D_M together with their architecture.
struct NetworkParams {
  ArchDescriptor arch;
  Decomposer decomposer{nullptr};
  Reconstructor reconstructor{nullptr};
  Discriminator image_discriminator{nullptr};
  Discriminator mask_discriminator{nullptr};

  void train(bool on = true);
  void to(torch::ScalarType dtype);
  /// Parameters and buffers, prefixed by network ("decomposer.", ...).
  NamedTensors named_state() const;
  std::vector<torch::Tensor> generator_parameters() const;
  /// Copies values from `state` into this network set (names must match).
  void load_state(const NamedTensors& state);
  NetworkParams clone() const;
};

NetworkParams init_params(const ArchDescriptor& arch, std::uint64_t seed);
void save_params(const NetworkParams& params, const std::filesystem::path& path, std::int64_t step = 0);
/// Raises CheckpointError when the stored descriptor differs from `expected`.
NetworkParams load_params(const std::filesystem::path& path, const ArchDescriptor& expected);
NetworkParams load_params(const std::filesystem::path& path);

/// Puts the networks in inference mode (running BatchNorm statistics, no
/// autograd) and restores the previous mode on destruction.
class InferenceScope {
 public:
  explicit InferenceScope(NetworkParams& params);
  ~InferenceScope();
  InferenceScope(const InferenceScope&) = delete;
  InferenceScope& operator=(const InferenceScope&) = delete;

 private:
  NetworkParams& params_;
  bool was_training_;
  torch::NoGradGuard no_grad_;
};

// Slice-level entry points, all evaluated in inference mode.

struct LatentCode {
  std::vector<float> values;
  friend bool operator==(const LatentCode&, const LatentCode&) = default;
};

struct SliceDecomposition {
  MaskMap mask;  // soft
  LatentCode z;
};

SliceDecomposition decompose(NetworkParams& params, const ImageSlice& x);
MaskMap binarize(const MaskMap& soft);
ImageSlice reconstruct(NetworkParams& params, const MaskMap& mask, const LatentCode& z);
double discriminate_image(NetworkParams& params, const ImageSlice& x);
double discriminate_mask(NetworkParams& params, const MaskMap& m);

/// Raises ShapeError unless `x` is [B,1,S,S] with S = arch.image_size.
void check_canonical(const torch::Tensor& x, const ArchDescriptor& arch, const char* what);

}  // namespace sdnet
