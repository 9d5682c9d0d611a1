#include "sdnet/networks.hpp"

#include <mutex>

#include "sdnet/errors.hpp"

namespace sdnet {
namespace nn = torch::nn;

namespace {

std::mutex& init_mutex() {
  static std::mutex m;
  return m;
}

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t pad,
                bool bias) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(pad).bias(bias));
}

nn::LeakyReLU leaky(double slope) { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(slope)); }

torch::ScalarType dtype_of(const torch::nn::Module& m) {
  const auto params = m.parameters();
  return params.empty() ? torch::kFloat32 : params.front().scalar_type();
}

struct StraightThroughStep : public torch::autograd::Function<StraightThroughStep> {
  static torch::Tensor forward(torch::autograd::AutogradContext* /*ctx*/, const torch::Tensor& soft) {
    return soft.ge(0.5).to(soft.scalar_type());
  }
  static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* /*ctx*/,
                                               torch::autograd::tensor_list grad_out) {
    return {grad_out[0]};
  }
};

}  // namespace

void ArchDescriptor::validate() const {
  if (levels < 1 || base_width < 1 || z_dim < 1 || recon_width < 1 || res_blocks < 0 || disc_width < 1 ||
      disc_layers < 1 || z_grid < 0) {
    throw ArgumentError("architecture descriptor has non-positive sizes");
  }
  if (image_size <= 0 || image_size % (std::int64_t{1} << levels) != 0) {
    throw ArgumentError("image_size must be divisible by 2^levels");
  }
  if (image_size % (std::int64_t{1} << disc_layers) != 0) {
    throw ArgumentError("image_size must be divisible by 2^disc_layers");
  }
}

void to_json(nlohmann::json& j, const ArchDescriptor& a) {
  j = nlohmann::json{{"image_size", a.image_size},   {"levels", a.levels},
                     {"base_width", a.base_width},   {"z_dim", a.z_dim},
                     {"recon_width", a.recon_width}, {"res_blocks", a.res_blocks},
                     {"z_grid", a.z_grid},           {"disc_width", a.disc_width},
                     {"disc_layers", a.disc_layers}, {"leaky_slope", a.leaky_slope}};
}

void from_json(const nlohmann::json& j, ArchDescriptor& a) {
  a.image_size = j.at("image_size").get<std::int64_t>();
  a.levels = j.at("levels").get<std::int64_t>();
  a.base_width = j.at("base_width").get<std::int64_t>();
  a.z_dim = j.at("z_dim").get<std::int64_t>();
  a.recon_width = j.at("recon_width").get<std::int64_t>();
  a.res_blocks = j.at("res_blocks").get<std::int64_t>();
  a.z_grid = j.at("z_grid").get<std::int64_t>();
  a.disc_width = j.at("disc_width").get<std::int64_t>();
  a.disc_layers = j.at("disc_layers").get<std::int64_t>();
  a.leaky_slope = j.at("leaky_slope").get<double>();
}

void check_canonical(const torch::Tensor& x, const ArchDescriptor& arch, const char* what) {
  if (x.dim() != 4 || x.size(1) != 1 || x.size(2) != arch.image_size || x.size(3) != arch.image_size) {
    throw ShapeError(std::string(what) + " must be [B,1," + std::to_string(arch.image_size) + "," +
                     std::to_string(arch.image_size) + "], got " + c10::str(x.sizes()));
  }
}

DoubleConvImpl::DoubleConvImpl(std::int64_t in, std::int64_t out, double slope) {
  body_ = register_module("body", nn::Sequential(conv(in, out, 3, 1, 1, false), nn::BatchNorm2d(out), leaky(slope),
                                                  conv(out, out, 3, 1, 1, false), nn::BatchNorm2d(out),
                                                  leaky(slope)));
}

torch::Tensor DoubleConvImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

DecomposerImpl::DecomposerImpl(const ArchDescriptor& arch) : arch_(arch) {
  arch_.validate();
  const double slope = arch_.leaky_slope;
  for (std::int64_t l = 0; l < arch_.levels; ++l) {
    encoders_->push_back(DoubleConv(l == 0 ? 1 : arch_.width_at(l - 1), arch_.width_at(l), slope));
  }
  const std::int64_t deepest = arch_.width_at(arch_.levels - 1);
  bottleneck_ = DoubleConv(deepest, deepest, slope);
  std::int64_t incoming = deepest;
  for (std::int64_t l = arch_.levels - 1; l >= 0; --l) {
    upsamplers_->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(incoming, incoming, 2).stride(2)));
    decoders_->push_back(DoubleConv(incoming + arch_.width_at(l), arch_.width_at(l), slope));
    incoming = arch_.width_at(l);
  }
  mask_head_ = conv(arch_.width_at(0), 1, 1, 1, 0, true);
  z_convs_ = nn::Sequential(conv(deepest, deepest, 3, 2, 1, true), leaky(slope), conv(deepest, deepest, 3, 2, 1, true),
                            leaky(slope));
  z_hidden_ = nn::Linear(deepest, deepest);
  z_out_ = nn::Linear(deepest, arch_.z_dim);

  register_module("encoders", encoders_);
  register_module("bottleneck", bottleneck_);
  register_module("upsamplers", upsamplers_);
  register_module("decoders", decoders_);
  register_module("mask_head", mask_head_);
  register_module("z_convs", z_convs_);
  register_module("z_hidden", z_hidden_);
  register_module("z_out", z_out_);
}

torch::Tensor DecomposerImpl::trunk(const torch::Tensor& x, torch::Tensor* bottleneck) {
  check_canonical(x, arch_, "decomposer input");
  std::vector<torch::Tensor> skips;
  skips.reserve(static_cast<std::size_t>(arch_.levels));
  torch::Tensor h = x;
  for (std::int64_t l = 0; l < arch_.levels; ++l) {
    h = encoders_[static_cast<std::size_t>(l)]->as<DoubleConvImpl>()->forward(h);
    skips.push_back(h);
    h = torch::max_pool2d(h, 2);
  }
  h = bottleneck_->forward(h);
  if (bottleneck != nullptr) *bottleneck = h;
  for (std::int64_t i = 0; i < arch_.levels; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    h = upsamplers_[idx]->as<nn::ConvTranspose2dImpl>()->forward(h);
    h = torch::cat({h, skips[static_cast<std::size_t>(arch_.levels - 1 - i)]}, 1);
    h = decoders_[idx]->as<DoubleConvImpl>()->forward(h);
  }
  return torch::sigmoid(mask_head_->forward(h));
}

Decomposition DecomposerImpl::forward(const torch::Tensor& x) {
  torch::Tensor deep;
  auto mask = trunk(x, &deep);
  auto h = z_convs_->forward(deep);
  h = torch::adaptive_avg_pool2d(h, {1, 1}).flatten(1);
  h = torch::leaky_relu(z_hidden_->forward(h), arch_.leaky_slope);
  return Decomposition{std::move(mask), torch::sigmoid(z_out_->forward(h))};
}

torch::Tensor DecomposerImpl::segment(const torch::Tensor& x) { return trunk(x, nullptr); }

ResidualBlockImpl::ResidualBlockImpl(std::int64_t width, double slope) {
  body_ = register_module("body", nn::Sequential(conv(width, width, 3, 1, 1, false), nn::BatchNorm2d(width),
                                                  leaky(slope), conv(width, width, 3, 1, 1, false),
                                                  nn::BatchNorm2d(width), leaky(slope)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) { return x + body_->forward(x); }

ReconstructorImpl::ReconstructorImpl(const ArchDescriptor& arch) : arch_(arch) {
  arch_.validate();
  const double slope = arch_.leaky_slope;
  if (arch_.z_grid > 0) {
    z_map_ = register_module("z_map", nn::Linear(arch_.z_dim, arch_.z_dim * arch_.z_grid * arch_.z_grid));
  }
  stem_ = register_module("stem", nn::Sequential(conv(1 + arch_.z_dim, arch_.recon_width, 7, 1, 3, false),
                                                  nn::BatchNorm2d(arch_.recon_width), leaky(slope)));
  blocks_ = nn::Sequential();
  for (std::int64_t i = 0; i < arch_.res_blocks; ++i) blocks_->push_back(ResidualBlock(arch_.recon_width, slope));
  register_module("blocks", blocks_);
  head_ = register_module("head", conv(arch_.recon_width, 1, 3, 1, 1, true));
}

torch::Tensor ReconstructorImpl::forward(const torch::Tensor& mask, const torch::Tensor& z) {
  check_canonical(mask, arch_, "reconstructor mask");
  if (z.dim() != 2 || z.size(0) != mask.size(0) || z.size(1) != arch_.z_dim) {
    throw ShapeError("reconstructor z must be [B," + std::to_string(arch_.z_dim) + "], got " + c10::str(z.sizes()));
  }
  const auto b = mask.size(0);
  const auto size = arch_.image_size;
  torch::Tensor planes;
  if (z_map_) {
    // A dense projection gives z a coarse spatial layout; a constant
    // broadcast leaves the convolutions nothing to place non-mask content by.
    auto coarse = z_map_->forward(z).view({b, arch_.z_dim, arch_.z_grid, arch_.z_grid});
    planes = torch::nn::functional::interpolate(
        coarse,
        torch::nn::functional::InterpolateFuncOptions().size(std::vector<std::int64_t>{size, size})
            .mode(torch::kBilinear).align_corners(false));
  } else {
    planes = z.view({b, arch_.z_dim, 1, 1}).expand({b, arch_.z_dim, size, size});
  }
  auto h = stem_->forward(torch::cat({mask, planes}, 1));
  if (!blocks_->is_empty()) h = blocks_->forward(h);
  return torch::tanh(head_->forward(h));
}

DiscriminatorImpl::DiscriminatorImpl(const ArchDescriptor& arch) : arch_(arch) {
  arch_.validate();
  std::int64_t in = 1;
  for (std::int64_t l = 0; l < arch_.disc_layers; ++l) {
    const std::int64_t out = arch_.disc_width << std::min<std::int64_t>(l, 3);
    body_->push_back(conv(in, out, 4, 2, 1, l == 0));
    if (l > 0) body_->push_back(nn::BatchNorm2d(out));
    body_->push_back(leaky(arch_.leaky_slope));
    in = out;
  }
  body_->push_back(conv(in, 1, 3, 1, 1, true));
  register_module("body", body_);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  check_canonical(x, arch_, "discriminator input");
  return body_->forward(x).mean({1, 2, 3});
}

torch::Tensor binarize_st(const torch::Tensor& soft_mask) { return StraightThroughStep::apply(soft_mask); }

void NetworkParams::train(bool on) {
  decomposer->train(on);
  reconstructor->train(on);
  image_discriminator->train(on);
  mask_discriminator->train(on);
}

void NetworkParams::to(torch::ScalarType dtype) {
  decomposer->to(dtype);
  reconstructor->to(dtype);
  image_discriminator->to(dtype);
  mask_discriminator->to(dtype);
}

NamedTensors NetworkParams::named_state() const {
  NamedTensors out;
  auto add = [&out](const std::string& prefix, const torch::nn::Module& m) {
    for (const auto& item : m.named_parameters()) out.emplace_back(prefix + item.key(), item.value());
    for (const auto& item : m.named_buffers()) out.emplace_back(prefix + item.key(), item.value());
  };
  add("decomposer.", *decomposer);
  add("reconstructor.", *reconstructor);
  add("image_discriminator.", *image_discriminator);
  add("mask_discriminator.", *mask_discriminator);
  return out;
}

std::vector<torch::Tensor> NetworkParams::generator_parameters() const {
  auto params = decomposer->parameters();
  const auto rec = reconstructor->parameters();
  params.insert(params.end(), rec.begin(), rec.end());
  return params;
}

void NetworkParams::load_state(const NamedTensors& state) {
  torch::NoGradGuard no_grad;
  auto mine = named_state();
  if (mine.size() != state.size()) {
    throw CheckpointError("parameter count mismatch: expected " + std::to_string(mine.size()) + ", got " +
                          std::to_string(state.size()));
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    auto& [name, dst] = mine[i];
    const auto& [src_name, src] = state[i];
    if (name != src_name || !dst.sizes().equals(src.sizes())) {
      throw CheckpointError("parameter mismatch at '" + name + "' (found '" + src_name + "' " +
                            c10::str(src.sizes()) + ")");
    }
    dst.copy_(src);
  }
}

NetworkParams NetworkParams::clone() const {
  NetworkParams copy;
  {
    std::lock_guard lock(init_mutex());
    copy.arch = arch;
    copy.decomposer = Decomposer(arch);
    copy.reconstructor = Reconstructor(arch);
    copy.image_discriminator = Discriminator(arch);
    copy.mask_discriminator = Discriminator(arch);
  }
  copy.to(dtype_of(*decomposer));
  copy.load_state(named_state());
  copy.decomposer->train(decomposer->is_training());
  copy.reconstructor->train(reconstructor->is_training());
  copy.image_discriminator->train(image_discriminator->is_training());
  copy.mask_discriminator->train(mask_discriminator->is_training());
  return copy;
}

NetworkParams init_params(const ArchDescriptor& arch, std::uint64_t seed) {
  arch.validate();
  std::lock_guard lock(init_mutex());
  torch::manual_seed(seed);
  NetworkParams p;
  p.arch = arch;
  p.decomposer = Decomposer(arch);
  p.reconstructor = Reconstructor(arch);
  p.image_discriminator = Discriminator(arch);
  p.mask_discriminator = Discriminator(arch);
  return p;
}

void save_params(const NetworkParams& params, const std::filesystem::path& path, std::int64_t step) {
  nlohmann::json meta{{"kind", "params"}, {"arch", params.arch}, {"step", step}};
  write_checkpoint(path, meta, params.named_state());
}

NetworkParams load_params(const std::filesystem::path& path) {
  const auto contents = read_checkpoint(path);
  ArchDescriptor arch;
  try {
    arch = contents.meta.at("arch").get<ArchDescriptor>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint lacks an architecture descriptor: ") + e.what());
  }
  auto params = init_params(arch, 0);
  NamedTensors state;
  for (const auto& [name, _] : params.named_state()) state.emplace_back(name, contents.get(name));
  params.to(state.empty() ? torch::kFloat32 : state.front().second.scalar_type());
  params.load_state(state);
  return params;
}

NetworkParams load_params(const std::filesystem::path& path, const ArchDescriptor& expected) {
  const auto contents = read_checkpoint(path);
  if (!contents.meta.contains("arch") || contents.meta.at("arch") != nlohmann::json(expected)) {
    throw CheckpointError("checkpoint architecture does not match the requested descriptor");
  }
  return load_params(path);
}

InferenceScope::InferenceScope(NetworkParams& params)
    : params_(params), was_training_(params.decomposer->is_training()) {
  params_.train(false);
}

InferenceScope::~InferenceScope() { params_.train(was_training_); }

SliceDecomposition decompose(NetworkParams& params, const ImageSlice& x) {
  InferenceScope scope(params);
  const auto dtype = dtype_of(*params.decomposer);
  const auto out = params.decomposer->forward(to_tensor(x.pixels).to(dtype));
  SliceDecomposition d;
  d.mask = MaskMap{grid_from_tensor(out.mask), false};
  auto z = out.z.to(torch::kFloat32).contiguous();
  d.z.values.assign(z.data_ptr<float>(), z.data_ptr<float>() + z.numel());
  return d;
}

MaskMap binarize(const MaskMap& soft) {
  MaskMap out{soft.pixels, true};
  for (float& v : out.pixels.data) v = v >= 0.5f ? 1.0f : 0.0f;
  return out;
}

ImageSlice reconstruct(NetworkParams& params, const MaskMap& mask, const LatentCode& z) {
  if (static_cast<std::int64_t>(z.values.size()) != params.arch.z_dim) {
    throw ShapeError("latent code must have " + std::to_string(params.arch.z_dim) + " components");
  }
  InferenceScope scope(params);
  const auto dtype = dtype_of(*params.reconstructor);
  auto zt = torch::from_blob(const_cast<float*>(z.values.data()), {1, params.arch.z_dim}, torch::kFloat32).to(dtype);
  const auto out = params.reconstructor->forward(to_tensor(mask.pixels).to(dtype), zt);
  return ImageSlice{grid_from_tensor(out), 1.0};
}

double discriminate_image(NetworkParams& params, const ImageSlice& x) {
  InferenceScope scope(params);
  const auto dtype = dtype_of(*params.image_discriminator);
  return params.image_discriminator->forward(to_tensor(x.pixels).to(dtype)).item<double>();
}

double discriminate_mask(NetworkParams& params, const MaskMap& m) {
  InferenceScope scope(params);
  const auto dtype = dtype_of(*params.mask_discriminator);
  return params.mask_discriminator->forward(to_tensor(m.pixels).to(dtype)).item<double>();
}

}  // namespace sdnet
