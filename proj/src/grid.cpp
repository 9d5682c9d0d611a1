#include "sdnet/grid.hpp"

#include <algorithm>
#include <cstring>

namespace sdnet {

bool is_binary_grid(const Grid& g) {
  return std::all_of(g.data.begin(), g.data.end(), [](float v) { return v == 0.0f || v == 1.0f; });
}

MaskMap make_binary_mask(Grid pixels) {
  if (!is_binary_grid(pixels)) {
    throw ArgumentError("mask is not binary");
  }
  return MaskMap{std::move(pixels), true};
}

torch::Tensor to_tensor(const Grid& g) {
  auto t = torch::empty({1, 1, g.height, g.width}, torch::kFloat32);
  std::memcpy(t.data_ptr<float>(), g.data.data(), g.data.size() * sizeof(float));
  return t;
}

torch::Tensor stack_grids(std::span<const Grid* const> grids) {
  if (grids.empty()) {
    throw ArgumentError("cannot stack an empty list of grids");
  }
  const auto h = grids.front()->height;
  const auto w = grids.front()->width;
  auto t = torch::empty({static_cast<std::int64_t>(grids.size()), 1, h, w}, torch::kFloat32);
  auto* out = t.data_ptr<float>();
  for (const Grid* g : grids) {
    if (g->height != h || g->width != w) {
      throw ShapeError("grids in a batch must share one shape");
    }
    std::memcpy(out, g->data.data(), g->data.size() * sizeof(float));
    out += g->data.size();
  }
  return t;
}

Grid grid_from_tensor(const torch::Tensor& t) {
  auto flat = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  if (flat.numel() == 0 || flat.dim() < 2) {
    throw ShapeError("tensor must have at least two dimensions");
  }
  const auto h = flat.size(-2);
  const auto w = flat.size(-1);
  if (flat.numel() != h * w) {
    throw ShapeError("tensor holds more than one 2D grid");
  }
  Grid g(h, w);
  std::memcpy(g.data.data(), flat.data_ptr<float>(), g.data.size() * sizeof(float));
  return g;
}

}  // namespace sdnet
