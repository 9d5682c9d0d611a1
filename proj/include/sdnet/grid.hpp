#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sdnet/errors.hpp"

namespace sdnet {

/// Row-major 2D scalar grid.
struct Grid {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> data;

  Grid() = default;
  Grid(std::int64_t h, std::int64_t w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h * w), fill) {}

  float& at(std::int64_t row, std::int64_t col) { return data[static_cast<std::size_t>(row * width + col)]; }
  float at(std::int64_t row, std::int64_t col) const {
    return data[static_cast<std::size_t>(row * width + col)];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Grid& other) const { return height == other.height && width == other.width; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Network input X: a 2D slice with in-plane spacing in mm per pixel.
struct ImageSlice {
  Grid pixels;
  double spacing = 1.0;

  friend bool operator==(const ImageSlice&, const ImageSlice&) = default;
};

/// Spatial factor M. Soft masks live in [0,1]; binary masks in {0,1}.
struct MaskMap {
  Grid pixels;
  bool is_binary = false;

  friend bool operator==(const MaskMap&, const MaskMap&) = default;
};

struct Volume {
  std::vector<Grid> frames;
  double pixel_spacing = 0.0;
  double slice_thickness = 0.0;
  std::string subject_id;

  friend bool operator==(const Volume&, const Volume&) = default;
};

struct LabelledSample {
  std::string id;
  std::string subject_id;
  ImageSlice image;
  MaskMap mask;
};

struct UnlabelledSample {
  std::string id;
  std::string subject_id;
  ImageSlice image;
};

/// True when every pixel is exactly 0 or 1.
bool is_binary_grid(const Grid& g);

/// Checks the MaskMap invariants and returns a binary mask, raising
/// ArgumentError for values outside {0,1}.
MaskMap make_binary_mask(Grid pixels);

// Conversions between grids and [N,1,H,W] float tensors.
torch::Tensor to_tensor(const Grid& g);
torch::Tensor stack_grids(std::span<const Grid* const> grids);
Grid grid_from_tensor(const torch::Tensor& t);

}  // namespace sdnet
