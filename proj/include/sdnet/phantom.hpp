#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdnet/grid.hpp"

namespace sdnet {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  friend bool operator==(const Range&, const Range&) = default;
};

enum class PhantomRegion { kBackground, kCavity, kMyocardium, kDistractor };

struct IntensityBand {
  PhantomRegion region = PhantomRegion::kBackground;
  Range range;

  friend bool operator==(const IntensityBand&, const IntensityBand&) = default;
};

/// Synthetic short-axis slice generator: a bright annulus (myocardium) around
/// a cavity, on a low-frequency background with elliptical distractor blobs
/// and Gaussian noise. Slices are grouped into subjects that share intensity
/// bands and background, and vary ring geometry from slice to slice.
struct PhantomSpec {
  std::int64_t image_size = 64;
  /// Offset of the ring centre from the image centre, in pixels, per axis.
  Range ring_center_range{-6.0, 6.0};
  /// Outer ring radius in pixels.
  Range ring_radius_range{9.0, 15.0};
  Range ring_thickness_range{3.0, 5.0};
  double background_texture_scale = 0.15;
  std::vector<IntensityBand> intensity_bands{
      {PhantomRegion::kBackground, {0.05, 0.35}},
      {PhantomRegion::kCavity, {0.15, 0.75}},
      {PhantomRegion::kMyocardium, {0.55, 1.0}},
      {PhantomRegion::kDistractor, {0.45, 1.0}},
  };
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;
  std::int64_t slices_per_subject = 10;
  std::int64_t min_distractors = 2;
  std::int64_t max_distractors = 4;
  Range distractor_radius_range{3.0, 7.0};

  /// Raises ArgumentError unless every sampled ring fits inside the image.
  void validate() const;
  Range band(PhantomRegion region) const;

  friend bool operator==(const PhantomSpec&, const PhantomSpec&) = default;
};

void to_json(nlohmann::json& j, const PhantomSpec& spec);
void from_json(const nlohmann::json& j, PhantomSpec& spec);

/// One generated slice with the geometry and noise-free rendering it came from.
struct PhantomRecord {
  LabelledSample sample;
  Grid clean;  // pre-noise, pre-normalisation intensities
  double center_row = 0.0;
  double center_col = 0.0;
  double outer_radius = 0.0;
  double inner_radius = 0.0;
  double myocardium_intensity = 0.0;
};

std::vector<PhantomRecord> generate_phantom_records(const PhantomSpec& spec, std::int64_t n);

/// `n` labelled slices; sample i belongs to subject i / slices_per_subject.
std::vector<LabelledSample> generate_phantom(const PhantomSpec& spec, std::int64_t n);

/// Writes `image_XXXXX.npy` / `mask_XXXXX.npy` pairs and `manifest.json`.
void save_dataset(const std::vector<LabelledSample>& samples, const nlohmann::json& manifest_extra,
                  const std::filesystem::path& dir);
std::vector<LabelledSample> load_dataset(const std::filesystem::path& dir);
nlohmann::json load_manifest(const std::filesystem::path& dir);

}  // namespace sdnet
