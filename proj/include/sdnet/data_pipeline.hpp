#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdnet/grid.hpp"

namespace sdnet {

/// Canonical in-plane resolution (mm per pixel) every volume is resampled to.
inline constexpr double kCanonicalSpacing = 1.37;
/// Canonical network input edge length after crop/pad.
inline constexpr std::int64_t kCanonicalSize = 224;

/// Output edge length for a resampled axis: round(n * spacing / target).
std::int64_t resampled_extent(std::int64_t n, double spacing, double target_spacing);

/// Bilinear resize with half-pixel centres (edge samples clamped).
Grid resize_bilinear(const Grid& in, std::int64_t out_height, std::int64_t out_width);

/// Resamples every frame to `target_spacing` mm per pixel.
Volume resample_volume(const Volume& v, double target_spacing);

/// Min-max maps the whole volume to [-1, 1]; constant volumes map to zeros.
Volume normalise_volume(const Volume& v);

/// Centred crop and/or pad (pad value -1) to `size`×`size`. `size` must be a
/// multiple of 16.
ImageSlice center_crop_or_pad(const ImageSlice& s, std::int64_t size);
Grid center_crop_or_pad(const Grid& g, std::int64_t size, float pad_value);

/// Full slice pipeline for one image volume and its label volume: resample
/// to the canonical spacing, normalise the image, crop/pad to `size`. The mask
/// of each frame marks voxels equal to `label_value`. Sample ids are
/// `<subject>_<frame>`.
std::vector<LabelledSample> preprocess_volume(const Volume& image, const Volume& labels, float label_value,
                                              const std::string& subject_id, std::int64_t size = kCanonicalSize);

/// Subject-level train/validation/test partition for one cross-validation fold.
struct SplitSpec {
  std::int64_t fold = 0;
  std::int64_t n_folds = 3;
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// 70/15/15 volume-level split. Subjects are shuffled once per seed; fold `f`
/// tests on the f-th block of 15% and validates on the next fold's block, so
/// the three test sets are pairwise disjoint.
SplitSpec make_splits(const std::vector<std::string>& subject_ids, std::int64_t fold,
                      std::int64_t n_folds, std::uint64_t seed);

/// Labelled/unlabelled partition of a training set plus the pool of unpaired
/// masks reserved for the mask discriminator.
struct LabelBudget {
  std::int64_t n_labelled = 0;
  std::int64_t n_unlabelled = 0;
  std::vector<std::string> labelled_ids;
  std::vector<std::string> unlabelled_ids;
  std::vector<std::string> mask_pool_ids;

  friend bool operator==(const LabelBudget&, const LabelBudget&) = default;
};

/// Shuffles subjects by `seed`, fills the unlabelled set from the end of that
/// order and the labelled set from the start (whole subjects first), so the
/// two never share a subject and the unlabelled pool is the same for every
/// labelled budget. Subjects touched by neither become the unpaired mask pool. Raises ArgumentError for infeasible counts or an empty mask pool.
LabelBudget make_label_budget(const std::vector<LabelledSample>& train_samples, std::int64_t n_labelled,
                              std::int64_t n_unlabelled, std::uint64_t seed);

}  // namespace sdnet
