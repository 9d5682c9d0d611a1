#include "sdnet/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

namespace sdnet {

std::int64_t resampled_extent(std::int64_t n, double spacing, double target_spacing) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(n) * spacing / target_spacing));
}

Grid resize_bilinear(const Grid& in, std::int64_t out_height, std::int64_t out_width) {
  if (out_height <= 0 || out_width <= 0) {
    throw ArgumentError("resize target must be positive");
  }
  if (out_height == in.height && out_width == in.width) {
    return in;
  }
  const double scale_y = static_cast<double>(in.height) / static_cast<double>(out_height);
  const double scale_x = static_cast<double>(in.width) / static_cast<double>(out_width);

  struct Tap {
    std::int64_t lo, hi;
    double frac;
  };
  auto taps = [](std::int64_t out_n, std::int64_t in_n, double scale) {
    std::vector<Tap> t(static_cast<std::size_t>(out_n));
    for (std::int64_t i = 0; i < out_n; ++i) {
      const double src = std::max(0.0, (static_cast<double>(i) + 0.5) * scale - 0.5);
      const auto lo = std::min(static_cast<std::int64_t>(src), in_n - 1);
      t[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, in_n - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(out_height, in.height, scale_y);
  const auto tx = taps(out_width, in.width, scale_x);

  Grid out(out_height, out_width);
  for (std::int64_t r = 0; r < out_height; ++r) {
    const Tap& y = ty[static_cast<std::size_t>(r)];
    for (std::int64_t c = 0; c < out_width; ++c) {
      const Tap& x = tx[static_cast<std::size_t>(c)];
      const double top = (1.0 - x.frac) * in.at(y.lo, x.lo) + x.frac * in.at(y.lo, x.hi);
      const double bottom = (1.0 - x.frac) * in.at(y.hi, x.lo) + x.frac * in.at(y.hi, x.hi);
      out.at(r, c) = static_cast<float>((1.0 - y.frac) * top + y.frac * bottom);
    }
  }
  return out;
}

Volume resample_volume(const Volume& v, double target_spacing) {
  if (!(target_spacing > 0.0) || !std::isfinite(target_spacing)) {
    throw ArgumentError("target spacing must be positive");
  }
  if (!(v.pixel_spacing > 0.0)) {
    throw ArgumentError("volume spacing must be positive");
  }
  Volume out;
  out.pixel_spacing = target_spacing;
  out.slice_thickness = v.slice_thickness;
  out.subject_id = v.subject_id;
  out.frames.reserve(v.frames.size());
  for (const Grid& f : v.frames) {
    out.frames.push_back(resize_bilinear(f, resampled_extent(f.height, v.pixel_spacing, target_spacing),
                                         resampled_extent(f.width, v.pixel_spacing, target_spacing)));
  }
  return out;
}

Volume normalise_volume(const Volume& v) {
  if (v.frames.empty()) {
    throw ArgumentError("cannot normalise a volume without frames");
  }
  float lo = std::numeric_limits<float>::infinity();
  float hi = -std::numeric_limits<float>::infinity();
  for (const Grid& f : v.frames) {
    for (float x : f.data) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  Volume out = v;
  const double range = static_cast<double>(hi) - static_cast<double>(lo);
  for (Grid& f : out.frames) {
    for (float& x : f.data) {
      x = range > 0.0 ? static_cast<float>(2.0 * (static_cast<double>(x) - lo) / range - 1.0) : 0.0f;
    }
  }
  return out;
}

Grid center_crop_or_pad(const Grid& g, std::int64_t size, float pad_value) {
  if (size <= 0 || size % 16 != 0) {
    throw ArgumentError("crop size must be a positive multiple of 16");
  }
  Grid out(size, size, pad_value);
  // Positive offsets crop the source, negative offsets pad the destination.
  const std::int64_t off_y = (g.height - size) / 2;
  const std::int64_t off_x = (g.width - size) / 2;
  for (std::int64_t r = 0; r < size; ++r) {
    const std::int64_t sr = r + off_y;
    if (sr < 0 || sr >= g.height) continue;
    for (std::int64_t c = 0; c < size; ++c) {
      const std::int64_t sc = c + off_x;
      if (sc < 0 || sc >= g.width) continue;
      out.at(r, c) = g.at(sr, sc);
    }
  }
  return out;
}

ImageSlice center_crop_or_pad(const ImageSlice& s, std::int64_t size) {
  return ImageSlice{center_crop_or_pad(s.pixels, size, -1.0f), s.spacing};
}

std::vector<LabelledSample> preprocess_volume(const Volume& image, const Volume& labels, float label_value,
                                              const std::string& subject_id, std::int64_t size) {
  if (image.frames.size() != labels.frames.size()) {
    throw ShapeError("image and label volumes have different frame counts");
  }
  Volume indicator = labels;
  for (std::size_t f = 0; f < labels.frames.size(); ++f) {
    if (!labels.frames[f].same_shape(image.frames[f])) throw ShapeError("image and label frames differ in shape");
    for (float& v : indicator.frames[f].data) v = v == label_value ? 1.0f : 0.0f;
  }
  const auto img = normalise_volume(resample_volume(image, kCanonicalSpacing));
  const auto lab = resample_volume(indicator, kCanonicalSpacing);
  std::vector<LabelledSample> out;
  for (std::size_t f = 0; f < img.frames.size(); ++f) {
    LabelledSample s;
    s.id = subject_id + "_" + std::to_string(f);
    s.subject_id = subject_id;
    s.image = center_crop_or_pad(ImageSlice{img.frames[f], kCanonicalSpacing}, size);
    auto mask = center_crop_or_pad(lab.frames[f], size, 0.0f);
    for (float& v : mask.data) v = v >= 0.5f ? 1.0f : 0.0f;
    s.mask = MaskMap{std::move(mask), true};
    out.push_back(std::move(s));
  }
  return out;
}

SplitSpec make_splits(const std::vector<std::string>& subject_ids, std::int64_t fold, std::int64_t n_folds,
                      std::uint64_t seed) {
  if (n_folds != 3) {
    throw ArgumentError("only 3-fold cross validation is supported");
  }
  if (fold < 0 || fold >= n_folds) {
    throw ArgumentError("fold index out of range");
  }
  const std::set<std::string> unique(subject_ids.begin(), subject_ids.end());
  if (unique.size() != subject_ids.size()) {
    throw ArgumentError("subject ids must be unique");
  }
  const auto n = static_cast<std::int64_t>(subject_ids.size());
  if (n < 7) {
    throw ArgumentError("at least 7 subjects are required for a 70/15/15 split");
  }
  std::vector<std::string> order = subject_ids;
  std::sort(order.begin(), order.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::int64_t block = std::max<std::int64_t>(1, std::llround(0.15 * static_cast<double>(n)));
  auto block_of = [&](std::int64_t f) {
    return std::vector<std::string>(order.begin() + f * block, order.begin() + (f + 1) * block);
  };

  SplitSpec split;
  split.fold = fold;
  split.n_folds = n_folds;
  split.seed = seed;
  split.test = block_of(fold);
  split.validation = block_of((fold + 1) % n_folds);
  const std::set<std::string> held(split.test.begin(), split.test.end());
  const std::set<std::string> val(split.validation.begin(), split.validation.end());
  for (const auto& s : order) {
    if (!held.contains(s) && !val.contains(s)) split.train.push_back(s);
  }
  return split;
}

LabelBudget make_label_budget(const std::vector<LabelledSample>& train_samples, std::int64_t n_labelled,
                              std::int64_t n_unlabelled, std::uint64_t seed) {
  if (n_labelled < 0 || n_unlabelled < 0) {
    throw ArgumentError("label budget counts must be non-negative");
  }
  if (n_labelled + n_unlabelled > static_cast<std::int64_t>(train_samples.size())) {
    throw ArgumentError("label budget exceeds the " + std::to_string(train_samples.size()) +
                        " available training slices");
  }

  std::vector<std::string> subjects;
  std::map<std::string, std::vector<std::string>> slices;
  for (const auto& s : train_samples) {
    auto& list = slices[s.subject_id];
    if (list.empty()) subjects.push_back(s.subject_id);
    list.push_back(s.id);
  }
  std::sort(subjects.begin(), subjects.end());
  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);

  LabelBudget budget;
  budget.n_labelled = n_labelled;
  budget.n_unlabelled = n_unlabelled;
  // Unlabelled slices come from the back of the order and labelled ones from
  // the front, so the unlabelled pool does not depend on the labelled budget.
  auto take = [&](auto first, auto last, std::int64_t need, std::vector<std::string>& out) {
    std::size_t used = 0;
    for (auto it = first; it != last && need > 0; ++it, ++used) {
      for (const auto& id : slices[*it]) {
        if (need == 0) break;
        out.push_back(id);
        --need;
      }
    }
    return used;
  };
  const auto back = take(subjects.rbegin(), subjects.rend(), n_unlabelled, budget.unlabelled_ids);
  const auto front =
      take(subjects.begin(), subjects.end() - static_cast<std::ptrdiff_t>(back), n_labelled, budget.labelled_ids);
  if (static_cast<std::int64_t>(budget.labelled_ids.size()) < n_labelled) {
    throw ArgumentError("label budget needs more training subjects than are available");
  }
  for (std::size_t i = front; i + back < subjects.size(); ++i) {
    const auto& ids = slices[subjects[i]];
    budget.mask_pool_ids.insert(budget.mask_pool_ids.end(), ids.begin(), ids.end());
  }
  if (budget.mask_pool_ids.empty()) {
    throw ArgumentError("no subjects remain outside the labelled and unlabelled sets for the unpaired mask pool");
  }
  return budget;
}

}  // namespace sdnet
