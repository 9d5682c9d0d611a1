#include "sdnet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "sdnet/array_io.hpp"
#include "sdnet/data_pipeline.hpp"

namespace sdnet {
namespace {

const char* region_name(PhantomRegion r) {
  switch (r) {
    case PhantomRegion::kBackground: return "background";
    case PhantomRegion::kCavity: return "cavity";
    case PhantomRegion::kMyocardium: return "myocardium";
    case PhantomRegion::kDistractor: return "distractor";
  }
  return "?";
}

PhantomRegion region_from_name(const std::string& name) {
  for (auto r : {PhantomRegion::kBackground, PhantomRegion::kCavity, PhantomRegion::kMyocardium,
                 PhantomRegion::kDistractor}) {
    if (name == region_name(r)) return r;
  }
  throw ArgumentError("unknown phantom region '" + name + "'");
}

nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }
Range range_from(const nlohmann::json& j) { return Range{j.at(0).get<double>(), j.at(1).get<double>()}; }

double uniform(std::mt19937_64& rng, const Range& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

std::string padded(std::int64_t i, int width) {
  std::ostringstream s;
  s << std::setw(width) << std::setfill('0') << i;
  return s.str();
}

struct SubjectLook {
  double background = 0.0;
  double cavity = 0.0;
  double myocardium = 0.0;
  double gradient_amplitude = 0.0;
  double gradient_angle = 0.0;
  double gradient_phase = 0.0;
  double center_row = 0.0;
  double center_col = 0.0;
  double outer_radius = 0.0;
  double thickness = 0.0;
};

}  // namespace

void PhantomSpec::validate() const {
  if (image_size < 16) throw ArgumentError("phantom image_size must be at least 16");
  if (ring_radius_range.lo <= 0.0 || ring_radius_range.hi < ring_radius_range.lo) {
    throw ArgumentError("invalid ring radius range");
  }
  if (ring_thickness_range.lo <= 0.0 || ring_thickness_range.hi < ring_thickness_range.lo ||
      ring_thickness_range.hi >= ring_radius_range.lo) {
    throw ArgumentError("ring thickness must be positive and below the smallest radius");
  }
  const double reach = std::max(std::abs(ring_center_range.lo), std::abs(ring_center_range.hi)) +
                       ring_radius_range.hi;
  if (reach + 1.0 > static_cast<double>(image_size) / 2.0) {
    throw ArgumentError("ring does not fit inside the image for all sampled parameters");
  }
  if (min_distractors < 0 || max_distractors < min_distractors) throw ArgumentError("invalid distractor count");
  if (slices_per_subject < 1) throw ArgumentError("slices_per_subject must be positive");
  if (noise_sigma < 0.0) throw ArgumentError("noise_sigma must be non-negative");
  for (auto r : {PhantomRegion::kBackground, PhantomRegion::kCavity, PhantomRegion::kMyocardium,
                 PhantomRegion::kDistractor}) {
    (void)band(r);
  }
}

Range PhantomSpec::band(PhantomRegion region) const {
  for (const auto& b : intensity_bands) {
    if (b.region == region) return b.range;
  }
  throw ArgumentError(std::string("phantom spec lacks an intensity band for ") + region_name(region));
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  nlohmann::json bands = nlohmann::json::array();
  for (const auto& b : s.intensity_bands) {
    bands.push_back({{"region", region_name(b.region)}, {"range", range_json(b.range)}});
  }
  j = nlohmann::json{{"image_size", s.image_size},
                     {"ring_center_range", range_json(s.ring_center_range)},
                     {"ring_radius_range", range_json(s.ring_radius_range)},
                     {"ring_thickness_range", range_json(s.ring_thickness_range)},
                     {"background_texture_scale", s.background_texture_scale},
                     {"intensity_bands", bands},
                     {"noise_sigma", s.noise_sigma},
                     {"seed", s.seed},
                     {"slices_per_subject", s.slices_per_subject},
                     {"min_distractors", s.min_distractors},
                     {"max_distractors", s.max_distractors},
                     {"distractor_radius_range", range_json(s.distractor_radius_range)}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  s.image_size = j.at("image_size").get<std::int64_t>();
  s.ring_center_range = range_from(j.at("ring_center_range"));
  s.ring_radius_range = range_from(j.at("ring_radius_range"));
  s.ring_thickness_range = range_from(j.at("ring_thickness_range"));
  s.background_texture_scale = j.at("background_texture_scale").get<double>();
  s.intensity_bands.clear();
  for (const auto& b : j.at("intensity_bands")) {
    s.intensity_bands.push_back({region_from_name(b.at("region").get<std::string>()), range_from(b.at("range"))});
  }
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.slices_per_subject = j.at("slices_per_subject").get<std::int64_t>();
  s.min_distractors = j.at("min_distractors").get<std::int64_t>();
  s.max_distractors = j.at("max_distractors").get<std::int64_t>();
  s.distractor_radius_range = range_from(j.at("distractor_radius_range"));
}

std::vector<PhantomRecord> generate_phantom_records(const PhantomSpec& spec, std::int64_t n) {
  spec.validate();
  if (n < 0) throw ArgumentError("phantom count must be non-negative");

  const auto size = spec.image_size;
  const double half = static_cast<double>(size) / 2.0;
  const double max_offset = std::max(std::abs(spec.ring_center_range.lo), std::abs(spec.ring_center_range.hi));
  const Range distractor_band = spec.band(PhantomRegion::kDistractor);

  std::vector<PhantomRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  SubjectLook look;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t subject = i / spec.slices_per_subject;
    const std::int64_t slice = i % spec.slices_per_subject;
    if (slice == 0) {
      auto rng = stream(spec.seed, static_cast<std::uint64_t>(subject), 0xfffffffful);
      look.background = uniform(rng, spec.band(PhantomRegion::kBackground));
      look.cavity = uniform(rng, spec.band(PhantomRegion::kCavity));
      look.myocardium = uniform(rng, spec.band(PhantomRegion::kMyocardium));
      look.gradient_amplitude = spec.background_texture_scale * uniform(rng, {0.5, 1.0});
      look.gradient_angle = uniform(rng, {0.0, 2.0 * std::numbers::pi});
      look.gradient_phase = uniform(rng, {0.0, 2.0 * std::numbers::pi});
      look.center_row = uniform(rng, spec.ring_center_range);
      look.center_col = uniform(rng, spec.ring_center_range);
      look.outer_radius = uniform(rng, spec.ring_radius_range);
      look.thickness = uniform(rng, spec.ring_thickness_range);
    }
    auto rng = stream(spec.seed, static_cast<std::uint64_t>(subject), static_cast<std::uint64_t>(slice));

    const double cy = half + std::clamp(look.center_row + uniform(rng, {-1.5, 1.5}), -max_offset, max_offset);
    const double cx = half + std::clamp(look.center_col + uniform(rng, {-1.5, 1.5}), -max_offset, max_offset);
    const double outer = std::clamp(look.outer_radius * uniform(rng, {0.85, 1.1}), spec.ring_radius_range.lo,
                                    spec.ring_radius_range.hi);
    const double thickness = std::clamp(look.thickness + uniform(rng, {-0.5, 0.5}), spec.ring_thickness_range.lo,
                                        spec.ring_thickness_range.hi);
    const double inner = outer - thickness;

    struct Blob {
      double cy, cx, a, b, angle, level;
    };
    std::vector<Blob> blobs;
    const auto n_blobs = std::uniform_int_distribution<std::int64_t>(spec.min_distractors, spec.max_distractors)(rng);
    for (std::int64_t k = 0; k < n_blobs; ++k) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        Blob b{uniform(rng, {0.0, static_cast<double>(size)}), uniform(rng, {0.0, static_cast<double>(size)}),
               uniform(rng, spec.distractor_radius_range), uniform(rng, spec.distractor_radius_range),
               uniform(rng, {0.0, std::numbers::pi}), uniform(rng, distractor_band)};
        const double reach = std::max(b.a, b.b);
        if (std::hypot(b.cy - cy, b.cx - cx) > outer + reach + 2.0) {
          blobs.push_back(b);
          break;
        }
      }
    }

    PhantomRecord rec;
    rec.center_row = cy;
    rec.center_col = cx;
    rec.outer_radius = outer;
    rec.inner_radius = inner;
    rec.myocardium_intensity = look.myocardium;
    Grid clean(size, size);
    Grid mask(size, size);
    const double kx = std::cos(look.gradient_angle) * 2.0 * std::numbers::pi / (1.5 * static_cast<double>(size));
    const double ky = std::sin(look.gradient_angle) * 2.0 * std::numbers::pi / (1.5 * static_cast<double>(size));
    for (std::int64_t r = 0; r < size; ++r) {
      for (std::int64_t c = 0; c < size; ++c) {
        const double y = static_cast<double>(r) + 0.5;
        const double x = static_cast<double>(c) + 0.5;
        double v = look.background + look.gradient_amplitude * std::cos(kx * x + ky * y + look.gradient_phase);
        for (const Blob& b : blobs) {
          const double dy = y - b.cy;
          const double dx = x - b.cx;
          const double u = (dx * std::cos(b.angle) + dy * std::sin(b.angle)) / b.a;
          const double w = (-dx * std::sin(b.angle) + dy * std::cos(b.angle)) / b.b;
          if (u * u + w * w <= 1.0) v = b.level;
        }
        const double d = std::hypot(y - cy, x - cx);
        if (d < inner) v = look.cavity;
        if (d >= inner && d < outer) {
          v = look.myocardium;
          mask.at(r, c) = 1.0f;
        }
        clean.at(r, c) = static_cast<float>(v);
      }
    }

    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    std::vector<double> noisy(clean.size());
    for (std::size_t p = 0; p < clean.size(); ++p) {
      noisy[p] = clean.data[p] + (spec.noise_sigma > 0.0 ? noise(rng) : 0.0);
    }
    const auto [lo_it, hi_it] = std::minmax_element(noisy.begin(), noisy.end());
    const double lo = *lo_it;
    const double range = *hi_it - lo;
    Grid image(size, size);
    for (std::size_t p = 0; p < noisy.size(); ++p) {
      image.data[p] = range > 0.0 ? static_cast<float>(2.0 * (noisy[p] - lo) / range - 1.0) : 0.0f;
    }

    rec.sample.id = "s" + padded(i, 6);
    rec.sample.subject_id = "subj" + padded(subject, 4);
    rec.sample.image = ImageSlice{std::move(image), kCanonicalSpacing};
    rec.sample.mask = MaskMap{std::move(mask), true};
    rec.clean = std::move(clean);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<LabelledSample> generate_phantom(const PhantomSpec& spec, std::int64_t n) {
  auto records = generate_phantom_records(spec, n);
  std::vector<LabelledSample> out;
  out.reserve(records.size());
  for (auto& r : records) out.push_back(std::move(r.sample));
  return out;
}

void save_dataset(const std::vector<LabelledSample>& samples, const nlohmann::json& manifest_extra,
                  const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string());

  nlohmann::json manifest = manifest_extra;
  manifest["count"] = samples.size();
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::string stem = padded(static_cast<std::int64_t>(i), 5);
    save_npy(s.image.pixels, dir / ("image_" + stem + ".npy"));
    save_npy(s.mask.pixels, dir / ("mask_" + stem + ".npy"));
    entries.push_back({{"id", s.id},
                       {"subject", s.subject_id},
                       {"image", "image_" + stem + ".npy"},
                       {"mask", "mask_" + stem + ".npy"},
                       {"spacing", s.image.spacing}});
  }
  manifest["samples"] = entries;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("cannot write manifest in " + dir.string());
}

nlohmann::json load_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IngestionError("missing manifest.json in " + dir.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw MetadataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
}

std::vector<LabelledSample> load_dataset(const std::filesystem::path& dir) {
  const auto manifest = load_manifest(dir);
  std::vector<LabelledSample> samples;
  try {
    for (const auto& e : manifest.at("samples")) {
      LabelledSample s;
      s.id = e.at("id").get<std::string>();
      s.subject_id = e.at("subject").get<std::string>();
      s.image = ImageSlice{load_npy(dir / e.at("image").get<std::string>()), e.at("spacing").get<double>()};
      s.mask = make_binary_mask(load_npy(dir / e.at("mask").get<std::string>()));
      if (!s.mask.pixels.same_shape(s.image.pixels)) {
        throw ShapeError("mask and image shapes differ for sample " + s.id);
      }
      samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw MetadataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return samples;
}

}  // namespace sdnet
