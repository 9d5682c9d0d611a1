#include "sdnet/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <memory>

namespace sdnet {
namespace {

constexpr std::int32_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;

enum class NiftiType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
};

struct GzCloser {
  void operator()(gzFile_s* f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

template <typename T>
T read_field(const std::array<char, kHeaderSize>& raw, std::size_t offset, bool swap) {
  T value;
  std::memcpy(&value, raw.data() + offset, sizeof(T));
  if (swap) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    value = std::bit_cast<T>(bytes);
  }
  return value;
}

template <typename T>
void write_field(std::array<char, kHeaderSize>& raw, std::size_t offset, T value) {
  std::memcpy(raw.data() + offset, &value, sizeof(T));
}

std::size_t bytes_per_voxel(NiftiType type) {
  switch (type) {
    case NiftiType::kUInt8:
    case NiftiType::kInt8:
      return 1;
    case NiftiType::kInt16:
    case NiftiType::kUInt16:
      return 2;
    case NiftiType::kInt32:
    case NiftiType::kUInt32:
    case NiftiType::kFloat32:
      return 4;
    case NiftiType::kFloat64:
      return 8;
  }
  throw MetadataError("unsupported NIfTI datatype " + std::to_string(static_cast<int>(type)));
}

template <typename T>
double decode(const char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap && sizeof(T) > 1) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    v = std::bit_cast<T>(bytes);
  }
  return static_cast<double>(v);
}

double decode_voxel(const char* p, NiftiType type, bool swap) {
  switch (type) {
    case NiftiType::kUInt8: return decode<std::uint8_t>(p, swap);
    case NiftiType::kInt8: return decode<std::int8_t>(p, swap);
    case NiftiType::kInt16: return decode<std::int16_t>(p, swap);
    case NiftiType::kUInt16: return decode<std::uint16_t>(p, swap);
    case NiftiType::kInt32: return decode<std::int32_t>(p, swap);
    case NiftiType::kUInt32: return decode<std::uint32_t>(p, swap);
    case NiftiType::kFloat32: return decode<float>(p, swap);
    case NiftiType::kFloat64: return decode<double>(p, swap);
  }
  return 0.0;
}

}  // namespace

Volume load_volume(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw IngestionError("no such volume file: " + path.string());
  }
  GzHandle file(gzopen(path.c_str(), "rb"));
  if (!file) {
    throw IngestionError("cannot open volume file: " + path.string());
  }

  std::array<char, kHeaderSize> raw{};
  if (gzread(file.get(), raw.data(), kHeaderSize) != kHeaderSize) {
    throw MetadataError("truncated NIfTI header in " + path.string());
  }
  bool swap = false;
  auto header_size = read_field<std::int32_t>(raw, 0, false);
  if (header_size != kHeaderSize) {
    swap = true;
    header_size = read_field<std::int32_t>(raw, 0, true);
  }
  if (header_size != kHeaderSize) {
    throw MetadataError("corrupt NIfTI header (sizeof_hdr) in " + path.string());
  }
  if (std::memcmp(raw.data() + 344, "n+1", 4) != 0 && std::memcmp(raw.data() + 344, "ni1", 4) != 0) {
    throw MetadataError("corrupt NIfTI header (magic) in " + path.string());
  }

  std::array<std::int16_t, 8> dim{};
  for (std::size_t i = 0; i < 8; ++i) dim[i] = read_field<std::int16_t>(raw, 40 + 2 * i, swap);
  if (dim[0] < 2 || dim[0] > 7) {
    throw MetadataError("corrupt NIfTI header (dim[0]=" + std::to_string(dim[0]) + ")");
  }
  for (int i = 1; i <= dim[0]; ++i) {
    if (dim[i] < 1) throw MetadataError("corrupt NIfTI header (non-positive dimension)");
  }
  const auto type = static_cast<NiftiType>(read_field<std::int16_t>(raw, 70, swap));
  const std::size_t voxel_bytes = bytes_per_voxel(type);

  std::array<float, 8> pixdim{};
  for (std::size_t i = 0; i < 8; ++i) pixdim[i] = read_field<float>(raw, 76 + 4 * i, swap);
  const float vox_offset = read_field<float>(raw, 108, swap);
  const float slope = read_field<float>(raw, 112, swap);
  const float inter = read_field<float>(raw, 116, swap);

  if (!(std::isfinite(pixdim[1]) && pixdim[1] > 0.0f && std::isfinite(pixdim[2]) && pixdim[2] > 0.0f)) {
    throw MetadataError("missing in-plane spacing metadata in " + path.string());
  }
  if (std::abs(pixdim[1] - pixdim[2]) > 1e-4f * pixdim[1]) {
    throw MetadataError("anisotropic in-plane spacing is not supported");
  }
  double thickness = dim[0] >= 3 ? pixdim[3] : 0.0;
  if (!(std::isfinite(thickness) && thickness > 0.0)) {
    throw MetadataError("missing slice thickness metadata in " + path.string());
  }

  const std::int64_t width = dim[1];
  const std::int64_t height = dim[2];
  std::int64_t n_frames = 1;
  for (int i = 3; i <= dim[0]; ++i) n_frames *= dim[i];

  const auto skip = static_cast<std::int64_t>(vox_offset) - kHeaderSize;
  if (skip < 0) {
    throw MetadataError("corrupt NIfTI header (vox_offset)");
  }
  if (skip > 0 && gzseek(file.get(), static_cast<z_off_t>(vox_offset), SEEK_SET) < 0) {
    throw IngestionError("cannot seek to voxel data in " + path.string());
  }

  const bool rescale = slope != 0.0f && !(slope == 1.0f && inter == 0.0f);
  const std::size_t frame_bytes = static_cast<std::size_t>(width * height) * voxel_bytes;
  std::vector<char> buffer(frame_bytes);

  Volume volume;
  volume.pixel_spacing = pixdim[1];
  volume.slice_thickness = thickness;
  volume.subject_id = path.filename().string();
  volume.frames.reserve(static_cast<std::size_t>(n_frames));
  for (std::int64_t f = 0; f < n_frames; ++f) {
    if (gzread(file.get(), buffer.data(), static_cast<unsigned>(frame_bytes)) != static_cast<int>(frame_bytes)) {
      throw IngestionError("truncated voxel data in " + path.string());
    }
    Grid frame(height, width);
    for (std::size_t i = 0; i < frame.size(); ++i) {
      double v = decode_voxel(buffer.data() + i * voxel_bytes, type, swap);
      if (rescale) v = v * slope + inter;
      frame.data[i] = static_cast<float>(v);
    }
    volume.frames.push_back(std::move(frame));
  }
  return volume;
}

void save_volume(const Volume& volume, const std::filesystem::path& path) {
  if (volume.frames.empty()) {
    throw ArgumentError("cannot save a volume without frames");
  }
  const auto& first = volume.frames.front();
  for (const auto& f : volume.frames) {
    if (!f.same_shape(first)) throw ShapeError("volume frames must share one shape");
  }

  std::array<char, kHeaderSize> raw{};
  write_field<std::int32_t>(raw, 0, kHeaderSize);
  write_field<char>(raw, 38, 'r');
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(first.width),
                                        static_cast<std::int16_t>(first.height),
                                        static_cast<std::int16_t>(volume.frames.size()), 1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) write_field<std::int16_t>(raw, 40 + 2 * i, dim[i]);
  write_field<std::int16_t>(raw, 70, static_cast<std::int16_t>(NiftiType::kFloat32));
  write_field<std::int16_t>(raw, 72, 32);
  const std::array<float, 8> pixdim{1.0f, static_cast<float>(volume.pixel_spacing),
                                    static_cast<float>(volume.pixel_spacing),
                                    static_cast<float>(volume.slice_thickness), 1.0f, 1.0f, 1.0f, 1.0f};
  for (std::size_t i = 0; i < 8; ++i) write_field<float>(raw, 76 + 4 * i, pixdim[i]);
  write_field<float>(raw, 108, static_cast<float>(kVoxOffset));
  write_field<float>(raw, 112, 1.0f);
  write_field<char>(raw, 123, 2);  // mm
  std::memcpy(raw.data() + 344, "n+1", 4);

  const bool gzip = path.extension() == ".gz";
  GzHandle file(gzopen(path.c_str(), gzip ? "wb6" : "wbT"));
  if (!file) {
    throw IoError("cannot write volume file: " + path.string());
  }
  const std::array<char, 4> extension{};
  bool ok = gzwrite(file.get(), raw.data(), kHeaderSize) == kHeaderSize &&
            gzwrite(file.get(), extension.data(), 4) == 4;
  for (const auto& f : volume.frames) {
    const auto bytes = static_cast<unsigned>(f.size() * sizeof(float));
    ok = ok && gzwrite(file.get(), f.data.data(), bytes) == static_cast<int>(bytes);
  }
  if (!ok) {
    throw IoError("short write to " + path.string());
  }
}

}  // namespace sdnet
