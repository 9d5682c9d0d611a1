#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace sdnet {

/// Binary container used for both parameter files and full training states.
///
/// Layout (all integers little-endian):
///
///     bytes 0..7    magic "SDNETCKP"
///     bytes 8..11   uint32 format version (kCheckpointVersion)
///     bytes 12..19  uint64 header length L
///     next L bytes  UTF-8 JSON header
///     remainder     tensor payload, concatenated in header order
///
/// The header holds caller metadata under "meta" and one entry per tensor in
/// "tensors": {"name", "dtype" (f32|f64|i64), "shape", "offset", "nbytes"},
/// offsets relative to the payload start. Tensors are written as contiguous
/// CPU buffers, so a write/read round trip is bit-exact and identical inputs
/// produce identical files.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

struct CheckpointContents {
  nlohmann::json meta;
  NamedTensors tensors;

  /// Tensor by name; raises CheckpointError when absent.
  const torch::Tensor& get(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta, const NamedTensors& tensors);

/// Raises CheckpointError for a missing, truncated, corrupt or
/// version-mismatched file.
CheckpointContents read_checkpoint(const std::filesystem::path& path);

}  // namespace sdnet
