#pragma once

#include <filesystem>

#include "sdnet/grid.hpp"

namespace sdnet {

/// Reads a NIfTI-1 volume (`.nii` or gzip-compressed `.nii.gz`).
///
/// All 2D slices are returned as frames in storage order (slice index first,
/// then time). The first voxel axis maps to grid columns, the second to rows.
/// In-plane spacing comes from pixdim[1..2] and must be positive and
/// isotropic; there is no fallback value.
///
/// Raises IngestionError when the file is missing or truncated and
/// MetadataError when the header is corrupt or lacks spacing.
Volume load_volume(const std::filesystem::path& path);

/// Writes a float32 NIfTI-1 file. Frames are stored along the third axis.
void save_volume(const Volume& volume, const std::filesystem::path& path);

}  // namespace sdnet
