#pragma once

#include <filesystem>

#include "sdnet/grid.hpp"

namespace sdnet {

// NumPy `.npy` (format 1.0, little-endian float32, C order) storage for 2D grids.
void save_npy(const Grid& grid, const std::filesystem::path& path);
Grid load_npy(const std::filesystem::path& path);

}  // namespace sdnet
