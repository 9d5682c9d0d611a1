#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdnet/grid.hpp"
#include "sdnet/networks.hpp"

namespace sdnet {

/// Which mask and which latent code feed the reconstructor for a pair (i, j).
enum class Recombination { kSelfI, kSelfJ, kMiZj, kMjZi, kNullMaskI, kNullZI };

std::string to_string(Recombination mode);
/// Accepts self_i, self_j, Mi_Zj, Mj_Zi, null_mask_i, null_z_i.
Recombination recombination_from_string(const std::string& name);

/// Decomposes both slices, takes the binarised mask and z named by `mode` and
/// reconstructs. Runs in inference mode, so it is deterministic.
ImageSlice recombine(NetworkParams& params, const ImageSlice& x_i, const ImageSlice& x_j, Recombination mode);
ImageSlice recombine(NetworkParams& params, const ImageSlice& x_i, const ImageSlice& x_j, const std::string& mode);
/// Reconstruction from an all-zero mask and the slice's own z.
ImageSlice null_mask(NetworkParams& params, const ImageSlice& x);
/// Reconstruction from the slice's binarised mask and an all-zero z.
ImageSlice null_z(NetworkParams& params, const ImageSlice& x);

struct ArithmeticJob {
  std::string id_i;
  std::string id_j;
  ImageSlice x_i;
  ImageSlice x_j;
  std::vector<Recombination> modes;
  std::filesystem::path output;

  /// Raises ArgumentError when `modes` is empty.
  void validate() const;
};

/// JSON job file:
///   {"tag": "test", "output": "fig.png", "modes": ["self_i", ...],
///    "pairs": [{"i": "<sample id>", "j": "<sample id>"}, ...]}
struct JobFile {
  std::string tag = "test";
  std::filesystem::path output = "latent_arithmetic.png";
  std::vector<Recombination> modes;
  std::vector<std::pair<std::string, std::string>> pairs;
};

JobFile parse_job_file(const nlohmann::json& j);
JobFile read_job_file(const std::filesystem::path& path);
/// Resolves sample ids against `samples`; unknown ids raise ArgumentError.
std::vector<ArithmeticJob> make_jobs(const JobFile& file, const std::vector<LabelledSample>& samples);

struct FigureLayout {
  std::int64_t rows = 0;
  std::int64_t columns = 0;
  std::int64_t tile = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;
};

/// Computes the grid without rendering: one row per job, one column per
/// requested recombination (the modes of the first job), a header row of
/// column labels and a left column of pair labels.
FigureLayout figure_layout(const std::vector<ArithmeticJob>& jobs, std::int64_t tile);
/// Renders every job's recombinations into one 8-bit grayscale PNG at `path`
/// and returns the layout. Raises ArgumentError for an empty job list or jobs
/// with differing modes, IoError when the file cannot be written.
FigureLayout emit_figure(NetworkParams& params, const std::vector<ArithmeticJob>& jobs,
                         const std::filesystem::path& path, const std::string& tag = "test");

/// Writes an 8-bit grayscale PNG (row-major `pixels`, width*height bytes).
void write_png_gray(const std::filesystem::path& path, std::int64_t width, std::int64_t height,
                    const std::vector<std::uint8_t>& pixels);

}  // namespace sdnet
