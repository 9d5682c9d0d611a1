#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "sdnet/latent_lab.hpp"

namespace sdnet {
namespace {

constexpr int kGlyphW = 3;
constexpr int kGlyphH = 5;
constexpr int kPad = 2;

// 3x5 bitmap font, rows top to bottom.
const std::map<char, std::array<const char*, kGlyphH>>& glyphs() {
  static const std::map<char, std::array<const char*, kGlyphH>> font = {
      {'0', {"###", "#.#", "#.#", "#.#", "###"}}, {'1', {".#.", "##.", ".#.", ".#.", "###"}},
      {'2', {"###", "..#", "###", "#..", "###"}}, {'3', {"###", "..#", ".##", "..#", "###"}},
      {'4', {"#.#", "#.#", "###", "..#", "..#"}}, {'5', {"###", "#..", "###", "..#", "###"}},
      {'6', {"###", "#..", "###", "#.#", "###"}}, {'7', {"###", "..#", ".#.", ".#.", ".#."}},
      {'8', {"###", "#.#", "###", "#.#", "###"}}, {'9', {"###", "#.#", "###", "..#", "###"}},
      {'A', {".#.", "#.#", "###", "#.#", "#.#"}}, {'B', {"##.", "#.#", "##.", "#.#", "##."}},
      {'C', {".##", "#..", "#..", "#..", ".##"}}, {'D', {"##.", "#.#", "#.#", "#.#", "##."}},
      {'E', {"###", "#..", "##.", "#..", "###"}}, {'F', {"###", "#..", "##.", "#..", "#.."}},
      {'G', {".##", "#..", "#.#", "#.#", ".##"}}, {'H', {"#.#", "#.#", "###", "#.#", "#.#"}},
      {'I', {"###", ".#.", ".#.", ".#.", "###"}}, {'J', {"..#", "..#", "..#", "#.#", ".#."}},
      {'K', {"#.#", "#.#", "##.", "#.#", "#.#"}}, {'L', {"#..", "#..", "#..", "#..", "###"}},
      {'M', {"#.#", "###", "###", "#.#", "#.#"}}, {'N', {"##.", "#.#", "#.#", "#.#", "#.#"}},
      {'O', {".#.", "#.#", "#.#", "#.#", ".#."}}, {'P', {"##.", "#.#", "##.", "#..", "#.."}},
      {'Q', {".#.", "#.#", "#.#", "##.", ".##"}}, {'R', {"##.", "#.#", "##.", "#.#", "#.#"}},
      {'S', {".##", "#..", ".#.", "..#", "##."}}, {'T', {"###", ".#.", ".#.", ".#.", ".#."}},
      {'U', {"#.#", "#.#", "#.#", "#.#", "###"}}, {'V', {"#.#", "#.#", "#.#", "#.#", ".#."}},
      {'W', {"#.#", "#.#", "###", "###", "#.#"}}, {'X', {"#.#", "#.#", ".#.", "#.#", "#.#"}},
      {'Y', {"#.#", "#.#", ".#.", ".#.", ".#."}}, {'Z', {"###", "..#", ".#.", "#..", "###"}},
      {'_', {"...", "...", "...", "...", "###"}}, {'-', {"...", "...", "###", "...", "..."}},
      {'/', {"..#", "..#", ".#.", "#..", "#.."}}, {'.', {"...", "...", "...", "...", ".#."}},
      {' ', {"...", "...", "...", "...", "..."}},
  };
  return font;
}

std::int64_t text_width(const std::string& text) {
  return static_cast<std::int64_t>(text.size()) * (kGlyphW + 1);
}

class Canvas {
 public:
  Canvas(std::int64_t width, std::int64_t height)
      : width_(width), height_(height), pixels_(static_cast<std::size_t>(width * height), 0) {}

  void text(std::int64_t row, std::int64_t col, const std::string& s) {
    for (char raw : s) {
      const auto c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
      const auto it = glyphs().find(c);
      const auto& g = it != glyphs().end() ? it->second : glyphs().at(' ');
      for (int r = 0; r < kGlyphH; ++r) {
        for (int k = 0; k < kGlyphW; ++k) {
          if (g[r][k] == '#') set(row + r, col + k, 255);
        }
      }
      col += kGlyphW + 1;
    }
  }

  void tile(std::int64_t row, std::int64_t col, const Grid& g) {
    for (std::int64_t r = 0; r < g.height; ++r) {
      for (std::int64_t c = 0; c < g.width; ++c) {
        const double v = std::clamp((static_cast<double>(g.at(r, c)) + 1.0) * 127.5, 0.0, 255.0);
        set(row + r, col + c, static_cast<std::uint8_t>(std::lround(v)));
      }
    }
  }

  const std::vector<std::uint8_t>& pixels() const { return pixels_; }

 private:
  void set(std::int64_t r, std::int64_t c, std::uint8_t v) {
    if (r >= 0 && r < height_ && c >= 0 && c < width_) pixels_[static_cast<std::size_t>(r * width_ + c)] = v;
  }

  std::int64_t width_;
  std::int64_t height_;
  std::vector<std::uint8_t> pixels_;
};

std::string pair_label(const ArithmeticJob& job) { return job.id_i + "/" + job.id_j; }

std::int64_t label_column_width(const std::vector<ArithmeticJob>& jobs, const std::string& tag) {
  std::int64_t w = text_width(tag);
  for (const auto& job : jobs) w = std::max(w, text_width(pair_label(job)));
  return w + 2 * kPad;
}

}  // namespace

FigureLayout figure_layout(const std::vector<ArithmeticJob>& jobs, std::int64_t tile) {
  if (jobs.empty()) throw ArgumentError("emit_figure needs at least one job");
  for (const auto& job : jobs) {
    job.validate();
    if (job.modes != jobs.front().modes) throw ArgumentError("all jobs in one figure must request the same modes");
  }
  FigureLayout layout;
  layout.rows = static_cast<std::int64_t>(jobs.size());
  layout.columns = static_cast<std::int64_t>(jobs.front().modes.size());
  layout.tile = tile;
  layout.width = layout.columns * tile;
  layout.height = kGlyphH + 2 * kPad + layout.rows * tile;
  return layout;
}

FigureLayout emit_figure(NetworkParams& params, const std::vector<ArithmeticJob>& jobs,
                         const std::filesystem::path& path, const std::string& tag) {
  auto layout = figure_layout(jobs, params.arch.image_size);
  const auto left = label_column_width(jobs, tag);
  layout.width += left;
  const std::int64_t header = kGlyphH + 2 * kPad;

  Canvas canvas(layout.width, layout.height);
  canvas.text(kPad, kPad, tag);
  for (std::int64_t c = 0; c < layout.columns; ++c) {
    canvas.text(kPad, left + c * layout.tile + kPad, to_string(jobs.front().modes[static_cast<std::size_t>(c)]));
  }
  for (std::int64_t r = 0; r < layout.rows; ++r) {
    const auto& job = jobs[static_cast<std::size_t>(r)];
    const auto top = header + r * layout.tile;
    canvas.text(top + kPad, kPad, pair_label(job));
    for (std::int64_t c = 0; c < layout.columns; ++c) {
      const auto out = recombine(params, job.x_i, job.x_j, job.modes[static_cast<std::size_t>(c)]);
      canvas.tile(top, left + c * layout.tile, out.pixels);
    }
  }
  write_png_gray(path, layout.width, layout.height, canvas.pixels());
  return layout;
}

void write_png_gray(const std::filesystem::path& path, std::int64_t width, std::int64_t height,
                    const std::vector<std::uint8_t>& pixels) {
  if (width < 1 || height < 1 || static_cast<std::int64_t>(pixels.size()) != width * height) {
    throw ArgumentError("write_png_gray: pixel buffer does not match the image size");
  }
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (fp == nullptr) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("failed to encode PNG " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::int64_t r = 0; r < height; ++r) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError("failed to finish writing " + path.string());
}

}  // namespace sdnet
