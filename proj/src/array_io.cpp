#include "sdnet/array_io.hpp"

#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

namespace sdnet {
namespace {
constexpr char kMagic[] = "\x93NUMPY";
}

void save_npy(const Grid& grid, const std::filesystem::path& path) {
  std::ostringstream dict;
  dict << "{'descr': '<f4', 'fortran_order': False, 'shape': (" << grid.height << ", " << grid.width << "), }";
  std::string header = dict.str();
  // magic(6) + version(2) + length(2) + header + '\n' padded to 64 bytes
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(grid.data.data()),
            static_cast<std::streamsize>(grid.data.size() * sizeof(float)));
  if (!out) throw IoError("short write to " + path.string());
}

Grid load_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read " + path.string());
  char preamble[10];
  in.read(preamble, 10);
  if (!in || std::memcmp(preamble, kMagic, 6) != 0 || preamble[6] != 1) {
    throw MetadataError("not a version 1 .npy file: " + path.string());
  }
  const std::size_t len = static_cast<unsigned char>(preamble[8]) | (static_cast<unsigned char>(preamble[9]) << 8);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));

  static const std::regex descr_re(R"('descr':\s*'<f4')");
  static const std::regex order_re(R"('fortran_order':\s*False)");
  static const std::regex shape_re(R"('shape':\s*\((\d+),\s*(\d+)\))");
  std::smatch shape;
  if (!std::regex_search(header, descr_re) || !std::regex_search(header, order_re) ||
      !std::regex_search(header, shape, shape_re)) {
    throw MetadataError("unsupported .npy layout in " + path.string());
  }
  Grid grid(std::stoll(shape[1]), std::stoll(shape[2]));
  in.read(reinterpret_cast<char*>(grid.data.data()), static_cast<std::streamsize>(grid.data.size() * sizeof(float)));
  if (!in) throw IngestionError("truncated .npy data in " + path.string());
  return grid;
}

}  // namespace sdnet
