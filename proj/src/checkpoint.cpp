#include "sdnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "sdnet/errors.hpp"

namespace sdnet {
namespace {

constexpr char kMagic[8] = {'S', 'D', 'N', 'E', 'T', 'C', 'K', 'P'};

std::string dtype_tag(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw CheckpointError(std::string("unsupported tensor dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from(const std::string& tag) {
  if (tag == "f32") return torch::kFloat32;
  if (tag == "f64") return torch::kFloat64;
  if (tag == "i64") return torch::kInt64;
  throw CheckpointError("unknown tensor dtype '" + tag + "'");
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("truncated checkpoint preamble");
  return v;
}

}  // namespace

const torch::Tensor& CheckpointContents::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CheckpointError("checkpoint lacks tensor '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta, const NamedTensors& tensors) {
  std::vector<torch::Tensor> payload;
  payload.reserve(tensors.size());
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    const auto nbytes = static_cast<std::uint64_t>(t.numel()) * t.element_size();
    entries.push_back({{"name", name},
                       {"dtype", dtype_tag(t.scalar_type())},
                       {"shape", t.sizes().vec()},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
    payload.push_back(std::move(t));
  }
  const std::string header = nlohmann::json{{"meta", meta}, {"tensors", entries}}.dump();

  const auto tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : payload) {
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    if (!out) throw CheckpointError("short write to checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointContents read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file: " + path.string());
  }
  const auto version = take<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " != supported " +
                          std::to_string(kCheckpointVersion));
  }
  const auto header_len = take<std::uint64_t>(in);
  const auto file_size = std::filesystem::file_size(path);
  if (header_len > file_size) throw CheckpointError("corrupt checkpoint header length");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError("truncated checkpoint header");

  CheckpointContents contents;
  try {
    const auto doc = nlohmann::json::parse(header);
    contents.meta = doc.at("meta");
    const auto payload_start = static_cast<std::uint64_t>(in.tellg());
    for (const auto& e : doc.at("tensors")) {
      const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
      auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(e.at("dtype").get<std::string>())));
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      if (nbytes != static_cast<std::uint64_t>(t.numel()) * t.element_size() ||
          payload_start + offset + nbytes > file_size) {
        throw CheckpointError("corrupt tensor entry '" + e.at("name").get<std::string>() + "'");
      }
      in.seekg(static_cast<std::streamoff>(payload_start + offset));
      in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
      if (!in) throw CheckpointError("truncated tensor payload");
      contents.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const c10::Error& e) {
    throw CheckpointError(std::string("corrupt checkpoint tensor: ") + e.what_without_backtrace());
  }
  return contents;
}

}  // namespace sdnet
