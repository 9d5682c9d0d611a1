#include "sdnet/latent_lab.hpp"

#include <fstream>
#include <map>

namespace sdnet {
namespace {

constexpr std::pair<Recombination, const char*> kNames[] = {
    {Recombination::kSelfI, "self_i"},          {Recombination::kSelfJ, "self_j"},
    {Recombination::kMiZj, "Mi_Zj"},            {Recombination::kMjZi, "Mj_Zi"},
    {Recombination::kNullMaskI, "null_mask_i"}, {Recombination::kNullZI, "null_z_i"},
};

MaskMap zero_mask_like(const ImageSlice& x) {
  return MaskMap{Grid(x.pixels.height, x.pixels.width), true};
}

}  // namespace

std::string to_string(Recombination mode) {
  for (const auto& [m, name] : kNames) {
    if (m == mode) return name;
  }
  return "?";
}

Recombination recombination_from_string(const std::string& name) {
  for (const auto& [m, n] : kNames) {
    if (name == n) return m;
  }
  throw ArgumentError("unknown recombination mode '" + name + "'");
}

ImageSlice recombine(NetworkParams& params, const ImageSlice& x_i, const ImageSlice& x_j, Recombination mode) {
  const auto di = decompose(params, x_i);
  const auto dj = decompose(params, x_j);
  const auto zero_z = LatentCode{std::vector<float>(di.z.values.size(), 0.0f)};
  ImageSlice out;
  switch (mode) {
    case Recombination::kSelfI: out = reconstruct(params, binarize(di.mask), di.z); break;
    case Recombination::kSelfJ: out = reconstruct(params, binarize(dj.mask), dj.z); break;
    case Recombination::kMiZj: out = reconstruct(params, binarize(di.mask), dj.z); break;
    case Recombination::kMjZi: out = reconstruct(params, binarize(dj.mask), di.z); break;
    case Recombination::kNullMaskI: out = reconstruct(params, zero_mask_like(x_i), di.z); break;
    case Recombination::kNullZI: out = reconstruct(params, binarize(di.mask), zero_z); break;
  }
  out.spacing = x_i.spacing;
  return out;
}

ImageSlice recombine(NetworkParams& params, const ImageSlice& x_i, const ImageSlice& x_j, const std::string& mode) {
  return recombine(params, x_i, x_j, recombination_from_string(mode));
}

ImageSlice null_mask(NetworkParams& params, const ImageSlice& x) {
  return recombine(params, x, x, Recombination::kNullMaskI);
}

ImageSlice null_z(NetworkParams& params, const ImageSlice& x) {
  return recombine(params, x, x, Recombination::kNullZI);
}

void ArithmeticJob::validate() const {
  if (modes.empty()) throw ArgumentError("arithmetic job " + id_i + "/" + id_j + " requests no recombinations");
}

JobFile parse_job_file(const nlohmann::json& j) {
  JobFile file;
  try {
    file.tag = j.value("tag", file.tag);
    file.output = j.value("output", file.output.string());
    for (const auto& m : j.at("modes")) file.modes.push_back(recombination_from_string(m.get<std::string>()));
    for (const auto& p : j.at("pairs")) file.pairs.emplace_back(p.at("i").get<std::string>(), p.at("j").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed job file: ") + e.what());
  }
  if (file.modes.empty()) throw ArgumentError("job file requests no recombinations");
  if (file.pairs.empty()) throw ArgumentError("job file lists no image pairs");
  return file;
}

JobFile read_job_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read job file " + path.string());
  try {
    return parse_job_file(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ArgumentError("job file " + path.string() + " is not valid JSON: " + e.what());
  }
}

std::vector<ArithmeticJob> make_jobs(const JobFile& file, const std::vector<LabelledSample>& samples) {
  std::map<std::string, const LabelledSample*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  auto find = [&](const std::string& id) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ArgumentError("unknown sample id '" + id + "' in job file");
    return it->second;
  };
  std::vector<ArithmeticJob> jobs;
  for (const auto& [i, j] : file.pairs) {
    ArithmeticJob job{i, j, find(i)->image, find(j)->image, file.modes, file.output};
    job.validate();
    jobs.push_back(std::move(job));
  }
  return jobs;
}

}  // namespace sdnet
