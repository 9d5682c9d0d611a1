#include "sdnet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>

namespace sdnet {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("invalid value '" + text + "' for key '" + key + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean '" + text + "' for key '" + key + "'");
}

using Setter = std::function<void(TrainConfig&, const std::string& key, const std::string& value)>;
using Getter = std::function<std::string(const TrainConfig&)>;

struct Field {
  Getter get;
  Setter set;
};

template <typename T>
Field int_field(T TrainConfig::*member) {
  return {[member](const TrainConfig& c) { return std::to_string(c.*member); },
          [member](TrainConfig& c, const std::string& k, const std::string& v) { c.*member = parse_number<T>(k, v); }};
}

template <typename S, typename T>
Field nested_int(S TrainConfig::*outer, T S::*member) {
  return {[=](const TrainConfig& c) { return std::to_string(c.*outer.*member); },
          [=](TrainConfig& c, const std::string& k, const std::string& v) { c.*outer.*member = parse_number<T>(k, v); }};
}

template <typename S>
Field nested_double(S TrainConfig::*outer, double S::*member) {
  return {[=](const TrainConfig& c) { return fmt(c.*outer.*member); },
          [=](TrainConfig& c, const std::string& k, const std::string& v) {
            c.*outer.*member = parse_number<double>(k, v);
          }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"variant",
       {[](const TrainConfig& c) { return to_string(c.variant); },
        [](TrainConfig& c, const std::string&, const std::string& v) { c.variant = variant_from_string(v); }}},
      {"n_labelled", int_field(&TrainConfig::n_labelled)},
      {"n_unlabelled", int_field(&TrainConfig::n_unlabelled)},
      {"batch_size", int_field(&TrainConfig::batch_size)},
      {"epochs", int_field(&TrainConfig::epochs)},
      {"labelled_steps", int_field(&TrainConfig::labelled_steps)},
      {"max_interleave", int_field(&TrainConfig::max_interleave)},
      {"seed", int_field(&TrainConfig::seed)},
      {"checkpoint_every", int_field(&TrainConfig::checkpoint_every)},
      {"freeze_discriminators",
       {[](const TrainConfig& c) { return std::string(c.freeze_discriminators ? "true" : "false"); },
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.freeze_discriminators = parse_bool(k, v); }}},
      {"optimizer.method",
       {[](const TrainConfig& c) { return c.optimizer.method; },
        [](TrainConfig& c, const std::string&, const std::string& v) { c.optimizer.method = v; }}},
      {"optimizer.lr", nested_double(&TrainConfig::optimizer, &OptimizerSettings::lr)},
      {"optimizer.beta1", nested_double(&TrainConfig::optimizer, &OptimizerSettings::beta1)},
      {"optimizer.beta2", nested_double(&TrainConfig::optimizer, &OptimizerSettings::beta2)},
      {"weights.lambda1", nested_double(&TrainConfig::weights, &LossWeights::mask_dice)},
      {"weights.lambda2", nested_double(&TrainConfig::weights, &LossWeights::mask_adversarial)},
      {"weights.lambda3", nested_double(&TrainConfig::weights, &LossWeights::reconstruction)},
      {"weights.lambda4", nested_double(&TrainConfig::weights, &LossWeights::image_supervised)},
      {"weights.lambda5", nested_double(&TrainConfig::weights, &LossWeights::image_adversarial)},
      {"arch.image_size", nested_int(&TrainConfig::arch, &ArchDescriptor::image_size)},
      {"arch.levels", nested_int(&TrainConfig::arch, &ArchDescriptor::levels)},
      {"arch.base_width", nested_int(&TrainConfig::arch, &ArchDescriptor::base_width)},
      {"arch.z_dim", nested_int(&TrainConfig::arch, &ArchDescriptor::z_dim)},
      {"arch.recon_width", nested_int(&TrainConfig::arch, &ArchDescriptor::recon_width)},
      {"arch.res_blocks", nested_int(&TrainConfig::arch, &ArchDescriptor::res_blocks)},
      {"arch.z_grid", nested_int(&TrainConfig::arch, &ArchDescriptor::z_grid)},
      {"arch.disc_width", nested_int(&TrainConfig::arch, &ArchDescriptor::disc_width)},
      {"arch.disc_layers", nested_int(&TrainConfig::arch, &ArchDescriptor::disc_layers)},
      {"arch.leaky_slope", nested_double(&TrainConfig::arch, &ArchDescriptor::leaky_slope)},
      {"data.dir",
       {[](const TrainConfig& c) { return c.data_dir; },
        [](TrainConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }}},
      {"data.fold", int_field(&TrainConfig::fold)},
      {"data.folds", int_field(&TrainConfig::folds)},
      {"data.split_seed", int_field(&TrainConfig::split_seed)},
  };
  return table;
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(text.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    kv[key] = trim(text.substr(eq + 1));
  }
  return kv;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse_key_values(in);
}

void write_key_values(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

void apply_override(KeyValues& kv, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  kv[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

KeyValues to_key_values(const TrainConfig& config) {
  KeyValues kv;
  for (const auto& [key, field] : fields()) kv[key] = field.get(config);
  return kv;
}

TrainConfig train_config_from(const KeyValues& kv) {
  TrainConfig config;
  for (const auto& [key, value] : kv) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second.set(config, key, value);
    } catch (const ArgumentError& e) {
      throw ConfigError("key '" + key + "': " + e.what());
    }
  }
  return config;
}

}  // namespace sdnet
