#pragma once

// Flat key=value run configuration. Blank lines and '#' comments are
// ignored; unknown keys are rejected; missing keys keep their defaults.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dpm/dpm_net.hpp"
#include "dpm/error.hpp"
#include "dpm/features.hpp"
#include "dpm/image.hpp"
#include "dpm/synth.hpp"

namespace dpm {

enum class MappingDirection { visible_to_thermal, thermal_to_visible };

struct RunConfig {
  std::uint64_t seed = 1;
  unsigned threads = 1;
  SynthSpec synth;
  PreprocessConfig preprocess;
  GridSpec grid;
  std::size_t pca_dim = 64;
  std::size_t pca_max_samples = 1'000'000;
  std::size_t max_train_pairs = 1'000'000;
  DpmConfig dpm;
  MappingDirection direction = MappingDirection::visible_to_thermal;

  // Embedded patch width: PCA output plus (nx, ny).
  std::size_t embed_dim() const { return std::min(pca_dim, descriptor_dim(grid.kind)) + 2; }

  EncodeConfig encode() const { return {preprocess, grid}; }

  DpmConfig network() const {
    DpmConfig c = dpm;
    c.input_dim = embed_dim();
    c.seed = seed;
    c.threads = threads;
    return c;
  }

  SynthSpec synth_spec() const {
    SynthSpec s = synth;
    s.seed = seed;
    return s;
  }

  Modality source_modality() const {
    return direction == MappingDirection::visible_to_thermal ? Modality::visible : Modality::thermal;
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream ss(v);
  T out{};
  ss >> out;
  if (!ss || !ss.eof() || (std::is_unsigned_v<T> && v.find('-') != std::string::npos))
    fail(ErrorKind::usage, "config key '" + key + "': invalid value '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::usage, "config key '" + key + "': expected boolean, got '" + v + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) fail(ErrorKind::usage, "config key '" + key + "': empty list");
  return out;
}

}  // namespace config_detail

inline void apply_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace config_detail;
  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"seed", [&](auto& v) { c.seed = parse_number<std::uint64_t>(key, v); }},
      {"threads", [&](auto& v) { c.threads = parse_number<unsigned>(key, v); }},
      {"synth.n_subjects", [&](auto& v) { c.synth.n_subjects = parse_number<std::size_t>(key, v); }},
      {"synth.images_per_subject", [&](auto& v) { c.synth.images_per_subject = parse_number<std::size_t>(key, v); }},
      {"synth.train_fraction", [&](auto& v) { c.synth.train_fraction = parse_number<double>(key, v); }},
      {"synth.gamma", [&](auto& v) { c.synth.gamma = parse_number<double>(key, v); }},
      {"synth.blur_sigma", [&](auto& v) { c.synth.blur_sigma = parse_number<double>(key, v); }},
      {"synth.downsample", [&](auto& v) { c.synth.downsample = parse_number<int>(key, v); }},
      {"synth.noise_sigma", [&](auto& v) { c.synth.noise_sigma = parse_number<double>(key, v); }},
      {"synth.polarity", [&](auto& v) { c.synth.polarity = parse_number<double>(key, v); }},
      {"synth.polarity_falloff", [&](auto& v) { c.synth.polarity_falloff = parse_number<double>(key, v); }},
      {"synth.visible_noise_sigma", [&](auto& v) { c.synth.visible_noise_sigma = parse_number<double>(key, v); }},
      {"synth.width", [&](auto& v) { c.synth.width = parse_number<int>(key, v); }},
      {"synth.height", [&](auto& v) { c.synth.height = parse_number<int>(key, v); }},
      {"preprocess.dog_inner", [&](auto& v) { c.preprocess.dog_inner = parse_number<double>(key, v); }},
      {"preprocess.dog_outer", [&](auto& v) { c.preprocess.dog_outer = parse_number<double>(key, v); }},
      {"preprocess.unit_std", [&](auto& v) { c.preprocess.unit_std = parse_bool(key, v); }},
      {"preprocess.median_on_thermal", [&](auto& v) { c.preprocess.median_on_thermal = parse_bool(key, v); }},
      {"grid.block", [&](auto& v) { c.grid.block = parse_number<int>(key, v); }},
      {"grid.stride", [&](auto& v) { c.grid.stride = parse_number<int>(key, v); }},
      {"grid.scales", [&](auto& v) { c.grid.scales = parse_list<double>(key, v); }},
      {"grid.descriptor", [&](auto& v) { c.grid.kind = parse_descriptor_kind(v); }},
      {"pca.dim", [&](auto& v) { c.pca_dim = parse_number<std::size_t>(key, v); }},
      {"pca.max_samples", [&](auto& v) { c.pca_max_samples = parse_number<std::size_t>(key, v); }},
      {"train.max_pairs", [&](auto& v) { c.max_train_pairs = parse_number<std::size_t>(key, v); }},
      {"dpm.hidden", [&](auto& v) { c.dpm.hidden_sizes = parse_list<std::size_t>(key, v); }},
      {"dpm.lambda", [&](auto& v) { c.dpm.lambda = parse_number<double>(key, v); }},
      {"dpm.learning_rate", [&](auto& v) { c.dpm.learning_rate = parse_number<double>(key, v); }},
      {"dpm.lr_decay", [&](auto& v) { c.dpm.lr_decay = parse_number<double>(key, v); }},
      {"dpm.lr_decay_every", [&](auto& v) { c.dpm.lr_decay_every = parse_number<std::size_t>(key, v); }},
      {"dpm.epochs", [&](auto& v) { c.dpm.epochs = parse_number<std::size_t>(key, v); }},
      {"dpm.batch_size", [&](auto& v) { c.dpm.batch_size = parse_number<std::size_t>(key, v); }},
      {"dpm.direction",
       [&](auto& v) {
         if (v == "visible_to_thermal")
           c.direction = MappingDirection::visible_to_thermal;
         else if (v == "thermal_to_visible")
           c.direction = MappingDirection::thermal_to_visible;
         else
           fail(ErrorKind::usage, "config key '" + key + "': expected visible_to_thermal or thermal_to_visible");
       }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) fail(ErrorKind::usage, "unknown config key '" + key + "'");
  it->second(value);
}

inline RunConfig parse_config(std::istream& in, const std::string& name = "<config>") {
  RunConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::usage, name + ":" + std::to_string(lineno) + ": expected key=value");
    apply_config_value(c, config_detail::trim(line.substr(0, eq)), config_detail::trim(line.substr(eq + 1)));
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, path + ": cannot open config");
  return parse_config(in, path);
}

}  // namespace dpm
