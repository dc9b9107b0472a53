#pragma once

// Flat key=value run configuration. '#' starts a comment; blank lines are
// ignored; unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nagl/error.hpp"
#include "nagl/feature_store.hpp"
#include "nagl/synth.hpp"

namespace nagl {

struct RunConfig {
  std::string train_manifest;
  std::string test_manifest;
  std::size_t k1 = 2;
  std::size_t k2 = 1;
  std::size_t proxies = 25;
  double lambda = 1.0;
  double lr = 1e-5;
  std::size_t epochs = 20;
  std::size_t episodes_per_epoch = 500;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out = "out";
  double fpr_limit = 0.3;
  bool per_image_pixel_auroc = false;
  std::size_t threads = 1;
  std::size_t cache_mb = 4096;
  std::vector<std::size_t> sweep_proxies;  // diag: proxy-count sweep, empty = off
  SynthConfig synth;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config: bad value for " + key + ": '" + v + "'");
  return out;
}

// std::from_chars for double is unavailable on some toolchains; strtod with
// a full-consumption check is equivalent here.
inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d)) {
    throw ConfigError("config: bad value for " + key + ": '" + v + "'");
  }
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

template <typename N>
std::vector<N> parse_list(const std::string& key, const std::string& v) {
  std::vector<N> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<N>(key, item));
  }
  return out;
}

}  // namespace detail

// Applies one key=value pair; throws ConfigError on unknown keys.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  auto sz = [&] { return parse_number<std::size_t>(key, value); };
  auto& s = c.synth;
  if (key == "train_manifest") c.train_manifest = value;
  else if (key == "test_manifest") c.test_manifest = value;
  else if (key == "k1") c.k1 = sz();
  else if (key == "k2") c.k2 = sz();
  else if (key == "proxies") c.proxies = sz();
  else if (key == "lambda") c.lambda = parse_double(key, value);
  else if (key == "lr") c.lr = parse_double(key, value);
  else if (key == "epochs") c.epochs = sz();
  else if (key == "episodes_per_epoch") c.episodes_per_epoch = sz();
  else if (key == "seeds") c.seeds = parse_list<std::uint64_t>(key, value);
  else if (key == "out") c.out = value;
  else if (key == "fpr_limit") c.fpr_limit = parse_double(key, value);
  else if (key == "per_image_pixel_auroc") c.per_image_pixel_auroc = parse_bool(key, value);
  else if (key == "threads") c.threads = sz();
  else if (key == "cache_mb") c.cache_mb = sz();
  else if (key == "sweep_proxies") c.sweep_proxies = parse_list<std::size_t>(key, value);
  else if (key == "synth.categories") s.categories = sz();
  else if (key == "synth.train_categories") s.train_categories = sz();
  else if (key == "synth.train_normals") s.train_normals = sz();
  else if (key == "synth.test_normals") s.test_normals = sz();
  else if (key == "synth.test_abnormals") s.test_abnormals = sz();
  else if (key == "synth.defect_types") s.defect_types = sz();
  else if (key == "synth.distinguish_types") s.distinguish_types = parse_bool(key, value);
  else if (key == "synth.h") s.h = sz();
  else if (key == "synth.w") s.w = sz();
  else if (key == "synth.channels") s.channels = sz();
  else if (key == "synth.prototypes") s.prototypes = sz();
  else if (key == "synth.pixels_per_patch") s.pixels_per_patch = sz();
  else if (key == "synth.noise") s.noise = parse_double(key, value);
  else if (key == "synth.shift") s.shift = parse_double(key, value);
  else if (key == "synth.defect_rank") s.defect_rank = sz();
  else if (key == "synth.seed") s.seed = parse_number<std::uint64_t>(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline RunConfig parse_config(std::string_view text, const std::string& context = "config") {
  RunConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(context + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
      throw ConfigError(context + ":" + std::to_string(line_no) + ": duplicate key '" + key + "' (first on line " +
                        std::to_string(it->second) + ")");
    }
    try {
      set_config_value(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(context + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config: cannot read " + path.string());
  RunConfig c = parse_config(io::read_file(path), path.string());
  // Relative manifest paths are taken relative to the config file.
  const auto base = path.parent_path();
  for (auto* p : {&c.train_manifest, &c.test_manifest}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return c;
}

inline void validate_config(const RunConfig& c) {
  if (c.k1 == 0 || c.k2 == 0) throw ConfigError("config: k1 and k2 must be >= 1");
  if (c.proxies == 0) throw ConfigError("config: proxies must be >= 1");
  if (!(c.lambda >= 0.0)) throw ConfigError("config: lambda must be >= 0");
  if (!(c.lr > 0.0)) throw ConfigError("config: lr must be > 0");
  if (!(c.fpr_limit > 0.0 && c.fpr_limit <= 1.0)) throw ConfigError("config: fpr_limit must be in (0, 1]");
  if (c.seeds.empty()) throw ConfigError("config: seeds must list at least one seed");
  if (c.threads == 0) throw ConfigError("config: threads must be >= 1");
  c.synth.validate();
}

}  // namespace nagl
