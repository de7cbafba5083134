#pragma once

#include <fstream>
#include <istream>
#include <string>

#include "ptrorder/training.hpp"

namespace ptrorder {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Flat `key = value` lines; `#` starts a comment. Settings are applied on
// top of `cfg`, so callers layer defaults, file and flags in that order.
inline void read_config(std::istream& in, const std::string& name, TrainConfig& cfg) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(name + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      apply_config_entry(cfg, key, value);
    } catch (const Error& e) {
      throw ConfigError(name + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void read_config_file(const std::string& path, TrainConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  read_config(in, path, cfg);
}

inline void write_config(std::ostream& out, const TrainConfig& cfg) {
  for (const auto& [k, v] : config_entries(cfg)) out << k << " = " << v << '\n';
}

}  // namespace ptrorder
