#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "eitkit/common.hpp"

namespace eitkit {

/// Plain key=value run configuration. Keys are validated against a known set
/// so that typos fail loudly; every CLI run writes its resolved config next
/// to its outputs, and that file can be fed back via --config to reproduce
/// the run.
class RunConfig {
 public:
  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;

  void set(const std::string& key, std::string value);
  void set_double(const std::string& key, double value);
  void set_int(const std::string& key, std::int64_t value);

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

 private:
  std::vector<std::pair<std::string, std::string>> items_;  // insertion-ordered
};

/// Parses `key=value` lines; '#' starts a comment; unknown keys are rejected.
RunConfig parse_config_text(const std::string& text, const std::set<std::string>& known_keys);
RunConfig load_config_file(const std::filesystem::path& path, const std::set<std::string>& known_keys);
void write_config_file(const std::filesystem::path& path, const RunConfig& config);

}  // namespace eitkit
