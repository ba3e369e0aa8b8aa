#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace rewardrag::config {

using KeyValueMap = std::map<std::string, std::string>;

/// Minimal TOML-style reader: [section] headers, key = value pairs,
/// # comments, optional double quotes around values. Keys are flattened to
/// "section.key".
KeyValueMap parse_config_text(const std::string& content,
                              const std::string& origin = "<string>");
KeyValueMap parse_config_file(const std::string& path);

/// The fully-resolved pipeline configuration: file values, then overrides
/// (flags win), then defaults for everything untouched. After resolve() every
/// known key is present — there are no hidden defaults at run time.
class PipelineConfig {
 public:
  static PipelineConfig resolve(const KeyValueMap& file_values,
                                const KeyValueMap& overrides);

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_seed(const std::string& key) const;

  /// Every key with its materialized value.
  const KeyValueMap& materialized() const { return values_; }

  /// FNV hash over the sorted key=value lines for keys matching any of the
  /// given section prefixes ("encoder." etc.). Secret-bearing keys
  /// (*.api_key) are excluded so credentials never leak into manifests.
  std::string section_hash(const std::vector<std::string>& prefixes) const;

 private:
  KeyValueMap values_;
};

/// All known keys and their defaults (single source of truth for resolve()).
const KeyValueMap& default_config();

}  // namespace rewardrag::config
