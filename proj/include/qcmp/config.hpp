#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace qcmp {

/// Flat `key = value` configuration. One assignment per line, `#` starts a
/// comment. Unknown keys and type mismatches are rejected with the key name
/// in the error message. Precedence: defaults < file < command-line
/// overrides.
class Config {
 public:
  enum class Type { Int, Real, Bool, Str };

  struct KeyDef {
    std::string name;
    Type type;
    std::string default_value;
  };

  /// All documented keys with their defaults.
  static const std::vector<KeyDef>& known_keys();

  /// Config holding every documented default.
  static Config defaults();

  /// Parses a config file over the current values.
  void load_file(const std::string& path);

  /// Parses config text (same format as a file).
  void load_text(const std::string& text, const std::string& origin);

  /// Applies one `key=value` override.
  void apply_override(const std::string& assignment);

  int get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_str(const std::string& key) const;

  void set(const std::string& key, const std::string& value);

  /// Serialized snapshot; reloading it reproduces the identical config.
  std::string snapshot() const;

  bool operator==(const Config& other) const { return values_ == other.values_; }

 private:
  const KeyDef& def_for(const std::string& key) const;
  // std::map keeps snapshots deterministic.
  std::map<std::string, std::string> values_;
};

}  // namespace qcmp
