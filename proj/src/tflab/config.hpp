#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tflab {

enum class KeyType { integer, real, text, flag };

const char* key_type_name(KeyType type);

struct KeySpec {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string help;
  // Integer keys reject negative values unless this is set.
  bool allow_negative = false;
};

// Every key a run understands, in manifest order.
const std::vector<KeySpec>& config_keys();
const KeySpec* find_key(const std::string& name);

// Throws a usage error naming the key when `value` does not parse as `type`.
void check_value(const KeySpec& key, const std::string& value);

// Parses "key = value" lines; '#' starts a comment. Keys are checked against
// the registry.
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin = "config");

class RunConfig {
 public:
  const std::string& text(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;  // non-negative integer
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::uint64_t seed() const;

  // Layer that supplied the value: flag, file, env, preset or default.
  const std::string& source(const std::string& key) const;

  // "key = value" lines in registry order.
  std::string to_text() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  friend RunConfig resolve_config(const std::map<std::string, std::string>&,
                                  const std::optional<std::string>&,
                                  const std::optional<std::string>&);
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> sources_;
};

// Precedence: flags > config file > TFLAB_SEED (seed only) > preset > default.
// `flags` may name the file through the "config" key; `file_text` overrides
// reading it from disk. `env_seed` stands in for the environment variable.
RunConfig resolve_config(const std::map<std::string, std::string>& flags,
                         const std::optional<std::string>& file_text = std::nullopt,
                         const std::optional<std::string>& env_seed = std::nullopt);

// resolve_config with the file read from the "config" flag and the seed read
// from the TFLAB_SEED environment variable.
RunConfig resolve_config_from_env(const std::map<std::string, std::string>& flags);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace tflab
