#pragma once

/// Configuration resolution (flag > environment > TOML file > default) and
/// the run manifest written next to every output.

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "softcir/provider.hpp"

namespace softcir {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct ResolvedSetting {
  nlohmann::json value;
  std::string source;  // "cli", "env", "config" or "default"
};

class ConfigResolver {
 public:
  /// An empty path means no config file. Parse errors raise FormatError.
  explicit ConfigResolver(const std::filesystem::path& toml_path = {});

  /// `key` is a dotted TOML path such as "llm.model". `env` may be null.
  double real(const std::string& key, std::optional<double> cli, const char* env, double fallback);
  long integer(const std::string& key, std::optional<long> cli, const char* env, long fallback);
  std::string text(const std::string& key, std::optional<std::string> cli, const char* env, std::string fallback);
  bool flag(const std::string& key, std::optional<bool> cli, const char* env, bool fallback);
  /// Environment values are comma separated; TOML values may be arrays.
  std::vector<std::string> list(const std::string& key, std::optional<std::vector<std::string>> cli, const char* env,
                                std::vector<std::string> fallback);

  /// Records a value without resolution, e.g. a secret shown redacted.
  void note(const std::string& key, nlohmann::json value, std::string source);

  const std::map<std::string, ResolvedSetting>& resolved() const noexcept { return resolved_; }

 private:
  std::optional<nlohmann::json> from_file(const std::string& key) const;

  nlohmann::json file_;  // TOML converted to JSON
  std::map<std::string, ResolvedSetting> resolved_;
};

class RunManifest {
 public:
  explicit RunManifest(std::string subcommand);

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  void set_config(const ConfigResolver& config);
  void set_usage(const UsageTotals& usage);

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;

  /// `<output>.manifest.json`
  static std::filesystem::path path_for(const std::filesystem::path& output);

 private:
  std::string subcommand_;
  std::string started_at_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::string> outputs_;
  std::map<std::string, ResolvedSetting> config_;
  std::optional<UsageTotals> usage_;
};

}  // namespace softcir
