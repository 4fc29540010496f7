#include "softcir/manifest.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#include "softcir/constraints.hpp"
#include "softcir/dataset.hpp"
#include "softcir/error.hpp"

namespace softcir {
namespace {

using nlohmann::json;

json toml_to_json(const toml::node& node) {
  if (const auto* table = node.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *table) out[std::string(k.str())] = toml_to_json(v);
    return out;
  }
  if (const auto* arr = node.as_array()) {
    json out = json::array();
    for (const auto& v : *arr) out.push_back(toml_to_json(v));
    return out;
  }
  if (auto v = node.value_exact<std::string>()) return *v;
  if (auto v = node.value_exact<std::int64_t>()) return *v;
  if (auto v = node.value_exact<double>()) return *v;
  if (auto v = node.value_exact<bool>()) return *v;
  std::ostringstream os;
  if (auto v = node.value_exact<toml::date>()) os << *v;
  else if (auto v = node.value_exact<toml::time>()) os << *v;
  else if (auto v = node.value_exact<toml::date_time>()) os << *v;
  return os.str();
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error(ErrorKind::IoError, "SHA-256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const char* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, digest, &len);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  Sha256 h;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) h.update(buf, static_cast<std::size_t>(in.gcount()));
  return h.hex();
}

ConfigResolver::ConfigResolver(const std::filesystem::path& toml_path) : file_(json::object()) {
  if (toml_path.empty()) return;
  try {
    file_ = toml_to_json(toml::parse_file(toml_path.string()));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << e.description() << " at " << e.source().begin;
    throw Error(ErrorKind::FormatError, "config '" + toml_path.string() + "': " + os.str());
  }
}

std::optional<json> ConfigResolver::from_file(const std::string& key) const {
  const json* node = &file_;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) return std::nullopt;
    node = &node->at(part);
    if (dot == std::string::npos) return *node;
    start = dot + 1;
  }
}

namespace {

template <class T>
T resolve(std::map<std::string, ResolvedSetting>& out, const std::string& key, std::optional<T> cli, const char* env,
          const std::optional<json>& file_value, T fallback, T (*from_env)(const std::string&)) {
  if (cli) {
    out[key] = {json(*cli), "cli"};
    return *cli;
  }
  if (env) {
    if (const char* raw = std::getenv(env); raw && *raw) {
      T v = from_env(raw);
      out[key] = {json(v), "env"};
      return v;
    }
  }
  if (file_value) {
    try {
      T v = file_value->get<T>();
      out[key] = {json(v), "config"};
      return v;
    } catch (const json::exception&) {
      throw Error(ErrorKind::FormatError, "config key '" + key + "' has the wrong type");
    }
  }
  out[key] = {json(fallback), "default"};
  return fallback;
}

double env_real(const std::string& s) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidArgument, "environment value '" + s + "' is not a number");
  }
}
long env_integer(const std::string& s) {
  try {
    return std::stol(s);
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidArgument, "environment value '" + s + "' is not an integer");
  }
}
std::string env_text(const std::string& s) { return s; }
std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    auto item = trim(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}
bool env_flag(const std::string& s) { return s == "1" || s == "true" || s == "yes" || s == "on"; }

}  // namespace

double ConfigResolver::real(const std::string& key, std::optional<double> cli, const char* env, double fallback) {
  return resolve<double>(resolved_, key, cli, env, from_file(key), fallback, env_real);
}

long ConfigResolver::integer(const std::string& key, std::optional<long> cli, const char* env, long fallback) {
  return resolve<long>(resolved_, key, cli, env, from_file(key), fallback, env_integer);
}

std::string ConfigResolver::text(const std::string& key, std::optional<std::string> cli, const char* env,
                                 std::string fallback) {
  return resolve<std::string>(resolved_, key, std::move(cli), env, from_file(key), std::move(fallback), env_text);
}

bool ConfigResolver::flag(const std::string& key, std::optional<bool> cli, const char* env, bool fallback) {
  return resolve<bool>(resolved_, key, cli, env, from_file(key), fallback, env_flag);
}

std::vector<std::string> ConfigResolver::list(const std::string& key, std::optional<std::vector<std::string>> cli,
                                              const char* env, std::vector<std::string> fallback) {
  auto file_value = from_file(key);
  if (file_value && file_value->is_array()) {
    json items = json::array();
    for (const auto& v : *file_value) items.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    file_value = items;
  } else if (file_value && file_value->is_string()) {
    file_value = json(split_list(file_value->get<std::string>()));
  }
  return resolve<std::vector<std::string>>(resolved_, key, std::move(cli), env, file_value, std::move(fallback),
                                           split_list);
}

void ConfigResolver::note(const std::string& key, json value, std::string source) {
  resolved_[key] = {std::move(value), std::move(source)};
}

RunManifest::RunManifest(std::string subcommand)
    : subcommand_(std::move(subcommand)), started_at_(utc_timestamp()), start_(std::chrono::steady_clock::now()) {}

void RunManifest::add_input(const std::filesystem::path& path) { inputs_.emplace_back(path.string(), sha256_file(path)); }

void RunManifest::add_output(const std::filesystem::path& path) { outputs_.push_back(path.string()); }

void RunManifest::set_config(const ConfigResolver& config) { config_ = config.resolved(); }

void RunManifest::set_usage(const UsageTotals& usage) { usage_ = usage; }

json RunManifest::to_json() const {
  json config = json::object();
  for (const auto& [key, setting] : config_) config[key] = {{"value", setting.value}, {"source", setting.source}};
  json inputs = json::array();
  for (const auto& [path, digest] : inputs_) inputs.push_back({{"path", path}, {"sha256", digest}});
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  json out = {{"subcommand", subcommand_},
              {"tool_version", SOFTCIR_VERSION},
              {"started_at", started_at_},
              {"wall_seconds", wall},
              {"config", config},
              {"inputs", inputs},
              {"outputs", outputs_}};
  if (usage_) {
    out["provider"] = {{"calls", usage_->calls},
                       {"prompt_tokens", usage_->prompt_tokens},
                       {"completion_tokens", usage_->completion_tokens},
                       {"estimated_cost_usd", usage_->cost_usd}};
  }
  return out;
}

void RunManifest::write(const std::filesystem::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

std::filesystem::path RunManifest::path_for(const std::filesystem::path& output) {
  auto p = output;
  p += ".manifest.json";
  return p;
}

}  // namespace softcir
