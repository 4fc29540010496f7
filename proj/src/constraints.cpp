#include "softcir/constraints.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>

#include "softcir/dispatch.hpp"
#include "softcir/error.hpp"
#include "softcir/prompts.hpp"

namespace softcir {
namespace {

using nlohmann::json;

std::vector<std::string> string_list(const json& obj, const char* key) {
  if (!obj.contains(key)) throw Error(ErrorKind::SchemaViolation, std::string("missing key '") + key + "'");
  const auto& arr = obj.at(key);
  if (!arr.is_array()) throw Error(ErrorKind::SchemaViolation, std::string("'") + key + "' must be a list");
  std::vector<std::string> out;
  for (const auto& v : arr) {
    if (!v.is_string()) throw Error(ErrorKind::SchemaViolation, std::string("'") + key + "' must hold strings");
    auto entry = trim(v.get<std::string>());
    if (!entry.empty()) out.push_back(std::move(entry));
  }
  return out;
}

std::string string_value(const json& obj, const char* key) {
  if (!obj.contains(key)) throw Error(ErrorKind::SchemaViolation, std::string("missing key '") + key + "'");
  if (!obj.at(key).is_string()) throw Error(ErrorKind::SchemaViolation, std::string("'") + key + "' must be a string");
  return trim(obj.at(key).get<std::string>());
}

void validate(const DualConstraints& c) {
  const auto& a = c.attributes;
  const std::set<std::string> removed(a.remove.begin(), a.remove.end());
  for (const auto& added : a.add) {
    if (removed.count(added)) {
      throw Error(ErrorKind::SchemaViolation, "'" + added + "' is listed under both add and remove");
    }
  }
  if (c.prescriptive.empty() && c.has_prescriptive()) {
    throw Error(ErrorKind::SchemaViolation, "prescriptive_query is empty although keep/add are not");
  }
  if (c.proscriptive.empty() && c.has_proscriptive()) {
    throw Error(ErrorKind::SchemaViolation, "proscriptive_query is empty although remove is not");
  }
}

}  // namespace

json to_json(const DualConstraints& c) {
  return json{{"keep", c.attributes.keep},
              {"add", c.attributes.add},
              {"remove", c.attributes.remove},
              {"prescriptive_query", c.prescriptive},
              {"proscriptive_query", c.proscriptive},
              {"provenance",
               {{"model", c.provenance.model},
                {"prompt_version", c.provenance.prompt_version},
                {"timestamp", c.provenance.timestamp},
                {"text_only_fallback", c.provenance.text_only_fallback}}}};
}

DualConstraints constraints_from_json(const json& j) {
  DualConstraints c;
  c.attributes.keep = string_list(j, "keep");
  c.attributes.add = string_list(j, "add");
  c.attributes.remove = string_list(j, "remove");
  c.prescriptive = string_value(j, "prescriptive_query");
  c.proscriptive = string_value(j, "proscriptive_query");
  if (j.contains("provenance") && j.at("provenance").is_object()) {
    const auto& p = j.at("provenance");
    c.provenance.model = p.value("model", std::string());
    c.provenance.prompt_version = p.value("prompt_version", std::string());
    c.provenance.timestamp = p.value("timestamp", std::string());
    c.provenance.text_only_fallback = p.value("text_only_fallback", false);
  }
  validate(c);
  return c;
}

std::string prescriptive_key(std::string_view query_id) { return std::string(query_id) + ":prescriptive"; }
std::string proscriptive_key(std::string_view query_id) { return std::string(query_id) + ":proscriptive"; }

std::string joined_mod_text(std::span<const std::string> mod_texts) {
  std::string out;
  for (const auto& t : mod_texts) {
    const auto piece = trim(t);
    if (piece.empty()) continue;
    if (!out.empty()) out += " and ";
    out += piece;
  }
  return out;
}

PromptPayload build_dual_constraint_prompt(std::string_view mod_text, const ImageRef& reference) {
  if (trim(mod_text).empty()) throw Error(ErrorKind::EmptyModificationText, "modification text is empty");
  PromptPayload payload;
  payload.text = prompts::render(prompts::kDualConstraintTemplate, {{"mod_text", std::string(mod_text)}});
  payload.images.push_back(reference);
  payload.trailer = std::string(prompts::kDualConstraintFooter);
  payload.prompt_version = std::string(prompts::kDualConstraintVersion);
  return payload;
}

DualConstraints parse_constraint_response(std::string_view raw) {
  const auto obj = extract_json_object(raw);
  if (!obj) throw Error(ErrorKind::MalformedResponse, "no JSON object in model reply");
  DualConstraints c;
  c.attributes.keep = string_list(*obj, "keep");
  c.attributes.add = string_list(*obj, "add");
  c.attributes.remove = string_list(*obj, "remove");
  c.prescriptive = string_value(*obj, "prescriptive_query");
  c.proscriptive = string_value(*obj, "proscriptive_query");
  validate(c);
  return c;
}

ConstraintCache::ConstraintCache(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty() || !std::filesystem::exists(path_)) return;
  for_each_jsonl(path_, [&](std::size_t, const json& line) {
    const auto& k = line.at("key");
    CacheKey key{k.at("query_id").get<std::string>(), k.at("prompt_version").get<std::string>(),
                 k.at("model").get<std::string>()};
    snapshot_[std::move(key)] = constraints_from_json(line.at("value"));
  });
}

std::optional<DualConstraints> ConstraintCache::lookup(const CacheKey& key) const {
  if (auto it = snapshot_.find(key); it != snapshot_.end()) return it->second;
  std::lock_guard lock(write_mutex_);
  if (auto it = fresh_.find(key); it != fresh_.end()) return it->second;
  return std::nullopt;
}

void ConstraintCache::store(const CacheKey& key, const DualConstraints& value, const Usage& usage) {
  std::lock_guard lock(write_mutex_);
  if (!path_.empty()) {
    const json line = {
        {"key", {{"query_id", key.query_id}, {"prompt_version", key.prompt_version}, {"model", key.model}}},
        {"value", to_json(value)},
        {"usage", {{"prompt_tokens", usage.prompt_tokens}, {"completion_tokens", usage.completion_tokens}}}};
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot append to cache '" + path_.string() + "'");
    out << line.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorKind::IoError, "short write to cache '" + path_.string() + "'");
  }
  fresh_[key] = value;
}

std::size_t ConstraintCache::size() const {
  std::lock_guard lock(write_mutex_);
  std::size_t n = snapshot_.size();
  for (const auto& [key, _] : fresh_) n += snapshot_.count(key) ? 0 : 1;
  return n;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

DualConstraints generate_constraints(Provider& provider, const QueryRecord& query, const ImageRef& reference,
                                     ConstraintCache& cache, const GenerateOptions& options) {
  const CacheKey key{query.query_id, std::string(prompts::kDualConstraintVersion), provider.model_name()};
  if (auto hit = cache.lookup(key)) return *hit;

  const auto payload = build_dual_constraint_prompt(joined_mod_text(query.mod_texts), reference);
  const int attempts = 1 + std::max(0, options.max_parse_retries);
  for (int attempt = 1;; ++attempt) {
    const ChatResult reply = provider.chat(payload);
    try {
      DualConstraints c = parse_constraint_response(reply.content);
      c.provenance = {provider.model_name(), payload.prompt_version,
                      options.clock ? options.clock() : utc_timestamp(), reply.text_only_fallback};
      cache.store(key, c, reply.usage);
      return c;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::MalformedResponse && e.kind() != ErrorKind::SchemaViolation) throw;
      std::cerr << "warning: query '" << query.query_id << "' attempt " << attempt << "/" << attempts << ": "
                << e.what() << "\n  raw reply: " << reply.content << '\n';
      if (attempt >= attempts) throw;
    }
  }
}

std::vector<DualConstraints> generate_constraints_batch(
    Provider& provider, std::span<const QueryRecord> queries,
    const std::function<ImageRef(const QueryRecord&)>& reference_for, ConstraintCache& cache,
    const GenerateOptions& options) {
  std::vector<DualConstraints> out(queries.size());
  parallel_for(queries.size(), options.max_concurrent, [&](std::size_t i) {
    out[i] = generate_constraints(provider, queries[i], reference_for(queries[i]), cache, options);
  });
  return out;
}

}  // namespace softcir
