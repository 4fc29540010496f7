#pragma once

/// Dual textual constraints: the chat model classifies attributes into
/// keep / add / remove lists and writes a prescriptive caption (keep + add)
/// and a proscriptive caption (remove). Results are cached on disk.

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "softcir/dataset.hpp"
#include "softcir/provider.hpp"

namespace softcir {

struct AttributeClassification {
  std::vector<std::string> keep;
  std::vector<std::string> add;
  std::vector<std::string> remove;

  bool operator==(const AttributeClassification&) const = default;
};

struct Provenance {
  std::string model;
  std::string prompt_version;
  std::string timestamp;  // ISO-8601 UTC
  bool text_only_fallback = false;

  bool operator==(const Provenance&) const = default;
};

struct DualConstraints {
  AttributeClassification attributes;
  std::string prescriptive;
  std::string proscriptive;
  Provenance provenance;

  /// A constraint is present when its source attribute lists are non-empty.
  bool has_prescriptive() const noexcept { return !attributes.keep.empty() || !attributes.add.empty(); }
  bool has_proscriptive() const noexcept { return !attributes.remove.empty(); }

  bool operator==(const DualConstraints&) const = default;
};

nlohmann::json to_json(const DualConstraints& c);
DualConstraints constraints_from_json(const nlohmann::json& j);

/// FashionIQ-style queries carry two captions; they are joined with " and ".
std::string joined_mod_text(std::span<const std::string> mod_texts);

/// Text-store row ids for a query's embedded constraint captions.
std::string prescriptive_key(std::string_view query_id);
std::string proscriptive_key(std::string_view query_id);

/// Renders the dual-constraint extraction template for one query. Throws
/// EmptyModificationText.
PromptPayload build_dual_constraint_prompt(std::string_view mod_text, const ImageRef& reference);

/// Pulls the five-key JSON object out of a model reply and validates it.
/// Throws MalformedResponse (no object) or SchemaViolation. Provenance is
/// left empty.
DualConstraints parse_constraint_response(std::string_view raw);

struct CacheKey {
  std::string query_id;
  std::string prompt_version;
  std::string model;

  auto operator<=>(const CacheKey&) const = default;
};

/// Append-only JSONL cache; the last line for a key wins. The file is read
/// once at construction into an immutable snapshot. New entries are appended
/// under a single writer lock.
class ConstraintCache {
 public:
  /// An empty path gives a memory-only cache.
  explicit ConstraintCache(std::filesystem::path path = {});

  std::optional<DualConstraints> lookup(const CacheKey& key) const;
  void store(const CacheKey& key, const DualConstraints& value, const Usage& usage);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  std::map<CacheKey, DualConstraints> snapshot_;
  mutable std::mutex write_mutex_;
  std::map<CacheKey, DualConstraints> fresh_;
};

struct GenerateOptions {
  /// Extra attempts when the reply cannot be parsed.
  int max_parse_retries = 2;
  std::size_t max_concurrent = 4;
  std::function<std::string()> clock;  // defaults to the wall clock
};

std::string utc_timestamp();

/// Cache hit short-circuits the provider. On a miss the prompt is built,
/// sent, parsed and validated, then persisted.
DualConstraints generate_constraints(Provider& provider, const QueryRecord& query, const ImageRef& reference,
                                     ConstraintCache& cache, const GenerateOptions& options = {});

/// Bounded-concurrency batch form; results follow the input order.
std::vector<DualConstraints> generate_constraints_batch(
    Provider& provider, std::span<const QueryRecord> queries,
    const std::function<ImageRef(const QueryRecord&)>& reference_for, ConstraintCache& cache,
    const GenerateOptions& options = {});

}  // namespace softcir
