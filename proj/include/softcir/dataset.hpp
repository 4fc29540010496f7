#pragma once

/// Query records and the JSONL files that move them between tools:
/// the dataset file, base-score files and rerank run files.

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "softcir/softfilter.hpp"
#include "softcir/vecstore.hpp"

namespace softcir {

struct QueryRecord {
  std::string query_id;
  std::string reference_id;
  std::vector<std::string> mod_texts;  // 1 (CIRR-like) or 2 (FashionIQ-like)
  std::set<std::string> gt_ids;
  std::optional<std::set<std::string>> subset_ids;

  /// Throws SchemaViolation when an invariant is broken.
  void validate() const;
};

QueryRecord query_from_json(const nlohmann::json& j);
nlohmann::json to_json(const QueryRecord& q);

struct QueryBaseScores {
  std::string query_id;
  ScoreMap scores;
};

/// One run line: the ranking a system produced for a query.
struct RunRecord {
  std::string query_id;
  RankedList ranked;
  std::vector<ScoreBreakdown> breakdown;  // empty for runs without score detail
};

/// Calls fn(line_number, json) per non-blank line. Parse failures become
/// FormatError with file:line context.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const nlohmann::json&)>& fn);

std::vector<QueryRecord> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const std::vector<QueryRecord>& queries);

/// {"query_id": str, "scores": {candidate_id: float, ...}} per line.
std::vector<QueryBaseScores> read_base_scores(const std::filesystem::path& path);
void write_base_scores(const std::filesystem::path& path, const std::vector<QueryBaseScores>& rows);

nlohmann::json run_to_json(const RerankOutcome& outcome, std::size_t top = 0);
std::vector<RunRecord> read_run(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

/// Shortest round-trip decimal form of a double: deterministic across platforms.
std::string format_double(double value);

}  // namespace softcir
