#include "softcir/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <system_error>

#include "softcir/error.hpp"

namespace softcir {
namespace {

using nlohmann::json;

Error schema(const std::string& what) { return Error(ErrorKind::SchemaViolation, what); }

std::set<std::string> id_set(const json& arr, const char* field) {
  if (!arr.is_array()) throw schema(std::string(field) + " must be an array of strings");
  std::set<std::string> out;
  for (const auto& v : arr) {
    if (!v.is_string()) throw schema(std::string(field) + " must be an array of strings");
    out.insert(v.get<std::string>());
  }
  return out;
}

std::string string_field(const json& j, const char* field) {
  if (!j.contains(field) || !j.at(field).is_string()) throw schema(std::string("missing string field '") + field + "'");
  return j.at(field).get<std::string>();
}

}  // namespace

void QueryRecord::validate() const {
  if (query_id.empty()) throw schema("query_id is empty");
  if (mod_texts.empty() || mod_texts.size() > 2) {
    throw schema("query '" + query_id + "' needs 1 or 2 modification texts");
  }
  if (gt_ids.empty()) throw schema("query '" + query_id + "' has no ground-truth targets");
  if (subset_ids) {
    bool overlap = false;
    for (const auto& g : gt_ids) overlap = overlap || subset_ids->count(g) > 0;
    if (!overlap) throw schema("query '" + query_id + "' subset contains no ground-truth target");
  }
}

QueryRecord query_from_json(const json& j) {
  if (!j.is_object()) throw schema("dataset line is not a JSON object");
  QueryRecord q;
  q.query_id = string_field(j, "query_id");
  q.reference_id = string_field(j, "reference_id");
  if (!j.contains("mod_texts") || !j.at("mod_texts").is_array()) throw schema("missing array field 'mod_texts'");
  for (const auto& t : j.at("mod_texts")) {
    if (!t.is_string()) throw schema("mod_texts must hold strings");
    q.mod_texts.push_back(t.get<std::string>());
  }
  if (!j.contains("gt_ids")) throw schema("missing field 'gt_ids'");
  q.gt_ids = id_set(j.at("gt_ids"), "gt_ids");
  if (j.contains("subset_ids") && !j.at("subset_ids").is_null()) q.subset_ids = id_set(j.at("subset_ids"), "subset_ids");
  q.validate();
  return q;
}

json to_json(const QueryRecord& q) {
  json j = {{"query_id", q.query_id},
            {"reference_id", q.reference_id},
            {"mod_texts", q.mod_texts},
            {"gt_ids", std::vector<std::string>(q.gt_ids.begin(), q.gt_ids.end())}};
  if (q.subset_ids) j["subset_ids"] = std::vector<std::string>(q.subset_ids->begin(), q.subset_ids->end());
  return j;
}

void for_each_jsonl(const std::filesystem::path& path, const std::function<void(std::size_t, const json&)>& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) {
      throw Error(ErrorKind::FormatError, path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
    }
    try {
      fn(line_no, j);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::SchemaViolation || e.kind() == ErrorKind::FormatError) {
        throw Error(ErrorKind::FormatError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      throw;
    } catch (const json::exception& e) {
      throw Error(ErrorKind::FormatError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::vector<QueryRecord> read_dataset(const std::filesystem::path& path) {
  std::vector<QueryRecord> out;
  std::set<std::string> seen;
  for_each_jsonl(path, [&](std::size_t, const json& j) {
    auto q = query_from_json(j);
    if (!seen.insert(q.query_id).second) throw Error(ErrorKind::DuplicateId, "query '" + q.query_id + "' repeats");
    out.push_back(std::move(q));
  });
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<QueryRecord>& queries) {
  std::string body;
  for (const auto& q : queries) body += to_json(q).dump() + "\n";
  write_file_atomic(path, body);
}

std::vector<QueryBaseScores> read_base_scores(const std::filesystem::path& path) {
  std::vector<QueryBaseScores> out;
  std::set<std::string> seen;
  for_each_jsonl(path, [&](std::size_t, const json& j) {
    QueryBaseScores row;
    row.query_id = string_field(j, "query_id");
    if (!j.contains("scores") || !j.at("scores").is_object()) throw schema("missing object field 'scores'");
    row.scores.reserve(j.at("scores").size());
    for (const auto& [id, v] : j.at("scores").items()) {
      if (!v.is_number()) throw schema("score for '" + id + "' is not a number");
      row.scores.emplace(id, v.get<double>());
    }
    if (!seen.insert(row.query_id).second) {
      throw Error(ErrorKind::DuplicateId, "query '" + row.query_id + "' repeats in score file");
    }
    out.push_back(std::move(row));
  });
  return out;
}

void write_base_scores(const std::filesystem::path& path, const std::vector<QueryBaseScores>& rows) {
  std::string body;
  for (const auto& row : rows) {
    // nlohmann's default object type is ordered by key, so output is stable.
    json scores = json::object();
    for (const auto& [id, s] : row.scores) scores[id] = s;
    body += json{{"query_id", row.query_id}, {"scores", scores}}.dump() + "\n";
  }
  write_file_atomic(path, body);
}

json run_to_json(const RerankOutcome& outcome, std::size_t top) {
  json ranking = json::array();
  const std::size_t n = top == 0 ? outcome.breakdown.size() : std::min(top, outcome.breakdown.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = outcome.breakdown[i];
    ranking.push_back({{"id", b.id},
                       {"score", b.final_score},
                       {"base", b.base},
                       {"reward", b.reward},
                       {"penalty", b.penalty},
                       {"soft", b.soft}});
  }
  return json{{"query_id", outcome.ranked.query_id},
              {"ranking", ranking},
              {"negative_base", outcome.negative_base_count}};
}

std::vector<RunRecord> read_run(const std::filesystem::path& path) {
  std::vector<RunRecord> out;
  for_each_jsonl(path, [&](std::size_t, const json& j) {
    RunRecord r;
    r.query_id = string_field(j, "query_id");
    r.ranked.query_id = r.query_id;
    if (!j.contains("ranking") || !j.at("ranking").is_array()) throw schema("missing array field 'ranking'");
    for (const auto& e : j.at("ranking")) {
      RankedEntry entry{string_field(e, "id"), e.value("score", 0.0)};
      if (e.contains("base")) {
        r.breakdown.push_back({entry.id, e.value("base", 0.0), e.value("reward", 0.0), e.value("penalty", 0.0),
                               e.value("soft", 0.0), entry.score});
      }
      r.ranked.entries.push_back(std::move(entry));
    }
    out.push_back(std::move(r));
  });
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::IoError, "short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot move '" + tmp.string() + "' into place: " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

}  // namespace softcir
