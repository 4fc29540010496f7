#include "commands.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "softcir/constraints.hpp"
#include "softcir/dataset.hpp"
#include "softcir/dispatch.hpp"
#include "softcir/error.hpp"
#include "softcir/evalkit.hpp"
#include "softcir/llm_client.hpp"
#include "softcir/manifest.hpp"
#include "softcir/mtpipeline.hpp"
#include "softcir/softfilter.hpp"
#include "softcir/vecstore.hpp"

namespace softcir::cli {

using nlohmann::json;
namespace fs = std::filesystem;

std::string env_for(const std::string& key) {
  std::string out = "SOFT_";
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

namespace {

struct Run {
  ConfigResolver cfg;
  RunManifest manifest;

  Run(const std::string& subcommand, const Common& common) : cfg(common.config), manifest(subcommand) {
    if (!common.config.empty()) manifest.add_input(common.config);
  }

  double real(const std::string& key, std::optional<double> cli, double fallback) {
    return cfg.real(key, cli, env_for(key).c_str(), fallback);
  }
  long integer(const std::string& key, std::optional<long> cli, long fallback) {
    return cfg.integer(key, cli, env_for(key).c_str(), fallback);
  }
  std::string text(const std::string& key, std::optional<std::string> cli, std::string fallback) {
    return cfg.text(key, std::move(cli), env_for(key).c_str(), std::move(fallback));
  }
  bool flag(const std::string& key, bool cli, bool fallback) {
    return cfg.flag(key, cli ? std::optional<bool>(true) : std::nullopt, env_for(key).c_str(), fallback);
  }
  std::vector<std::string> list(const std::string& key, std::optional<std::vector<std::string>> cli,
                                std::vector<std::string> fallback) {
    return cfg.list(key, std::move(cli), env_for(key).c_str(), std::move(fallback));
  }

  std::size_t jobs(const Common& common) {
    const long j = integer("jobs", common.jobs, static_cast<long>(default_jobs()));
    if (j < 1) throw Error(ErrorKind::InvalidArgument, "jobs must be at least 1");
    return static_cast<std::size_t>(j);
  }

  void input(const std::string& path) {
    if (!path.empty()) manifest.add_input(path);
  }
  void store_input(const std::string& path) {
    if (path.empty()) return;
    manifest.add_input(path);
    manifest.add_input(ids_sidecar_path(path));
  }

  // Writes the payload to `out` (or stdout) and the manifest next to it.
  void emit(const std::string& out, const std::string& payload, const Provider* provider = nullptr) {
    if (out.empty()) {
      std::cout << payload;
      std::cout.flush();
      return;
    }
    write_file_atomic(out, payload);
    finish(out, provider);
  }
  void finish(const std::string& out, const Provider* provider = nullptr) {
    manifest.add_output(out);
    manifest.set_config(cfg);
    if (provider) manifest.set_usage(provider->usage_totals());
    manifest.write(RunManifest::path_for(out));
  }
};

double parse_real(const std::string& s, const char* what) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw Error(ErrorKind::InvalidArgument, std::string(what) + " '" + s + "' is not a number");
  return v;
}

std::size_t parse_count(const std::string& s, const char* what) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || v == 0) {
    throw Error(ErrorKind::InvalidArgument, std::string(what) + " '" + s + "' is not a positive integer");
  }
  return v;
}

// ---- provider and images ----

class ImageResolver {
 public:
  ImageResolver(Run& run, const LlmOptions& o) : dir_(o.image_dir), ext_(o.image_ext) {
    if (!o.captions.empty()) {
      run.input(o.captions);
      json j;
      try {
        j = json::parse(read_file(o.captions));
      } catch (const json::exception& e) {
        throw Error(ErrorKind::FormatError, "captions file '" + o.captions + "': " + e.what());
      }
      if (!j.is_object()) throw Error(ErrorKind::FormatError, "captions file must hold a JSON object");
      for (const auto& [id, caption] : j.items()) {
        if (caption.is_string()) captions_[id] = caption.get<std::string>();
      }
    }
  }

  ImageRef operator()(const std::string& id) const {
    ImageRef ref{id, {}, {}};
    if (auto it = captions_.find(id); it != captions_.end()) ref.caption = it->second;
    if (!dir_.empty()) {
      fs::path p = fs::path(dir_) / (id + ext_);
      if (fs::exists(p)) {
        ref.path = p;
      } else {
        std::cerr << "warning: no image file " << p.string() << "; sending its caption instead\n";
      }
    }
    return ref;
  }

 private:
  std::string dir_;
  std::string ext_;
  std::map<std::string, std::string> captions_;
};

std::unique_ptr<Provider> make_provider(Run& run, const LlmOptions& o) {
  const std::string choice = run.text("llm.provider", o.provider, "http");
  if (choice.rfind("mock:", 0) == 0) {
    const std::string path = choice.substr(5);
    run.input(path);
    return ScriptedProvider::from_file(path);
  }
  if (choice != "http") throw Error(ErrorKind::InvalidArgument, "provider must be 'http' or 'mock:<file>', got '" + choice + "'");

  ProviderConfig pc;
  pc.base_url = run.text("llm.base_url", o.base_url, pc.base_url);
  pc.model = run.text("llm.model", o.model, pc.model);
  pc.temperature = run.real("llm.temperature", o.temperature, pc.temperature);
  pc.max_retries = static_cast<int>(run.integer("llm.max_retries", o.max_retries, pc.max_retries));
  const double timeout_s = run.real("llm.timeout_s", o.timeout_s, 60.0);
  pc.timeout = std::chrono::milliseconds(static_cast<long>(timeout_s * 1000.0));
  pc.max_concurrent = static_cast<int>(run.integer("llm.max_concurrent", o.max_concurrent, pc.max_concurrent));
  pc.text_only = run.flag("llm.text_only", o.text_only, false);
  // The key is never accepted on the command line.
  pc.api_key = run.cfg.text("llm.api_key", std::nullopt, "SOFT_LLM_API_KEY", "");
  run.cfg.note("llm.api_key", pc.api_key.empty() ? "" : "<redacted>",
               run.cfg.resolved().at("llm.api_key").source);
  pc.validate();
  return std::make_unique<HttpProvider>(pc);
}

std::size_t max_concurrent(Run& run, const LlmOptions& o) {
  const long n = run.integer("llm.max_concurrent", o.max_concurrent, 4);
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "max_concurrent must be at least 1");
  return static_cast<std::size_t>(n);
}

int parse_retries(Run& run, const LlmOptions& o) {
  const long n = run.integer("llm.parse_retries", o.parse_retries, 2);
  if (n < 0) throw Error(ErrorKind::InvalidArgument, "parse_retries must be non-negative");
  return static_cast<int>(n);
}

std::vector<QueryRecord> load_dataset(Run& run, const std::string& path) {
  if (path.empty()) throw Error(ErrorKind::InvalidArgument, "--dataset is required");
  run.input(path);
  return read_dataset(path);
}

// ---- scoring inputs ----

std::unordered_map<std::string, ScoreMap> score_file(Run& run, const std::string& path) {
  std::unordered_map<std::string, ScoreMap> out;
  if (path.empty()) return out;
  run.input(path);
  for (auto& row : read_base_scores(path)) {
    if (!out.emplace(row.query_id, std::move(row.scores)).second) {
      throw Error(ErrorKind::DuplicateId, "query '" + row.query_id + "' appears twice in '" + path + "'");
    }
  }
  return out;
}

std::vector<double> column_from(const ScoreMap& scores, const std::vector<std::string>& ids, const std::string& qid,
                                const char* what) {
  if (scores.size() != ids.size()) {
    throw Error(ErrorKind::IdSetMismatch, std::string(what) + " scores for query '" + qid + "' cover " +
                                              std::to_string(scores.size()) + " candidates, base has " +
                                              std::to_string(ids.size()));
  }
  std::vector<double> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = scores.find(id);
    if (it == scores.end()) {
      throw Error(ErrorKind::IdSetMismatch, std::string(what) + " scores for query '" + qid + "' lack '" + id + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

struct ScoringSetup {
  ScoredDataset data;
  RerankConfig cfg;
  BaseStyle style = BaseStyle::GenerativeQuery;
};

// Resolves lambda, variant and base style and builds per-query columns.
// With no dataset the base-score file decides the query set.
ScoringSetup load_scoring(Run& run, const ScoringOptions& o, bool need_dataset) {
  ScoringSetup s;
  s.style = parse_base_style(run.text("rerank.base_style", o.base_style, "generative-query"));
  s.cfg.lambda = run.real("rerank.lambda", o.lambda, default_lambda(s.style));
  s.cfg.variant = parse_variant(run.text("rerank.variant", o.variant, "full"));
  s.cfg.minmax_base = run.flag("rerank.minmax_base", o.minmax_base, false);
  fuse(0.0, 0.0, s.cfg.lambda);  // range check

  if (o.base.empty()) throw Error(ErrorKind::InvalidArgument, "--base is required");
  const bool score_files = !o.reward_scores.empty() || !o.penalty_scores.empty();
  const bool stores = !o.images.empty() || !o.texts.empty();
  if (score_files && stores) {
    throw Error(ErrorKind::InvalidArgument, "give either --reward-scores/--penalty-scores or --images/--texts, not both");
  }
  if (stores && (o.images.empty() || o.texts.empty())) {
    throw Error(ErrorKind::InvalidArgument, "--images and --texts go together");
  }
  if (!o.constraints.empty() && !stores) throw Error(ErrorKind::InvalidArgument, "--constraints needs --images and --texts");

  run.input(o.base);
  auto base_rows = read_base_scores(o.base);
  if (need_dataset || !o.dataset.empty()) {
    s.data.queries = load_dataset(run, o.dataset);
  } else {
    for (const auto& row : base_rows) s.data.queries.push_back(QueryRecord{row.query_id, {}, {}, {}, {}});
  }

  const auto rewards = score_file(run, o.reward_scores);
  const auto penalties = score_file(run, o.penalty_scores);

  EmbeddingMatrix images, texts;
  if (stores) {
    run.store_input(o.images);
    run.store_input(o.texts);
    images = read_store(o.images);
    texts = read_store(o.texts);
  }
  std::map<std::string, DualConstraints> constraints;
  if (!o.constraints.empty()) {
    run.input(o.constraints);
    for_each_jsonl(o.constraints, [&](std::size_t, const json& j) {
      constraints[j.at("query_id").get<std::string>()] = constraints_from_json(j);
    });
  }

  std::set<std::string> wanted;
  for (const auto& q : s.data.queries) wanted.insert(q.query_id);
  for (auto& row : base_rows) {
    if (!wanted.count(row.query_id)) continue;
    const auto& qid = row.query_id;
    QueryScores qs;
    if (stores) {
      std::optional<std::span<const float>> pre, pro;
      auto c = constraints.find(qid);
      const bool want_pre = constraints.empty() ? texts.contains(prescriptive_key(qid))
                                                : c != constraints.end() && c->second.has_prescriptive();
      const bool want_pro = constraints.empty() ? texts.contains(proscriptive_key(qid))
                                                : c != constraints.end() && c->second.has_proscriptive();
      if (want_pre) pre = texts.row(prescriptive_key(qid));
      if (want_pro) pro = texts.row(proscriptive_key(qid));
      qs = assemble_query_scores(qid, row.scores, images, pre, pro);
      if (!want_pre || !want_pro) ++s.data.empty_constraint_queries;
    } else {
      qs.query_id = qid;
      for (const auto& [id, _] : row.scores) qs.ids.push_back(id);
      std::sort(qs.ids.begin(), qs.ids.end());
      qs.base = column_from(row.scores, qs.ids, qid, "base");
      qs.reward.assign(qs.ids.size(), 0.0);
      qs.penalty.assign(qs.ids.size(), 0.0);
      auto r = rewards.find(qid);
      auto p = penalties.find(qid);
      if (r != rewards.end()) qs.reward = column_from(r->second, qs.ids, qid, "reward");
      if (p != penalties.end()) qs.penalty = column_from(p->second, qs.ids, qid, "penalty");
      if (r == rewards.end() || p == penalties.end()) ++s.data.empty_constraint_queries;
    }
    if (!s.data.scores.emplace(qid, std::move(qs)).second) {
      throw Error(ErrorKind::DuplicateId, "query '" + qid + "' appears twice in '" + o.base + "'");
    }
  }
  return s;
}

EvalOptions report_options(Run& run, const ReportOptions& o) {
  EvalOptions opts;
  opts.jobs = run.jobs(o.common);
  opts.ks.clear();
  for (const auto& k : run.list("eval.ks", o.ks, {"1", "5", "10", "50"})) opts.ks.push_back(parse_count(k, "k"));
  opts.metrics.clear();
  for (const auto& m : run.list("eval.metrics", o.metrics, {"recall", "recall_subset", "map"})) {
    opts.metrics.push_back(parse_metric(m));
  }
  return opts;
}

std::string render_reports(Run& run, const ReportOptions& o, std::span<const EvalReport> reports) {
  const std::string format = run.text("eval.format", o.json ? std::optional<std::string>("json") : o.format, "csv");
  if (format == "csv") return report_csv(reports);
  if (format == "table") return report_table(reports);
  if (format == "json") return report_json(reports).dump(2) + "\n";
  throw Error(ErrorKind::InvalidArgument, "format must be csv, table or json, got '" + format + "'");
}

void warn_diagnostics(std::span<const EvalReport> reports) {
  if (reports.empty()) return;
  const auto& d = reports.front().diagnostics;
  if (d.negative_base) std::cerr << "note: " << d.negative_base << " candidate scores had a negative base score\n";
  if (d.empty_constraints) std::cerr << "note: " << d.empty_constraints << " queries lack one or both constraints\n";
  if (d.gt_absent) std::cerr << "note: " << d.gt_absent << " queries have no target in their candidate pool\n";
}

template <class T, class Fn>
T with_parse_retries(Provider& provider, const PromptPayload& payload, int retries, const std::string& what, Fn parse) {
  for (int attempt = 1;; ++attempt) {
    const auto reply = provider.chat(payload);
    try {
      return parse(reply.content);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::MalformedResponse && e.kind() != ErrorKind::SchemaViolation) throw;
      std::cerr << "warning: " << what << " attempt " << attempt << "/" << retries + 1 << ": " << e.what()
                << "\n  raw reply: " << reply.content << '\n';
      if (attempt > retries) throw;
    }
  }
}

std::string jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

}  // namespace

// ---- subcommands ----

int run_embed_import(const EmbedImportOptions& o) {
  Run run("embed import", o.common);
  if (o.out.empty()) throw Error(ErrorKind::InvalidArgument, "--out is required");
  run.input(o.input);
  const bool normalize = !run.flag("embed.no_normalize", o.no_normalize, false);

  std::vector<EmbeddingRow> rows;
  auto add_row = [&](const std::string& id, const json& v) {
    if (!v.is_array()) throw Error(ErrorKind::FormatError, "vector for '" + id + "' is not an array");
    EmbeddingRow row{id, {}};
    row.values.reserve(v.size());
    for (const auto& x : v) {
      if (!x.is_number()) throw Error(ErrorKind::FormatError, "vector for '" + id + "' holds a non-number");
      row.values.push_back(x.get<float>());
    }
    rows.push_back(std::move(row));
  };
  auto add_object = [&](const json& j) {
    const auto id = j.at("id").get<std::string>();
    add_row(id, j.contains("vector") ? j.at("vector") : j.at("embedding"));
  };

  if (fs::path(o.input).extension() == ".jsonl") {
    for_each_jsonl(o.input, [&](std::size_t, const json& j) { add_object(j); });
  } else {
    json j;
    try {
      j = json::parse(read_file(o.input));
      if (j.is_array()) {
        for (const auto& item : j) add_object(item);
      } else if (j.is_object()) {
        for (const auto& [id, v] : j.items()) add_row(id, v);
      } else {
        throw Error(ErrorKind::FormatError, "expected a JSON array or object");
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::FormatError, "'" + o.input + "': " + e.what());
    }
  }

  const auto matrix = import_embeddings(rows, normalize);
  write_store(o.out, matrix);
  run.manifest.add_output(ids_sidecar_path(o.out));
  run.finish(o.out);
  std::cerr << "wrote " << matrix.rows() << " rows of width " << matrix.dim() << " to " << o.out << '\n';
  return 0;
}

int run_constraints_generate(const ConstraintsOptions& o) {
  Run run("constraints generate", o.common);
  const auto queries = load_dataset(run, o.dataset);
  auto provider = make_provider(run, o.llm);
  const ImageResolver images(run, o.llm);
  if (!o.cache.empty() && fs::exists(o.cache)) run.input(o.cache);
  ConstraintCache cache(o.cache);

  GenerateOptions gen;
  gen.max_parse_retries = parse_retries(run, o.llm);
  gen.max_concurrent = max_concurrent(run, o.llm);
  const auto results = generate_constraints_batch(
      *provider, queries, [&](const QueryRecord& q) { return images(q.reference_id); }, cache, gen);

  std::vector<json> rows;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    json j = {{"query_id", queries[i].query_id}};
    j.update(to_json(results[i]));
    rows.push_back(std::move(j));
  }
  std::sort(rows.begin(), rows.end(), [](const json& a, const json& b) { return a["query_id"] < b["query_id"]; });
  run.emit(o.out, jsonl(rows), provider.get());
  const auto usage = provider->usage_totals();
  std::cerr << "constraints for " << queries.size() << " queries; provider calls: " << usage.calls
            << "; estimated cost: $" << format_double(usage.cost_usd) << '\n';
  return 0;
}

int run_rerank(const RerankOptions& o) {
  Run run("rerank", o.common);
  auto setup = load_scoring(run, o.scoring, false);
  const long top = run.integer("rerank.top", o.top, 0);
  if (top < 0) throw Error(ErrorKind::InvalidArgument, "top must be non-negative");
  const auto outcomes = rerank_dataset(setup.data, setup.cfg, run.jobs(o.common));

  std::vector<json> rows;
  std::size_t negative = 0;
  for (const auto& q : setup.data.queries) {
    const auto& outcome = outcomes.at(q.query_id);
    json j = run_to_json(outcome, static_cast<std::size_t>(top));
    j["lambda"] = setup.cfg.lambda;
    j["variant"] = to_string(setup.cfg.variant);
    negative += outcome.negative_base_count;
    rows.push_back(std::move(j));
  }
  run.emit(o.out, jsonl(rows));
  if (negative) std::cerr << "note: " << negative << " candidate scores had a negative base score\n";
  return 0;
}

int run_eval(const ReportOptions& o) {
  Run run("eval", o.common);
  const EvalOptions base_opts = report_options(run, o);
  std::vector<EvalReport> reports;
  if (!o.run.empty()) {
    const auto queries = load_dataset(run, o.scoring.dataset);
    run.input(o.run);
    std::unordered_map<std::string, RankedList> runs;
    for (auto& rec : read_run(o.run)) runs.emplace(rec.query_id, std::move(rec.ranked));
    EvalOptions opts = base_opts;
    for_each_jsonl(o.run, [&](std::size_t line, const json& j) {
      if (line != 1) return;
      if (j.contains("lambda")) opts.lambda = j.at("lambda").get<double>();
      if (j.contains("variant")) opts.variant = parse_variant(j.at("variant").get<std::string>());
    });
    reports.push_back(evaluate(runs, queries, opts));
  } else {
    auto setup = load_scoring(run, o.scoring, true);
    const double grid[] = {setup.cfg.lambda};
    if (setup.cfg.minmax_base) {
      EvalOptions opts = base_opts;
      opts.lambda = setup.cfg.lambda;
      opts.variant = setup.cfg.variant;
      auto report = evaluate(rerank_dataset(setup.data, setup.cfg, opts.jobs), setup.data.queries, opts);
      report.diagnostics.empty_constraints = setup.data.empty_constraint_queries;
      reports.push_back(std::move(report));
    } else {
      reports = sweep_lambda(setup.data, grid, setup.cfg.variant, base_opts);
    }
  }
  warn_diagnostics(reports);
  run.emit(o.out, render_reports(run, o, reports));
  return 0;
}

int run_sweep(const ReportOptions& o) {
  Run run("sweep", o.common);
  const EvalOptions opts = report_options(run, o);
  auto setup = load_scoring(run, o.scoring, true);
  if (setup.cfg.minmax_base) throw Error(ErrorKind::InvalidArgument, "sweep does not take --minmax-base");
  std::vector<double> grid;
  for (const auto& l : run.list("sweep.lambdas", o.lambdas, {"0.1", "0.3", "0.5", "0.7", "0.9"})) {
    grid.push_back(parse_real(l, "lambda"));
  }
  const auto reports = sweep_lambda(setup.data, grid, setup.cfg.variant, opts);
  warn_diagnostics(reports);
  run.emit(o.out, render_reports(run, o, reports));
  return 0;
}

int run_ablation(const ReportOptions& o) {
  Run run("ablation", o.common);
  const EvalOptions opts = report_options(run, o);
  auto setup = load_scoring(run, o.scoring, true);
  if (setup.cfg.minmax_base) throw Error(ErrorKind::InvalidArgument, "ablation does not take --minmax-base");
  const auto reports = ablation(setup.data, setup.cfg.lambda, opts);
  warn_diagnostics(reports);
  run.emit(o.out, render_reports(run, o, reports));
  return 0;
}

int run_mt_queries(const MtQueriesOptions& o) {
  Run run("mt queries", o.common);
  const auto queries = load_dataset(run, o.dataset);
  const Domain domain = parse_domain(run.text("stage1.domain", o.domain, "generic"));
  auto provider = make_provider(run, o.llm);
  const ImageResolver images(run, o.llm);
  const int retries = parse_retries(run, o.llm);

  std::vector<json> rows(queries.size());
  parallel_for(queries.size(), max_concurrent(run, o.llm), [&](std::size_t i) {
    const auto& q = queries[i];
    const auto payload = build_stage1_query_prompt(q.mod_texts, domain, images(q.reference_id));
    const auto s = with_parse_retries<Stage1Queries>(*provider, payload, retries, "query '" + q.query_id + "' sentences",
                                                     [](const std::string& raw) { return parse_stage1_queries(raw); });
    rows[i] = {{"query_id", q.query_id}, {"sentence1", s.sentence1}, {"sentence2", s.sentence2}, {"composed", s.composed()}};
  });
  std::sort(rows.begin(), rows.end(), [](const json& a, const json& b) { return a["query_id"] < b["query_id"]; });
  run.emit(o.out, jsonl(rows), provider.get());
  return 0;
}

int run_mt_stage1(const MtStage1Options& o) {
  Run run("mt stage1", o.common);
  Stage1Config cfg;
  const long k = run.integer("stage1.k", o.k, 10);
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be at least 1");
  cfg.k = static_cast<std::size_t>(k);
  cfg.tau = run.real("stage1.tau", o.tau, 0.85);
  if (!(cfg.tau >= 0.0 && cfg.tau <= 1.0)) throw Error(ErrorKind::InvalidArgument, "tau must lie in [0, 1]");
  cfg.strict_threshold = run.flag("stage1.strict_threshold", o.strict_threshold, false);
  cfg.max_parse_retries = parse_retries(run, o.llm);

  const auto queries = load_dataset(run, o.dataset);
  if (o.images.empty() || o.texts.empty()) throw Error(ErrorKind::InvalidArgument, "--images and --texts are required");
  run.store_input(o.images);
  run.store_input(o.texts);
  const auto images = read_store(o.images);
  const auto texts = read_store(o.texts);
  auto provider = make_provider(run, o.llm);
  const ImageResolver resolve(run, o.llm);
  const std::function<ImageRef(const std::string&)> image_for = [&](const std::string& id) { return resolve(id); };

  std::vector<MultiTargetRecord> records(queries.size());
  parallel_for(queries.size(), max_concurrent(run, o.llm), [&](std::size_t i) {
    const auto& q = queries[i];
    const auto s1 = texts.row(sentence1_key(q.query_id));
    std::optional<std::span<const float>> composed;
    if (texts.contains(composed_key(q.query_id))) composed = texts.row(composed_key(q.query_id));
    auto groups = retrieve_candidate_groups(q, images, s1, composed, *q.gt_ids.begin(), cfg);
    records[i] = score_and_select(*provider, q, std::move(groups), cfg, image_for);
  });
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.query.query_id < b.query.query_id; });

  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  run.emit(o.out, out, provider.get());
  const auto stats = multi_target_stats(records);
  std::cerr << "stage 1: " << stats.total << " queries, " << stats.retained << " retained, " << stats.excluded
            << " excluded, mean targets per retained query " << format_double(stats.mean_pool_size) << '\n';
  return 0;
}

int run_mt_stage2(const MtStage2Options& o) {
  Run run("mt stage2", o.common);
  const long seed = run.integer("stage2.seed", o.seed, 0);
  const auto queries = load_dataset(run, o.dataset);
  std::map<std::string, QueryRecord> by_id;
  for (const auto& q : queries) by_id.emplace(q.query_id, q);
  if (o.records.empty()) throw Error(ErrorKind::InvalidArgument, "--records is required");
  run.input(o.records);
  std::vector<MultiTargetRecord> records;
  for_each_jsonl(o.records, [&](std::size_t, const json& j) { records.push_back(multi_target_from_json(j, by_id)); });
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.query.query_id < b.query.query_id; });

  auto provider = make_provider(run, o.llm);
  const ImageResolver images(run, o.llm);
  const int retries = parse_retries(run, o.llm);

  std::vector<const MultiTargetRecord*> eligible;
  std::size_t skipped = 0;
  for (const auto& r : records) {
    if (r.excluded || r.valid_targets.size() < 3) {
      ++skipped;
      continue;
    }
    eligible.push_back(&r);
  }

  std::vector<json> rows(eligible.size());
  parallel_for(eligible.size(), max_concurrent(run, o.llm), [&](std::size_t i) {
    const auto& r = *eligible[i];
    const auto draw = sample_contrastive_triplet(r, static_cast<std::uint64_t>(seed));
    const ImageRef distractors[] = {images(draw.distractors[0]), images(draw.distractors[1])};
    const auto payload =
        build_refinement_prompt(images(r.query.reference_id), images(draw.target), distractors, r.query.mod_texts);
    SingleTargetTriplet t;
    t.query_id = r.query.query_id;
    t.target_id = draw.target;
    t.distractor_ids = draw.distractors;
    t.seed = static_cast<std::uint64_t>(seed);
    t.refined_text = with_parse_retries<std::string>(*provider, payload, retries, "query '" + t.query_id + "' refinement",
                                                     [](const std::string& raw) { return require_single_sentence(raw); });
    rows[i] = to_json(t);
  });
  run.emit(o.out, jsonl(rows), provider.get());
  std::cerr << "stage 2: " << rows.size() << " triplets, " << skipped << " queries skipped (excluded or under 3 targets)\n";
  return 0;
}

}  // namespace softcir::cli
