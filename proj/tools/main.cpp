#include <deque>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"
#include "json.hpp"
#include "softcir/error.hpp"

using namespace softcir::cli;

namespace {

std::string keyed_help(const std::string& what, const std::string& key) {
  return what + " [config " + key + ", env " + env_for(key) + "]";
}

template <class T>
CLI::Option* keyed(CLI::App* cmd, const std::string& flag, std::optional<T>& target, const std::string& key,
                   const std::string& fallback, const std::string& what) {
  auto* opt = cmd->add_option(flag, target, keyed_help(what, key));
  if (!fallback.empty()) opt->default_str(fallback);
  return opt;
}

CLI::Option* keyed_flag(CLI::App* cmd, const std::string& flag, bool& target, const std::string& key,
                        const std::string& what) {
  return cmd->add_flag(flag, target, keyed_help(what, key) + " (default: off)");
}

// List-valued options are parsed into plain vectors and moved into the
// optionals afterwards so "not given" stays distinguishable.
struct ListSlot {
  std::vector<std::string> values;
  std::optional<std::vector<std::string>>* target;
};
std::deque<ListSlot> g_lists;

CLI::Option* keyed_list(CLI::App* cmd, const std::string& flag, std::optional<std::vector<std::string>>& target,
                        const std::string& key, const std::string& fallback, const std::string& what) {
  auto& slot = g_lists.emplace_back(ListSlot{{}, &target});
  return cmd->add_option(flag, slot.values, keyed_help(what + " (comma separated)", key))
      ->delimiter(',')
      ->default_str(fallback);
}

void add_common(CLI::App* cmd, Common& c, bool jobs) {
  cmd->add_option("--config", c.config, "TOML config file")->check(CLI::ExistingFile);
  if (jobs) keyed(cmd, "--jobs", c.jobs, "jobs", "logical CPUs", "Worker threads for scoring");
}

void add_llm(CLI::App* cmd, LlmOptions& o) {
  keyed(cmd, "--provider", o.provider, "llm.provider", "http", "Chat provider: http or mock:<scripted.json>");
  keyed(cmd, "--base-url", o.base_url, "llm.base_url", "https://api.openai.com/v1",
        "OpenAI-compatible endpoint (also SOFT_LLM_BASE_URL)");
  keyed(cmd, "--model", o.model, "llm.model", "gpt-4o", "Chat model name");
  keyed(cmd, "--temperature", o.temperature, "llm.temperature", "0.0", "Sampling temperature");
  keyed(cmd, "--max-retries", o.max_retries, "llm.max_retries", "3", "HTTP retries on 429/5xx/transport errors");
  keyed(cmd, "--timeout", o.timeout_s, "llm.timeout_s", "60", "Per-attempt timeout in seconds");
  keyed(cmd, "--max-concurrent", o.max_concurrent, "llm.max_concurrent", "4", "Maximum in-flight provider requests");
  keyed(cmd, "--parse-retries", o.parse_retries, "llm.parse_retries", "2", "Re-asks after an unparseable reply");
  keyed_flag(cmd, "--text-only", o.text_only, "llm.text_only", "Send image captions instead of image data");
  cmd->add_option("--image-dir", o.image_dir, "Directory holding <id><ext> image files");
  cmd->add_option("--image-ext", o.image_ext, "Image file extension")->capture_default_str();
  cmd->add_option("--captions", o.captions, "JSON object of image id to caption (text-only fallback)")
      ->check(CLI::ExistingFile);
  cmd->footer("The API key is read from SOFT_LLM_API_KEY (or llm.api_key in the config file).");
}

void add_scoring(CLI::App* cmd, ScoringOptions& s, bool lambda) {
  cmd->add_option("--base", s.base, "Base-score JSONL: {\"query_id\", \"scores\": {id: score}}")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--reward-scores", s.reward_scores, "Precomputed s_reward JSONL (same shape as --base)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--penalty-scores", s.penalty_scores, "Precomputed s_penalty JSONL (same shape as --base)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--images", s.images, "Candidate image SFTEMB1 store")->check(CLI::ExistingFile);
  cmd->add_option("--texts", s.texts, "Constraint text SFTEMB1 store, rows <qid>:prescriptive / <qid>:proscriptive")
      ->check(CLI::ExistingFile);
  cmd->add_option("--constraints", s.constraints, "Generated constraints JSONL; empty lists disable a term")
      ->check(CLI::ExistingFile);
  keyed(cmd, "--base-style", s.base_style, "rerank.base_style", "generative-query",
        "Base retriever style: generative-query (lambda 1.0) or inversion (lambda 0.2)");
  if (lambda) {
    keyed(cmd, "--lambda", s.lambda, "rerank.lambda", "1.0 for generative-query, 0.2 for inversion",
          "Fusion weight in [0, 1]");
  }
  keyed(cmd, "--variant", s.variant, "rerank.variant", "full", "Score variant: base, reward, penalty or full");
  keyed_flag(cmd, "--minmax-base", s.minmax_base, "rerank.minmax_base", "Min-max rescale base scores per query");
}

void add_report(CLI::App* cmd, ReportOptions& r) {
  keyed_list(cmd, "--ks", r.ks, "eval.ks", "1,5,10,50", "Cutoffs K");
  keyed_list(cmd, "--metrics", r.metrics, "eval.metrics", "recall,recall_subset,map", "Metrics");
  keyed(cmd, "--format", r.format, "eval.format", "csv", "Report format: csv, table or json");
  cmd->add_flag("--json", r.json, "Shorthand for --format json");
  cmd->add_option("--out", r.out, "Report file (default: standard output)");
}

// Usage text of the deepest subcommand that was reached.
const CLI::App* deepest(const CLI::App& app) {
  const CLI::App* cur = &app;
  while (true) {
    const auto subs = cur->get_subcommands();
    if (subs.empty()) return cur;
    cur = subs.front();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft constraint re-ranking toolkit for composed image retrieval.", "softcir"};
  app.set_version_flag("--version", SOFTCIR_VERSION);
  app.require_subcommand(1);
  app.get_formatter()->column_width(34);

  // embed import
  EmbedImportOptions embed;
  auto* embed_cmd = app.add_subcommand("embed", "Embedding store tools")->require_subcommand(1);
  auto* embed_import = embed_cmd->add_subcommand("import", "Import JSON/JSONL vectors into an SFTEMB1 store");
  embed_import->add_option("input", embed.input, "Rows as JSONL {\"id\", \"vector\"}, a JSON array of those, or {id: vector}")
      ->required()
      ->check(CLI::ExistingFile);
  embed_import->add_option("--out", embed.out, "Output store path (sidecar <stem>.ids.json)")->required();
  embed_import->add_flag("--no-normalize", embed.no_normalize,
                         keyed_help("Keep raw vectors instead of unit-normalizing", "embed.no_normalize"));
  add_common(embed_import, embed.common, false);

  // constraints generate
  ConstraintsOptions cons;
  auto* cons_cmd = app.add_subcommand("constraints", "Dual constraint extraction")->require_subcommand(1);
  auto* cons_gen = cons_cmd->add_subcommand("generate", "Ask the chat model for keep/add/remove constraints per query");
  cons_gen->add_option("--dataset", cons.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  cons_gen->add_option("--cache", cons.cache, "Append-only constraint cache JSONL");
  cons_gen->add_option("--out", cons.out, "Constraints JSONL (default: standard output)");
  add_llm(cons_gen, cons.llm);
  add_common(cons_gen, cons.common, false);

  // rerank
  RerankOptions rr;
  auto* rr_cmd = app.add_subcommand("rerank", "Re-rank base retrieval scores with the soft constraint scores");
  add_scoring(rr_cmd, rr.scoring, true);
  rr_cmd->add_option("--dataset", rr.scoring.dataset, "Dataset JSONL restricting the query set")
      ->check(CLI::ExistingFile);
  keyed(rr_cmd, "--top", rr.top, "rerank.top", "0 (all)", "Candidates written per query");
  rr_cmd->add_option("--out", rr.out, "Run JSONL (default: standard output)");
  add_common(rr_cmd, rr.common, true);

  // eval
  ReportOptions ev;
  auto* ev_cmd = app.add_subcommand("eval", "Recall@K, subset Recall@K and mAP@K for one configuration");
  ev_cmd->add_option("--dataset", ev.scoring.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--run", ev.run, "Evaluate a rerank output instead of scoring inputs")->check(CLI::ExistingFile);
  add_scoring(ev_cmd, ev.scoring, true);
  ev_cmd->get_option("--base")->required(false);
  add_report(ev_cmd, ev);
  add_common(ev_cmd, ev.common, true);

  // sweep
  ReportOptions sw;
  auto* sw_cmd = app.add_subcommand("sweep", "Evaluate over a grid of lambda values");
  sw_cmd->add_option("--dataset", sw.scoring.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  add_scoring(sw_cmd, sw.scoring, false);
  keyed_list(sw_cmd, "--lambdas", sw.lambdas, "sweep.lambdas", "0.1,0.3,0.5,0.7,0.9", "Lambda grid");
  add_report(sw_cmd, sw);
  add_common(sw_cmd, sw.common, true);

  // ablation
  ReportOptions ab;
  auto* ab_cmd = app.add_subcommand("ablation", "Evaluate the base, reward, penalty and full variants");
  ab_cmd->add_option("--dataset", ab.scoring.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  add_scoring(ab_cmd, ab.scoring, true);
  ab_cmd->remove_option(ab_cmd->get_option("--variant"));
  add_report(ab_cmd, ab);
  add_common(ab_cmd, ab.common, true);

  // mt
  auto* mt_cmd = app.add_subcommand("mt", "Multi-target benchmark construction")->require_subcommand(1);

  MtQueriesOptions mq;
  auto* mq_cmd = mt_cmd->add_subcommand("queries", "Generate the two stage-1 text queries per record");
  mq_cmd->add_option("--dataset", mq.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  keyed(mq_cmd, "--domain", mq.domain, "stage1.domain", "generic", "Template: generic (one caption) or fashion (two)");
  mq_cmd->add_option("--out", mq.out, "Queries JSONL (default: standard output)");
  add_llm(mq_cmd, mq.llm);
  add_common(mq_cmd, mq.common, false);

  MtStage1Options s1;
  auto* s1_cmd = mt_cmd->add_subcommand("stage1", "Retrieve candidate groups, score them and keep confident targets");
  s1_cmd->add_option("--dataset", s1.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  s1_cmd->add_option("--images", s1.images, "Image SFTEMB1 store")->required()->check(CLI::ExistingFile);
  s1_cmd->add_option("--texts", s1.texts, "Text SFTEMB1 store, rows <qid>:sentence1 and <qid>:composed")
      ->required()
      ->check(CLI::ExistingFile);
  keyed(s1_cmd, "--k", s1.k, "stage1.k", "10", "Candidates per retrieval criterion");
  keyed(s1_cmd, "--tau", s1.tau, "stage1.tau", "0.85", "Confidence threshold");
  keyed_flag(s1_cmd, "--strict-threshold", s1.strict_threshold, "stage1.strict_threshold",
             "Require confidence > tau instead of >= tau");
  s1_cmd->add_option("--out", s1.out, "Multi-target JSONL (default: standard output)");
  add_llm(s1_cmd, s1.llm);
  add_common(s1_cmd, s1.common, false);

  MtStage2Options s2;
  auto* s2_cmd = mt_cmd->add_subcommand("stage2", "Sample target and distractors, rewrite the modification text");
  s2_cmd->add_option("--dataset", s2.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  s2_cmd->add_option("--records", s2.records, "Stage 1 multi-target JSONL")->required()->check(CLI::ExistingFile);
  keyed(s2_cmd, "--seed", s2.seed, "stage2.seed", "0", "Sampling seed");
  s2_cmd->add_option("--out", s2.out, "Single-target JSONL (default: standard output)");
  add_llm(s2_cmd, s2.llm);
  add_common(s2_cmd, s2.common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << deepest(app)->help();
    return 1;
  }
  for (auto& slot : g_lists) {
    if (!slot.values.empty()) *slot.target = slot.values;
  }

  try {
    if (embed_import->parsed()) return run_embed_import(embed);
    if (cons_gen->parsed()) return run_constraints_generate(cons);
    if (rr_cmd->parsed()) return run_rerank(rr);
    if (ev_cmd->parsed()) return run_eval(ev);
    if (sw_cmd->parsed()) return run_sweep(sw);
    if (ab_cmd->parsed()) return run_ablation(ab);
    if (mq_cmd->parsed()) return run_mt_queries(mq);
    if (s1_cmd->parsed()) return run_mt_stage1(s1);
    if (s2_cmd->parsed()) return run_mt_stage2(s2);
  } catch (const softcir::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return softcir::exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: FormatError: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
