#pragma once

// Option bundles filled by the argument parser and consumed by the
// subcommand runners. Unset optionals fall through to env, config, default.

#include <optional>
#include <string>
#include <vector>

namespace softcir::cli {

struct Common {
  std::string config;
  std::optional<long> jobs;
};

struct LlmOptions {
  std::optional<std::string> provider;  // "http" or "mock:<file>"
  std::optional<std::string> base_url;
  std::optional<std::string> model;
  std::optional<double> temperature;
  std::optional<long> max_retries;
  std::optional<double> timeout_s;
  std::optional<long> max_concurrent;
  std::optional<long> parse_retries;
  bool text_only = false;
  std::string image_dir;
  std::string image_ext = ".jpg";
  std::string captions;
};

struct EmbedImportOptions {
  Common common;
  std::string input;
  std::string out;
  bool no_normalize = false;
};

struct ConstraintsOptions {
  Common common;
  LlmOptions llm;
  std::string dataset;
  std::string cache;
  std::string out;
};

// Inputs for anything that scores candidates.
struct ScoringOptions {
  std::string dataset;
  std::string base;
  std::string reward_scores;
  std::string penalty_scores;
  std::string images;
  std::string texts;
  std::string constraints;
  std::optional<std::string> base_style;
  std::optional<double> lambda;
  std::optional<std::string> variant;
  bool minmax_base = false;
};

struct RerankOptions {
  Common common;
  ScoringOptions scoring;
  std::optional<long> top;
  std::string out;
};

struct ReportOptions {
  Common common;
  ScoringOptions scoring;
  std::string run;  // eval only
  std::optional<std::vector<std::string>> ks;
  std::optional<std::vector<std::string>> metrics;
  std::optional<std::vector<std::string>> lambdas;  // sweep only
  std::optional<std::string> format;
  bool json = false;
  std::string out;
};

struct MtQueriesOptions {
  Common common;
  LlmOptions llm;
  std::string dataset;
  std::optional<std::string> domain;
  std::string out;
};

struct MtStage1Options {
  Common common;
  LlmOptions llm;
  std::string dataset;
  std::string images;
  std::string texts;
  std::optional<long> k;
  std::optional<double> tau;
  bool strict_threshold = false;
  std::string out;
};

struct MtStage2Options {
  Common common;
  LlmOptions llm;
  std::string dataset;
  std::string records;
  std::optional<long> seed;
  std::string out;
};

int run_embed_import(const EmbedImportOptions& o);
int run_constraints_generate(const ConstraintsOptions& o);
int run_rerank(const RerankOptions& o);
int run_eval(const ReportOptions& o);
int run_sweep(const ReportOptions& o);
int run_ablation(const ReportOptions& o);
int run_mt_queries(const MtQueriesOptions& o);
int run_mt_stage1(const MtStage1Options& o);
int run_mt_stage2(const MtStage2Options& o);

/// "stage1.tau" -> "SOFT_STAGE1_TAU"
std::string env_for(const std::string& key);

}  // namespace softcir::cli
