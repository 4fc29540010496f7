#include <cstdlib>

#include "doctest.h"
#include "softcir/error.hpp"
#include "softcir/manifest.hpp"
#include "test_util.hpp"

using namespace softcir;

namespace {

struct EnvGuard {
  std::string name;
  EnvGuard(std::string n, const char* value) : name(std::move(n)) { ::setenv(name.c_str(), value, 1); }
  ~EnvGuard() { ::unsetenv(name.c_str()); }
};

}  // namespace

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  TempDir dir;
  write_text(dir.path / "f.txt", "abc");
  CHECK(sha256_file(dir.path / "f.txt") == sha256_hex("abc"));
  CHECK_ERROR_KIND(sha256_file(dir.path / "missing"), ErrorKind::IoError);
}

TEST_CASE("flag beats env beats file beats default") {
  TempDir dir;
  const auto cfg = dir.path / "c.toml";
  write_text(cfg, "[stage1]\ntau = 0.9\nk = 7\n[eval]\nks = [1, 5]\nmetrics = \"recall, map\"\n[llm]\nmodel = \"m-file\"\n");
  ConfigResolver r(cfg);

  CHECK(r.real("stage1.tau", 0.5, "SOFT_STAGE1_TAU", 0.85) == 0.5);
  CHECK(r.resolved().at("stage1.tau").source == "cli");
  {
    EnvGuard env("SOFT_STAGE1_TAU", "0.7");
    CHECK(r.real("stage1.tau", std::nullopt, "SOFT_STAGE1_TAU", 0.85) == 0.7);
    CHECK(r.resolved().at("stage1.tau").source == "env");
  }
  CHECK(r.real("stage1.tau", std::nullopt, "SOFT_STAGE1_TAU", 0.85) == 0.9);
  CHECK(r.resolved().at("stage1.tau").source == "config");
  CHECK(r.integer("stage1.k", std::nullopt, "SOFT_STAGE1_K", 10) == 7);
  CHECK(r.real("rerank.lambda", std::nullopt, "SOFT_RERANK_LAMBDA", 1.0) == 1.0);
  CHECK(r.resolved().at("rerank.lambda").source == "default");
  CHECK(r.text("llm.model", std::nullopt, "SOFT_LLM_MODEL", "gpt-4o") == "m-file");
  CHECK(r.flag("stage1.strict", std::nullopt, nullptr, false) == false);

  CHECK(r.list("eval.ks", std::nullopt, "SOFT_EVAL_KS", {"10"}) == std::vector<std::string>{"1", "5"});
  CHECK(r.list("eval.metrics", std::nullopt, "SOFT_EVAL_METRICS", {}) == std::vector<std::string>{"recall", "map"});
  {
    EnvGuard env("SOFT_EVAL_KS", "2, 3");
    CHECK(r.list("eval.ks", std::nullopt, "SOFT_EVAL_KS", {"10"}) == std::vector<std::string>{"2", "3"});
  }
  {
    EnvGuard env("SOFT_STAGE1_K", "many");
    CHECK_ERROR_KIND(r.integer("stage1.k", std::nullopt, "SOFT_STAGE1_K", 10), ErrorKind::InvalidArgument);
  }
  CHECK_ERROR_KIND(r.real("llm.model", std::nullopt, nullptr, 0.0), ErrorKind::FormatError);
}

TEST_CASE("bad toml is a format error") {
  TempDir dir;
  write_text(dir.path / "bad.toml", "[stage1\ntau = ");
  CHECK_ERROR_KIND(ConfigResolver(dir.path / "bad.toml"), ErrorKind::FormatError);
}

TEST_CASE("manifest records inputs, config sources and usage") {
  TempDir dir;
  write_text(dir.path / "in.jsonl", "abc");
  ConfigResolver r;
  r.real("rerank.lambda", 0.3, nullptr, 1.0);
  r.note("llm.api_key", "***", "env");
  RunManifest m("rerank");
  m.add_input(dir.path / "in.jsonl");
  m.add_output(dir.path / "out.jsonl");
  m.set_config(r);
  m.set_usage({2, 10, 4, 0.5});
  const auto out = dir.path / "out.jsonl";
  CHECK(RunManifest::path_for(out).string() == out.string() + ".manifest.json");
  m.write(RunManifest::path_for(out));
  const auto j = nlohmann::json::parse(read_text(RunManifest::path_for(out)));
  CHECK(j["subcommand"] == "rerank");
  CHECK(j["tool_version"].is_string());
  CHECK(j["started_at"].get<std::string>().back() == 'Z');
  CHECK(j["wall_seconds"].get<double>() >= 0.0);
  CHECK(j["inputs"][0]["sha256"] == sha256_hex("abc"));
  CHECK(j["config"]["rerank.lambda"]["value"] == 0.3);
  CHECK(j["config"]["rerank.lambda"]["source"] == "cli");
  CHECK(j["config"]["llm.api_key"]["value"] == "***");
  CHECK(j["provider"]["calls"] == 2);
  CHECK(j["provider"]["estimated_cost_usd"] == 0.5);
}
