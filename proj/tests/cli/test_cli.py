"""End-to-end checks of the softcir executable: exit codes, config precedence,
manifests, and outputs against the committed goldens."""

import http.server
import json
import os
import subprocess
import tempfile
import threading
import unittest
from pathlib import Path

CLI = os.environ.get("SOFTCIR_CLI", "softcir")
FIX = Path(os.environ.get("SOFTCIR_FIXTURES", Path(__file__).resolve().parents[1] / "fixtures"))


def run(*args, env=None, cwd=None):
    full_env = {k: v for k, v in os.environ.items() if not k.startswith("SOFT_")}
    full_env.update(env or {})
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, env=full_env, cwd=cwd)


def scoring_args(name="eval6"):
    d = FIX / name
    return ["--dataset", d / "dataset.jsonl", "--base", d / "base.jsonl",
            "--reward-scores", d / "reward.jsonl", "--penalty-scores", d / "penalty.jsonl"]


CONSTRAINT_REPLY = json.dumps({
    "keep": ["t-shirt"], "add": ["black"], "remove": ["white"],
    "prescriptive_query": "a black t-shirt", "proscriptive_query": "a white t-shirt"})


class FakeChat(http.server.BaseHTTPRequestHandler):
    calls = 0
    auth = []

    def do_POST(self):
        type(self).calls += 1
        type(self).auth.append(self.headers.get("Authorization"))
        self.rfile.read(int(self.headers.get("Content-Length", "0")))
        body = json.dumps({
            "choices": [{"message": {"role": "assistant", "content": CONSTRAINT_REPLY}}],
            "usage": {"prompt_tokens": 1000, "completion_tokens": 100}}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


class ExitCodes(unittest.TestCase):
    def test_no_subcommand_prints_usage(self):
        r = run()
        self.assertEqual(r.returncode, 1)
        self.assertIn("Usage:", r.stdout + r.stderr)

    def test_unknown_flag(self):
        r = run("rerank", "--bogus")
        self.assertEqual(r.returncode, 1)
        self.assertIn("Usage:", r.stdout + r.stderr)

    def test_lambda_out_of_range_is_validation(self):
        r = run("eval", *scoring_args(), "--lambda", "1.5")
        self.assertEqual(r.returncode, 1, r.stderr)

    def test_bad_store_is_format_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            bad = Path(tmp) / "bad.sftemb"
            bad.write_bytes(b"XXXX" + bytes(20))
            (Path(tmp) / "bad.ids.json").write_text("[]")
            r = run("rerank", "--dataset", FIX / "synth8/dataset.jsonl", "--base", FIX / "synth8/base.jsonl",
                    "--images", bad, "--texts", FIX / "synth8/texts.sftemb")
            self.assertEqual(r.returncode, 3, r.stderr)

    def test_missing_api_key_is_provider_error(self):
        r = run("constraints", "generate", "--dataset", FIX / "synth8/dataset.jsonl", "--provider", "http")
        self.assertEqual(r.returncode, 2, r.stderr)

    def test_api_key_flag_does_not_exist(self):
        r = run("constraints", "generate", "--dataset", FIX / "synth8/dataset.jsonl", "--api-key", "x")
        self.assertEqual(r.returncode, 1)


class Reports(unittest.TestCase):
    def test_eval_golden(self):
        r = run("eval", *scoring_args(), "--lambda", "1")
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(r.stdout, (FIX / "eval6/eval_golden.csv").read_text())

    def test_sweep_golden(self):
        r = run("sweep", *scoring_args())
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(r.stdout, (FIX / "eval6/sweep_golden.csv").read_text())

    def test_ablation_golden(self):
        r = run("ablation", *scoring_args(), "--base-style", "inversion")
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(r.stdout, (FIX / "eval6/ablation_golden.csv").read_text())

    def test_eval_of_a_rerank_run_matches(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "run.jsonl"
            r = run("rerank", *scoring_args(), "--lambda", "1", "--out", out)
            self.assertEqual(r.returncode, 0, r.stderr)
            lines = [json.loads(x) for x in out.read_text().splitlines()]
            self.assertEqual([x["query_id"] for x in lines], sorted(x["query_id"] for x in lines))
            r = run("eval", "--dataset", FIX / "eval6/dataset.jsonl", "--run", out)
            self.assertEqual(r.returncode, 0, r.stderr)
            self.assertEqual(r.stdout, (FIX / "eval6/eval_golden.csv").read_text())

    def test_json_and_table_formats(self):
        r = run("eval", *scoring_args(), "--json")
        self.assertEqual(r.returncode, 0, r.stderr)
        data = json.loads(r.stdout)
        self.assertEqual(data[0]["query_count"], 5)
        r = run("eval", *scoring_args(), "--format", "table", "--ks", "1,5")
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertIn("recall_subset", r.stdout)


class ConfigPrecedence(unittest.TestCase):
    def manifest_for(self, *extra, env=None, config=None):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "run.jsonl"
            args = ["rerank", *scoring_args(), "--out", out, *extra]
            if config is not None:
                cfg = Path(tmp) / "c.toml"
                cfg.write_text(config)
                args += ["--config", cfg]
            r = run(*args, env=env)
            self.assertEqual(r.returncode, 0, r.stderr)
            manifest = json.loads(Path(str(out) + ".manifest.json").read_text())
            first = json.loads(out.read_text().splitlines()[0])
            return manifest, first

    def test_default(self):
        m, first = self.manifest_for()
        self.assertEqual(m["config"]["rerank.lambda"], {"value": 1.0, "source": "default"})
        self.assertEqual(first["lambda"], 1.0)

    def test_inversion_default(self):
        m, _ = self.manifest_for("--base-style", "inversion")
        self.assertEqual(m["config"]["rerank.lambda"]["value"], 0.2)

    def test_file_env_flag(self):
        toml = "[rerank]\nlambda = 0.5\n"
        m, _ = self.manifest_for(config=toml)
        self.assertEqual(m["config"]["rerank.lambda"], {"value": 0.5, "source": "config"})
        m, _ = self.manifest_for(config=toml, env={"SOFT_RERANK_LAMBDA": "0.3"})
        self.assertEqual(m["config"]["rerank.lambda"], {"value": 0.3, "source": "env"})
        m, first = self.manifest_for("--lambda", "0.7", config=toml, env={"SOFT_RERANK_LAMBDA": "0.3"})
        self.assertEqual(m["config"]["rerank.lambda"], {"value": 0.7, "source": "cli"})
        self.assertEqual(first["lambda"], 0.7)

    def test_manifest_inputs_are_hashed(self):
        m, _ = self.manifest_for()
        self.assertEqual(m["subcommand"], "rerank")
        self.assertTrue(all(len(i["sha256"]) == 64 for i in m["inputs"]))
        self.assertGreaterEqual(len(m["inputs"]), 4)

    def test_stage1_tau_from_env(self):
        args = ["mt", "stage1", "--dataset", FIX / "mt/dataset.jsonl", "--images", FIX / "mt/images.sftemb",
                "--texts", FIX / "mt/texts.sftemb", "--provider", "mock:" + str(FIX / "mt/mock_scores.json")]
        base = run(*args)
        self.assertEqual(base.returncode, 0, base.stderr)
        self.assertEqual(base.stdout, (FIX / "mt/stage1_expected.jsonl").read_text())
        strict = run(*args, env={"SOFT_STAGE1_TAU": "0.95"})
        self.assertEqual(strict.returncode, 0, strict.stderr)
        self.assertNotEqual(strict.stdout, base.stdout)
        for line in strict.stdout.splitlines():
            for t in json.loads(line)["valid_targets"]:
                if t["criterion"] != "OriginalGroundTruth":
                    self.assertGreaterEqual(t["confidence"], 0.95)

    def test_help_shows_keys_and_defaults(self):
        r = run("mt", "stage1", "--help")
        self.assertEqual(r.returncode, 0)
        self.assertIn("SOFT_STAGE1_TAU", r.stdout)
        self.assertIn("[0.85]", r.stdout)
        self.assertIn("[10]", r.stdout)


class Constraints(unittest.TestCase):
    def test_mock_generation_matches_fixture(self):
        r = run("constraints", "generate", "--dataset", FIX / "synth8/dataset.jsonl",
                "--provider", "mock:" + str(FIX / "synth8/mock_constraints.json"))
        self.assertEqual(r.returncode, 0, r.stderr)
        got = json.loads(r.stdout)
        want = json.loads((FIX / "synth8/constraints.jsonl").read_text().splitlines()[0])
        for key, value in want.items():
            self.assertEqual(got[key], value)
        self.assertEqual(got["provenance"]["prompt_version"], "dual-constraint/v1")

    def test_http_provider_with_cache_and_redacted_key(self):
        FakeChat.calls = 0
        FakeChat.auth = []
        server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), FakeChat)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = "http://127.0.0.1:%d/v1" % server.server_address[1]
            with tempfile.TemporaryDirectory() as tmp:
                cache = Path(tmp) / "cache.jsonl"
                out1, out2 = Path(tmp) / "c1.jsonl", Path(tmp) / "c2.jsonl"
                env = {"SOFT_LLM_API_KEY": "sk-secret-123"}
                common = ["constraints", "generate", "--dataset", FIX / "eval6/dataset.jsonl", "--provider", "http",
                          "--base-url", url, "--cache", cache]
                r = run(*common, "--out", out1, env=env)
                self.assertEqual(r.returncode, 0, r.stderr)
                self.assertEqual(FakeChat.calls, 5)
                self.assertTrue(all(a == "Bearer sk-secret-123" for a in FakeChat.auth))
                manifest_text = Path(str(out1) + ".manifest.json").read_text()
                self.assertNotIn("sk-secret-123", manifest_text)
                m = json.loads(manifest_text)
                self.assertEqual(m["config"]["llm.api_key"], {"value": "<redacted>", "source": "env"})
                self.assertEqual(m["provider"]["calls"], 5)
                self.assertAlmostEqual(m["provider"]["estimated_cost_usd"], 5 * (1000 * 2.5 + 100 * 10.0) / 1e6)

                r = run(*common, "--out", out2, env=env)
                self.assertEqual(r.returncode, 0, r.stderr)
                self.assertEqual(FakeChat.calls, 5)
                self.assertEqual(out1.read_text(), out2.read_text())
        finally:
            server.shutdown()
            server.server_close()


class Embeddings(unittest.TestCase):
    def test_import_writes_sftemb1(self):
        with tempfile.TemporaryDirectory() as tmp:
            src = Path(tmp) / "v.jsonl"
            src.write_text('{"id": "b", "vector": [3, 4]}\n{"id": "a", "vector": [1, 0]}\n')
            store = Path(tmp) / "v.sftemb"
            r = run("embed", "import", src, "--out", store)
            self.assertEqual(r.returncode, 0, r.stderr)
            raw = store.read_bytes()
            self.assertEqual(raw[:8], b"SFTEMB1\x00")
            self.assertEqual(int.from_bytes(raw[8:12], "little"), 2)
            self.assertEqual(raw[17] & 1, 1)
            self.assertEqual(json.loads((Path(tmp) / "v.ids.json").read_text()), ["b", "a"])  # input order kept

    def test_zero_vector_is_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            src = Path(tmp) / "v.jsonl"
            src.write_text('{"id": "a", "vector": [0, 0]}\n')
            r = run("embed", "import", src, "--out", Path(tmp) / "v.sftemb")
            self.assertEqual(r.returncode, 1, r.stderr)
            self.assertFalse((Path(tmp) / "v.sftemb").exists())

    def test_synthetic_rerank(self):
        r = run("rerank", "--dataset", FIX / "synth8/dataset.jsonl", "--base", FIX / "synth8/base.jsonl",
                "--images", FIX / "synth8/images.sftemb", "--texts", FIX / "synth8/texts.sftemb",
                "--constraints", FIX / "synth8/constraints.jsonl")
        self.assertEqual(r.returncode, 0, r.stderr)
        expected = json.loads((FIX / "synth8/expected.json").read_text())
        ranking = [e["id"] for e in json.loads(r.stdout)["ranking"]]
        self.assertEqual(ranking, expected["soft_ranking"])
        r = run("rerank", "--dataset", FIX / "synth8/dataset.jsonl", "--base", FIX / "synth8/base.jsonl",
                "--images", FIX / "synth8/images.sftemb", "--texts", FIX / "synth8/texts.sftemb",
                "--variant", "base")
        ranking = [e["id"] for e in json.loads(r.stdout)["ranking"]]
        self.assertEqual(ranking, expected["base_ranking"])


class MultiTarget(unittest.TestCase):
    def test_stage2_reproducible(self):
        args = ["mt", "stage2", "--dataset", FIX / "mt/dataset.jsonl", "--records", FIX / "mt/stage1_expected.jsonl",
                "--provider", "mock:" + str(FIX / "mt/mock_refine.json"), "--seed", "7"]
        a, b = run(*args), run(*args)
        self.assertEqual(a.returncode, 0, a.stderr)
        self.assertEqual(a.stdout, b.stdout)
        self.assertEqual(a.stdout, (FIX / "mt/stage2_expected.jsonl").read_text())
        other = run(*args[:-1], "8")
        self.assertEqual(other.returncode, 0)


if __name__ == "__main__":
    unittest.main()
