#!/usr/bin/env python3
"""Regenerates the committed test fixtures and their golden outputs.

Everything here is written from scratch in plain Python (struct + json) and
does not go through the C++ library, so the goldens act as independent
oracles for the reader, the scorer, the metrics and the stage-2 sampler.

    python3 tests/fixtures/make_fixtures.py
"""

import json
import math
import random
import struct
from pathlib import Path

HERE = Path(__file__).resolve().parent
MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------- formats

def write_sftemb1(path, ids, rows, normalized=True):
    dim = len(rows[0])
    with open(path, "wb") as f:
        f.write(b"SFTEMB1\0")
        f.write(struct.pack("<IIBB", len(ids), dim, 1, 1 if normalized else 0))
        for row in rows:
            f.write(struct.pack("<%df" % dim, *row))
    stem = str(path)
    if stem.endswith(".sftemb"):
        stem = stem[: -len(".sftemb")]
    with open(stem + ".ids.json", "w", newline="\n") as f:
        json.dump(ids, f)
        f.write("\n")


def dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_jsonl(path, rows):
    with open(path, "w", newline="\n") as f:
        for r in rows:
            f.write(dumps(r) + "\n")


def fmt(x):
    # shortest round-trip form, integers without a fractional part
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def f32(x):
    return struct.unpack("<f", struct.pack("<f", x))[0]


def unit(v):
    n = math.sqrt(sum(x * x for x in v))
    return [f32(x / n) for x in v]


# ---------------------------------------------------------------- scoring oracle

def soft(b, r, p):
    return b * ((r + 1.0 - p) / 2.0)


def variant_soft(b, r, p, variant):
    if variant == "full":
        return soft(b, r, p)
    if variant == "reward":
        return b * r
    if variant == "penalty":
        return b * (1.0 - p)
    return b


def final_score(b, r, p, lam, variant):
    if variant == "base":
        return b
    return (1.0 - lam) * b + lam * variant_soft(b, r, p, variant)


def ranking(scores):
    return [cid for cid, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))]


# ---------------------------------------------------------------- metric oracle

def recall(ranked, gt, k):
    return 1 if any(c in gt for c in ranked[:k]) else 0


def recall_subset(ranked, subset, gt, k):
    return recall([c for c in ranked if c in subset], gt, k)


def ap(ranked, gt, k):
    hits, total = 0, 0.0
    for i, c in enumerate(ranked[:k]):
        if c in gt:
            hits += 1
            total += hits / (i + 1)
    return total / min(len(gt), k)


def report_rows(queries, rankings, ks, lam, variant):
    rows = []
    for metric in ("recall", "recall_subset", "map"):
        members = [q for q in queries if metric != "recall_subset" or "subset_ids" in q]
        if not members:
            continue
        for k in ks:
            total = 0.0
            for q in members:
                r = rankings[q["query_id"]]
                gt = set(q["gt_ids"])
                if metric == "recall":
                    total += recall(r, gt, k)
                elif metric == "recall_subset":
                    total += recall_subset(r, set(q["subset_ids"]), gt, k)
                else:
                    total += ap(r, gt, k)
            rows.append("%s,%d,%s,%s,%s,%d" % (metric, k, fmt(lam), variant, fmt(total / len(members)), len(members)))
    return rows


def csv(rows):
    return "metric,k,lambda,variant,value,n_queries\n" + "".join(r + "\n" for r in rows)


# ---------------------------------------------------------------- eval6

def make_eval6():
    out = HERE / "eval6"
    out.mkdir(exist_ok=True)
    rng = random.Random(20240601)
    cands = ["c%d" % i for i in range(1, 7)]
    queries = [
        {"query_id": "q1", "reference_id": "r1", "mod_texts": ["make it red"], "gt_ids": ["c3"],
         "subset_ids": ["c1", "c3", "c5"]},
        {"query_id": "q2", "reference_id": "r2", "mod_texts": ["remove the logo"], "gt_ids": ["c2", "c5"]},
        {"query_id": "q3", "reference_id": "r3", "mod_texts": ["is shorter", "has no sleeves"],
         "gt_ids": ["c1", "c4", "c6"], "subset_ids": ["c2", "c4", "c6"]},
        {"query_id": "q4", "reference_id": "r4", "mod_texts": ["show two of them"], "gt_ids": ["c6"]},
        {"query_id": "q5", "reference_id": "r5", "mod_texts": ["at night"], "gt_ids": ["c4"]},
    ]
    base, reward, penalty = {}, {}, {}
    for q in queries:
        qid = q["query_id"]
        base[qid] = {c: round(rng.uniform(0.05, 0.45), 3) for c in cands}
        reward[qid] = {c: round(rng.uniform(-0.2, 0.9), 3) for c in cands}
        penalty[qid] = {c: round(rng.uniform(-0.2, 0.9), 3) for c in cands}
    base["q5"]["c2"] = -0.07  # one negative base score
    del penalty["q4"]  # q4 has no proscriptive constraint

    write_jsonl(out / "dataset.jsonl", queries)
    write_jsonl(out / "base.jsonl", [{"query_id": q, "scores": s} for q, s in base.items()])
    write_jsonl(out / "reward.jsonl", [{"query_id": q, "scores": s} for q, s in reward.items()])
    write_jsonl(out / "penalty.jsonl", [{"query_id": q, "scores": s} for q, s in penalty.items()])

    def rankings(lam, variant):
        res = {}
        for q in queries:
            qid = q["query_id"]
            r = reward.get(qid, {})
            p = penalty.get(qid, {})
            res[qid] = ranking({c: final_score(base[qid][c], r.get(c, 0.0), p.get(c, 0.0), lam, variant)
                                for c in cands})
        return res

    ks = [1, 5, 10, 50]
    with open(out / "eval_golden.csv", "w", newline="\n") as f:
        f.write(csv(report_rows(queries, rankings(1.0, "full"), ks, 1.0, "full")))
    rows = []
    for lam in (0.1, 0.3, 0.5, 0.7, 0.9):
        rows += report_rows(queries, rankings(lam, "full"), ks, lam, "full")
    with open(out / "sweep_golden.csv", "w", newline="\n") as f:
        f.write(csv(rows))
    rows = []
    for variant in ("base", "reward", "penalty", "full"):
        rows += report_rows(queries, rankings(0.2, variant), ks, 0.2, variant)
    with open(out / "ablation_golden.csv", "w", newline="\n") as f:
        f.write(csv(rows))


# ---------------------------------------------------------------- synth8

def make_synth8():
    """Target T is second under the base scores; the prescriptive caption is
    collinear with T and the proscriptive caption with the base top-1 D."""
    out = HERE / "synth8"
    out.mkdir(exist_ok=True)

    def e(i):
        v = [0.0] * 8
        v[i] = 1.0
        return v

    images = {
        "tgt": e(0),
        "dis": e(1),
        "o1": e(2),
        "o2": e(3),
        "o3": [0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
        "o4": unit([0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]),
    }
    ids = sorted(images)
    write_sftemb1(out / "images.sftemb", ids, [images[i] for i in ids])
    texts = {"s1:prescriptive": e(0), "s1:proscriptive": e(1)}
    tids = sorted(texts)
    write_sftemb1(out / "texts.sftemb", tids, [texts[i] for i in tids])

    base = {"dis": 0.31, "tgt": 0.29, "o1": 0.22, "o2": 0.2, "o3": 0.18, "o4": 0.12}
    write_jsonl(out / "base.jsonl", [{"query_id": "s1", "scores": base}])
    write_jsonl(out / "dataset.jsonl", [{"query_id": "s1", "reference_id": "ref", "mod_texts": ["make it black"],
                                         "gt_ids": ["tgt"]}])
    constraint = {"keep": ["t-shirt"], "add": ["black"], "remove": ["white"],
                  "prescriptive_query": "a black t-shirt", "proscriptive_query": "a white t-shirt"}
    write_jsonl(out / "constraints.jsonl", [dict(constraint, query_id="s1")])
    with open(out / "mock_constraints.json", "w", newline="\n") as f:
        json.dump({"model": "scripted-mock", "default": "```json\n" + json.dumps(constraint) + "\n```"}, f, indent=2)
        f.write("\n")

    def dots(v):
        return {i: sum(a * b for a, b in zip(images[i], v)) for i in ids}

    reward, penalty = dots(texts["s1:prescriptive"]), dots(texts["s1:proscriptive"])
    soft_rank = ranking({i: final_score(base[i], reward[i], penalty[i], 1.0, "full") for i in ids})
    base_rank = ranking(base)
    assert soft_rank[0] == "tgt" and base_rank[1] == "tgt", (soft_rank, base_rank)
    with open(out / "expected.json", "w", newline="\n") as f:
        json.dump({"soft_top1": soft_rank[0], "base_ranking": base_rank, "soft_ranking": soft_rank}, f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------- mt

class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK64

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def fnv1a64(text):
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def draw(pool, seed, qid):
    pool = sorted(set(pool))
    rng = SplitMix64(seed ^ fnv1a64(qid))
    for i in range(len(pool) - 1, 0, -1):
        j = rng.next() % (i + 1)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[0], pool[1:3]


def make_mt():
    out = HERE / "mt"
    out.mkdir(exist_ok=True)
    rng = random.Random(77)
    ids = ["img%02d" % i for i in range(10)]
    write_sftemb1(out / "images.sftemb", ids, [unit([rng.gauss(0, 1) for _ in range(8)]) for _ in ids])

    queries = [
        {"query_id": "m1", "reference_id": "img00", "mod_texts": ["m1: add a hat"], "gt_ids": ["img01"]},
        {"query_id": "m2", "reference_id": "img02", "mod_texts": ["m2: make it blue"], "gt_ids": ["img03"]},
        {"query_id": "m3", "reference_id": "img04", "mod_texts": ["m3: two dogs"], "gt_ids": ["img05"]},
        {"query_id": "m4", "reference_id": "img06", "mod_texts": ["m4: on grass"], "gt_ids": ["img07", "img08"]},
        {"query_id": "m5", "reference_id": "img08", "mod_texts": ["m5: from above"], "gt_ids": ["img09"]},
        {"query_id": "m6", "reference_id": "img09", "mod_texts": ["m6: in winter"], "gt_ids": ["img00"]},
    ]
    write_jsonl(out / "dataset.jsonl", queries)

    texts = {}
    for q in queries:
        texts[q["query_id"] + ":sentence1"] = unit([rng.gauss(0, 1) for _ in range(8)])
        if q["query_id"] != "m3":
            texts[q["query_id"] + ":composed"] = unit([rng.gauss(0, 1) for _ in range(8)])
    tids = sorted(texts)
    write_sftemb1(out / "texts.sftemb", tids, [texts[i] for i in tids])

    # Per-query confidences, identical in every group. 0.85 sits on the
    # threshold on purpose; m5 has nothing above it, m6 only one new target.
    conf = {
        "m1": {"img03": 0.9, "img04": 0.85, "img05": 0.84},
        "m2": {"img01": 0.95, "img05": 0.88, "img09": 0.86, "img07": 0.2},
        "m3": {"img00": 0.99, "img02": 0.87},
        "m4": {"img01": 0.91, "img09": 0.3},
        "m5": {"img01": 0.5},
        "m6": {"img05": 0.86},
    }
    rules = []
    for q in queries:
        qid = q["query_id"]
        scores = {i: conf[qid].get(i, 0.1) for i in ids}
        for g in q["gt_ids"]:
            scores[g] = 0.97
        rules.append({"contains": q["mod_texts"][0], "response": json.dumps(scores)})
    with open(out / "mock_scores.json", "w", newline="\n") as f:
        json.dump({"model": "scripted-mock", "rules": rules}, f, indent=2)
        f.write("\n")
    with open(out / "mock_refine.json", "w", newline="\n") as f:
        json.dump({"model": "scripted-mock", "default": "A gray coat on a wooden hanger."}, f, indent=2)
        f.write("\n")

    records = []
    for q in queries:
        qid = q["query_id"]
        new = {i: c for i, c in conf[qid].items() if c >= 0.85 and i not in q["gt_ids"] and i != q["reference_id"]}
        targets = [{"id": i, "confidence": c, "criterion": "TextualToModification"} for i, c in new.items()]
        targets += [{"id": g, "confidence": 1.0, "criterion": "OriginalGroundTruth"} for g in q["gt_ids"]]
        targets.sort(key=lambda t: t["id"])
        excluded = not new
        records.append({"query_id": qid, "valid_targets": targets, "excluded": excluded,
                        "reason": "no candidate reached the confidence threshold" if excluded else None})
    write_jsonl(out / "stage1_expected.jsonl", records)

    seed = 7
    triplets = []
    for r in records:
        if r["excluded"] or len(r["valid_targets"]) < 3:
            continue
        target, distractors = draw([t["id"] for t in r["valid_targets"]], seed, r["query_id"])
        triplets.append({"query_id": r["query_id"], "target_id": target, "distractor_ids": distractors,
                         "refined_text": "A gray coat on a wooden hanger.", "seed": seed})
    write_jsonl(out / "stage2_expected.jsonl", triplets)

    # Reference draws for the sampler, checked bit for bit by the unit tests.
    pools = {"qa": ["t1", "t2", "t3"], "qb": ["a", "b", "c", "d", "e"], "query-42": ["x%d" % i for i in range(9)]}
    sampler = []
    for qid, pool in pools.items():
        for s in (0, 1, 12345, 2 ** 63 + 11):
            t, d = draw(pool, s, qid)
            sampler.append({"query_id": qid, "pool": pool, "seed": s, "target": t, "distractors": d})
    splitmix = SplitMix64(0)
    with open(out / "sampler_expected.json", "w", newline="\n") as f:
        json.dump({"draws": sampler, "fnv1a64": {"": fnv1a64(""), "a": fnv1a64("a"), "query-42": fnv1a64("query-42")},
                   "splitmix64_seed0": [splitmix.next() for _ in range(4)]}, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    make_eval6()
    make_synth8()
    make_mt()
