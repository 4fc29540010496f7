#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "softcir/error.hpp"
#include "softcir/mtpipeline.hpp"
#include "softcir/prompts.hpp"
#include "test_util.hpp"

using namespace softcir;

namespace {

QueryRecord make_query(const std::string& id, std::set<std::string> gt, std::vector<std::string> texts = {"make it red"}) {
  QueryRecord q;
  q.query_id = id;
  q.reference_id = "ref";
  q.mod_texts = std::move(texts);
  q.gt_ids = std::move(gt);
  return q;
}

CandidateGroup group(Criterion c, std::map<std::string, double> conf) {
  CandidateGroup g;
  g.criterion = c;
  for (const auto& [id, v] : conf) g.candidates.entries.push_back({id, v});
  g.confidences = std::move(conf);
  return g;
}

MultiTargetRecord record_with(const std::string& qid, std::vector<std::string> ids) {
  MultiTargetRecord r;
  r.query = make_query(qid, {ids.front()});
  for (auto& id : ids) r.valid_targets.push_back({id, 1.0, Criterion::TextualToModification});
  return r;
}

}  // namespace

TEST_CASE("fnv1a64 and splitmix64 match the reference values") {
  const auto j = nlohmann::json::parse(read_text(fixture("mt/sampler_expected.json")));
  for (const auto& [text, value] : j["fnv1a64"].items()) CHECK(fnv1a64(text) == value.get<std::uint64_t>());
  SplitMix64 rng(0);
  for (const auto& v : j["splitmix64_seed0"]) CHECK(rng.next() == v.get<std::uint64_t>());
}

TEST_CASE("triplet draws match the reference sampler") {
  const auto j = nlohmann::json::parse(read_text(fixture("mt/sampler_expected.json")));
  REQUIRE(j["draws"].size() >= 10);
  for (const auto& d : j["draws"]) {
    const auto r = record_with(d["query_id"], d["pool"].get<std::vector<std::string>>());
    const auto draw = sample_contrastive_triplet(r, d["seed"].get<std::uint64_t>());
    CHECK(draw.target == d["target"].get<std::string>());
    CHECK(draw.distractors[0] == d["distractors"][0].get<std::string>());
    CHECK(draw.distractors[1] == d["distractors"][1].get<std::string>());
  }
}

TEST_CASE("sampler ignores pool order and rejects small pools") {
  const auto a = sample_contrastive_triplet(record_with("q", {"t3", "t1", "t2", "t4"}), 5);
  const auto b = sample_contrastive_triplet(record_with("q", {"t1", "t2", "t3", "t4"}), 5);
  CHECK(a.target == b.target);
  CHECK(a.distractors == b.distractors);
  std::set<std::string> three = {a.target, a.distractors[0], a.distractors[1]};
  CHECK(three.size() == 3);
  CHECK_ERROR_KIND(sample_contrastive_triplet(record_with("q", {"t1", "t2"}), 1), ErrorKind::InsufficientTargets);
}

TEST_CASE("every pool member is drawn as target about equally often") {
  std::map<std::string, int> counts;
  const auto r = record_with("q", {"a", "b", "c", "d"});
  const int n = 8000;
  for (int s = 0; s < n; ++s) ++counts[sample_contrastive_triplet(r, static_cast<std::uint64_t>(s)).target];
  REQUIRE(counts.size() == 4);
  for (const auto& [id, c] : counts) CHECK(std::abs(c - n / 4) < n / 20);
}

TEST_CASE("selection keeps everything at or above tau") {
  const auto q = make_query("q", {"gt"});
  const CandidateGroup groups[] = {
      group(Criterion::TextualToModification, {{"a", 0.85}, {"b", 0.84}, {"gt", 0.2}}),
      group(Criterion::Compositional, {{"a", 0.9}, {"c", 0.86}}),
      group(Criterion::VisualToOriginalTarget, {{"c", 0.86}, {"d", 0.1}})};
  Stage1Config cfg;
  const auto r = select_multi_targets(q, groups, cfg);
  CHECK_FALSE(r.excluded);
  REQUIRE(r.valid_targets.size() == 3);
  CHECK(r.valid_targets[0] == ValidTarget{"a", 0.9, Criterion::Compositional});
  CHECK(r.valid_targets[1] == ValidTarget{"c", 0.86, Criterion::Compositional});  // tie: first group wins
  CHECK(r.valid_targets[2] == ValidTarget{"gt", 1.0, Criterion::OriginalGroundTruth});

  cfg.strict_threshold = true;
  cfg.tau = 0.86;
  const auto strict = select_multi_targets(q, groups, cfg);
  REQUIRE(strict.valid_targets.size() == 2);
  CHECK(strict.valid_targets[0].id == "a");
}

TEST_CASE("records with nothing new are excluded") {
  const auto q = make_query("q", {"gt"});
  const CandidateGroup groups[] = {group(Criterion::TextualToModification, {{"gt", 0.99}, {"a", 0.5}})};
  const auto r = select_multi_targets(q, groups, {});
  CHECK(r.excluded);
  CHECK_FALSE(r.reason.empty());
  REQUIRE(r.valid_targets.size() == 1);
  CHECK(r.valid_targets[0].criterion == Criterion::OriginalGroundTruth);
}

TEST_CASE("selection properties on random groups") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const auto q = make_query("q", {"g" + std::to_string(trial % 3)});
    std::vector<CandidateGroup> groups;
    for (Criterion c : {Criterion::TextualToModification, Criterion::Compositional, Criterion::VisualToOriginalTarget}) {
      std::map<std::string, double> conf;
      for (int i = 0; i < 6; ++i) conf["g" + std::to_string(rng() % 8)] = u(rng);
      groups.push_back(group(c, conf));
    }
    Stage1Config cfg;
    cfg.tau = u(rng);
    const auto r = select_multi_targets(q, groups, cfg);
    std::set<std::string> seen;
    bool any_new = false;
    for (const auto& t : r.valid_targets) {
      CHECK(seen.insert(t.id).second);
      if (q.gt_ids.count(t.id)) {
        CHECK(t.confidence == 1.0);
        continue;
      }
      any_new = true;
      CHECK(t.confidence >= cfg.tau);
      double best = 0.0;
      for (const auto& g : groups) {
        if (auto it = g.confidences.find(t.id); it != g.confidences.end()) best = std::max(best, it->second);
      }
      CHECK(t.confidence == best);
    }
    CHECK(r.excluded == !any_new);
    CHECK(std::is_sorted(r.valid_targets.begin(), r.valid_targets.end(),
                         [](const ValidTarget& a, const ValidTarget& b) { return a.id < b.id; }));
  }
}

TEST_CASE("candidate groups exclude the reference") {
  const auto images = read_store(fixture("mt/images.sftemb"));
  const auto texts = read_store(fixture("mt/texts.sftemb"));
  const auto dataset = read_dataset(fixture("mt/dataset.jsonl"));
  for (const auto& q : dataset) {
    std::optional<std::span<const float>> composed;
    if (texts.contains(composed_key(q.query_id))) composed = texts.row(composed_key(q.query_id));
    Stage1Config cfg;
    cfg.k = 4;
    const auto groups = retrieve_candidate_groups(q, images, texts.row(sentence1_key(q.query_id)), composed,
                                                  *q.gt_ids.begin(), cfg);
    for (const auto& g : groups) {
      CHECK(g.candidates.size() == 4);
      for (const auto& e : g.candidates.entries) CHECK(e.id != q.reference_id);
    }
    CHECK(groups[0].criterion == Criterion::TextualToModification);
    CHECK(groups[2].criterion == Criterion::VisualToOriginalTarget);
    if (!composed) CHECK(groups[1].candidates == groups[0].candidates);
  }
}

TEST_CASE("stage one query prompts") {
  const std::vector<std::string> one = {"make it red"};
  const std::vector<std::string> two = {"is red", "has long sleeves"};
  const ImageRef ref{"ref", {}, {}};
  const auto g = build_stage1_query_prompt(one, Domain::Generic, ref);
  CHECK(g.text.find("make it red") != std::string::npos);
  CHECK(matches_golden("stage1_query_generic.txt", prompts::snapshot(g)));
  const auto f = build_stage1_query_prompt(two, Domain::Fashion, ref);
  CHECK(f.text.find("has long sleeves") != std::string::npos);
  CHECK(matches_golden("stage1_query_fashion.txt", prompts::snapshot(f)));
  CHECK_ERROR_KIND(build_stage1_query_prompt(two, Domain::Generic, ref), ErrorKind::CaptionCountMismatch);
  CHECK_ERROR_KIND(build_stage1_query_prompt(one, Domain::Fashion, ref), ErrorKind::CaptionCountMismatch);
}

TEST_CASE("stage one query replies") {
  auto q = parse_stage1_queries(R"({"sentence1": "A red dress.", "sentence2": "It is long."})");
  CHECK(q.sentence1 == "A red dress.");
  CHECK(q.composed() == "A red dress. It is long.");
  q = parse_stage1_queries("Sentence 1: A red dress.\n\nSentence 2: It is long.\n");
  CHECK(q.sentence1 == "A red dress.");
  CHECK(q.sentence2 == "It is long.");
  q = parse_stage1_queries("Only one line.");
  CHECK(q.sentence2.empty());
  CHECK(q.composed() == "Only one line.");
  CHECK_ERROR_KIND(parse_stage1_queries("   \n  "), ErrorKind::MalformedResponse);
  CHECK_ERROR_KIND(parse_stage1_queries(R"({"sentence1": ""})"), ErrorKind::MalformedResponse);
}

TEST_CASE("confidence prompt and reply parsing") {
  const auto g = group(Criterion::Compositional, {{"img1", 0.0}, {"img2", 0.0}});
  const std::vector<std::string> caps = {"make it red"};
  const auto p = build_confidence_prompt(g, {"ref", {}, {}}, caps, nullptr);
  CHECK(p.text.find(R"(["img1", "img2"])") != std::string::npos);
  CHECK(p.text.find(R"(["make it red"])") != std::string::npos);
  CHECK(p.images.size() == 3);
  CHECK(matches_golden("confidence_scoring.txt", prompts::snapshot(p)));

  const auto s = parse_confidence_scores(R"(```json
{"img1": 0.9, "img2": 0}
```)", g);
  CHECK(s.at("img1") == 0.9);
  CHECK(s.at("img2") == 0.0);
  CHECK(parse_confidence_scores(R"({"scores": {"img1": 1, "img2": 0.5}})", g).at("img2") == 0.5);
  CHECK_ERROR_KIND(parse_confidence_scores(R"({"img1": 0.9})", g), ErrorKind::SchemaViolation);
  CHECK_ERROR_KIND(parse_confidence_scores(R"({"img1": 1.2, "img2": 0})", g), ErrorKind::SchemaViolation);
  CHECK_ERROR_KIND(parse_confidence_scores(R"({"img1": "high", "img2": 0})", g), ErrorKind::SchemaViolation);
  CHECK_ERROR_KIND(parse_confidence_scores("none", g), ErrorKind::MalformedResponse);
  CHECK_ERROR_KIND(build_confidence_prompt(CandidateGroup{}, {"ref", {}, {}}, caps, nullptr), ErrorKind::EmptyGroup);
}

TEST_CASE("score_and_select retries a bad scoring reply") {
  ScriptedProvider mock;
  mock.on("img1", {"garbage", R"({"img1": 0.95})"});
  const auto q = make_query("q", {"gt"});
  std::array<CandidateGroup, 3> groups;
  groups[0] = group(Criterion::TextualToModification, {{"img1", 0.0}});
  groups[0].confidences.clear();
  groups[1].criterion = Criterion::Compositional;
  groups[2].criterion = Criterion::VisualToOriginalTarget;
  const auto r = score_and_select(mock, q, groups, {}, nullptr);
  CHECK(mock.calls() == 2);
  CHECK_FALSE(r.excluded);
  CHECK(r.valid_targets.front().id == "gt");
  CHECK(r.valid_targets.back() == ValidTarget{"img1", 0.95, Criterion::TextualToModification});
}

TEST_CASE("refinement prompt and single sentence check") {
  const ImageRef ds[] = {{"d1", {}, {}}, {"d2", {}, {}}};
  const std::vector<std::string> caps = {"is red"};
  const auto p = build_refinement_prompt({"ref", {}, {}}, {"tgt", {}, {}}, ds, caps);
  CHECK(p.images_first);
  REQUIRE(p.images.size() == 4);
  CHECK(p.images[1].id == "tgt");
  CHECK(matches_golden("refinement.txt", prompts::snapshot(p)));

  CHECK(require_single_sentence("  \"Make the coat gray.\" ") == "Make the coat gray.");
  CHECK(require_single_sentence("A gray coat on a wooden hanger.") == "A gray coat on a wooden hanger.");
  CHECK_ERROR_KIND(require_single_sentence("One. Two."), ErrorKind::MalformedResponse);
  CHECK_ERROR_KIND(require_single_sentence("line\nbreak"), ErrorKind::MalformedResponse);
  CHECK_ERROR_KIND(require_single_sentence("   "), ErrorKind::MalformedResponse);
}

TEST_CASE("record json round trip and stats") {
  const auto dataset = read_dataset(fixture("mt/dataset.jsonl"));
  std::map<std::string, QueryRecord> by_id;
  for (const auto& q : dataset) by_id[q.query_id] = q;
  std::vector<MultiTargetRecord> records;
  for_each_jsonl(fixture("mt/stage1_expected.jsonl"), [&](std::size_t, const nlohmann::json& j) {
    records.push_back(multi_target_from_json(j, by_id));
    CHECK(to_json(records.back()) == j);
  });
  const auto stats = multi_target_stats(records);
  CHECK(stats.total == records.size());
  CHECK(stats.retained + stats.excluded == stats.total);
  CHECK(stats.retained > 0);
  CHECK(stats.mean_pool_size >= 2.0);
  CHECK_ERROR_KIND(multi_target_from_json(nlohmann::json{{"query_id", "nope"}}, by_id), ErrorKind::MissingQueryOutcome);
}

TEST_CASE("criterion and domain names") {
  for (Criterion c : {Criterion::TextualToModification, Criterion::Compositional, Criterion::VisualToOriginalTarget,
                      Criterion::OriginalGroundTruth}) {
    CHECK(parse_criterion(to_string(c)) == c);
  }
  CHECK(parse_domain("fashion") == Domain::Fashion);
  CHECK(parse_domain("generic") == Domain::Generic);
  CHECK_ERROR_KIND(parse_domain("cars"), ErrorKind::InvalidArgument);
}
