#include "softcir/mtpipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <regex>

#include "softcir/error.hpp"
#include "softcir/prompts.hpp"

namespace softcir {
namespace {

using nlohmann::json;

std::string strip_quotes(std::string text) {
  text = trim(text);
  if (text.size() >= 2 && ((text.front() == '"' && text.back() == '"') || (text.front() == '\'' && text.back() == '\''))) {
    text = trim(std::string_view(text).substr(1, text.size() - 2));
  }
  return text;
}

std::string clean_sentence_line(std::string line) {
  static const std::regex label(R"(^\s*(sentence\s*[12]|[12])\s*[:.)\-]\s*)", std::regex::icase);
  line = std::regex_replace(trim(line), label, "", std::regex_constants::format_first_only);
  return strip_quotes(line);
}

RankedList ranked_excluding(const EmbeddingMatrix& images, std::span<const float> query, const std::string& skip,
                            std::size_t k, const std::string& query_id) {
  const auto sims = similarities(images, query);
  std::vector<std::string> ids;
  std::vector<double> scores;
  ids.reserve(sims.size());
  scores.reserve(sims.size());
  for (std::size_t i = 0; i < sims.size(); ++i) {
    if (images.ids()[i] == skip) continue;
    ids.push_back(images.ids()[i]);
    scores.push_back(sims[i]);
  }
  return rank_scores(ids, scores, query_id, k);
}

}  // namespace

Domain parse_domain(std::string_view text) {
  if (text == "generic" || text == "cirr") return Domain::Generic;
  if (text == "fashion" || text == "fashioniq") return Domain::Fashion;
  throw Error(ErrorKind::InvalidArgument, "unknown domain '" + std::string(text) + "'");
}

std::string_view to_string(Criterion criterion) noexcept {
  switch (criterion) {
    case Criterion::TextualToModification: return "TextualToModification";
    case Criterion::Compositional: return "Compositional";
    case Criterion::VisualToOriginalTarget: return "VisualToOriginalTarget";
    case Criterion::OriginalGroundTruth: return "OriginalGroundTruth";
  }
  return "OriginalGroundTruth";
}

Criterion parse_criterion(std::string_view text) {
  for (Criterion c : {Criterion::TextualToModification, Criterion::Compositional, Criterion::VisualToOriginalTarget,
                      Criterion::OriginalGroundTruth}) {
    if (text == to_string(c)) return c;
  }
  throw Error(ErrorKind::SchemaViolation, "unknown criterion '" + std::string(text) + "'");
}

std::string Stage1Queries::composed() const { return sentence2.empty() ? sentence1 : sentence1 + " " + sentence2; }

PromptPayload build_stage1_query_prompt(std::span<const std::string> mod_texts, Domain domain,
                                        const ImageRef& reference) {
  const std::size_t expected = domain == Domain::Generic ? 1 : 2;
  if (mod_texts.size() != expected) {
    throw Error(ErrorKind::CaptionCountMismatch, "domain needs " + std::to_string(expected) + " caption(s), got " +
                                                     std::to_string(mod_texts.size()));
  }
  PromptPayload payload;
  if (domain == Domain::Generic) {
    payload.text = prompts::render(prompts::kQueryGenerationGenericTemplate, {{"caption1", mod_texts[0]}});
    payload.prompt_version = std::string(prompts::kQueryGenerationGenericVersion);
  } else {
    payload.text = prompts::render(prompts::kQueryGenerationFashionTemplate,
                                   {{"caption1", mod_texts[0]}, {"caption2", mod_texts[1]}});
    payload.prompt_version = std::string(prompts::kQueryGenerationFashionVersion);
  }
  payload.images.push_back(reference);
  payload.trailer = std::string(prompts::kQueryGenerationFooter);
  return payload;
}

Stage1Queries parse_stage1_queries(std::string_view raw) {
  const std::string text = strip_code_fence(raw);
  if (auto obj = extract_json_object(text); obj && obj->contains("sentence1")) {
    Stage1Queries q;
    if ((*obj)["sentence1"].is_string()) q.sentence1 = trim((*obj)["sentence1"].get<std::string>());
    if (obj->contains("sentence2") && (*obj)["sentence2"].is_string()) q.sentence2 = trim((*obj)["sentence2"].get<std::string>());
    if (q.sentence1.empty()) throw Error(ErrorKind::MalformedResponse, "sentence1 is empty");
    return q;
  }

  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    lines.push_back(clean_sentence_line(text.substr(start, end == std::string::npos ? std::string::npos : end - start)));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  Stage1Queries q;
  std::size_t i = 0;
  while (i < lines.size() && lines[i].empty()) ++i;
  if (i == lines.size()) throw Error(ErrorKind::MalformedResponse, "reply has no sentence1");
  q.sentence1 = lines[i++];
  while (i < lines.size() && lines[i].empty()) ++i;
  if (i < lines.size()) q.sentence2 = lines[i];
  return q;
}

std::string sentence1_key(std::string_view query_id) { return std::string(query_id) + ":sentence1"; }
std::string composed_key(std::string_view query_id) { return std::string(query_id) + ":composed"; }

std::array<CandidateGroup, 3> retrieve_candidate_groups(const QueryRecord& query, const EmbeddingMatrix& images,
                                                        std::span<const float> sentence1_embedding,
                                                        std::optional<std::span<const float>> composed_embedding,
                                                        const std::string& original_target_id,
                                                        const Stage1Config& cfg) {
  if (cfg.k == 0) throw Error(ErrorKind::InvalidArgument, "k must be at least 1");
  const auto target_row = images.row(original_target_id);  // MissingEmbedding when absent
  const auto& skip = query.reference_id;
  std::array<CandidateGroup, 3> groups;
  groups[0].criterion = Criterion::TextualToModification;
  groups[0].candidates = ranked_excluding(images, sentence1_embedding, skip, cfg.k, query.query_id);
  groups[1].criterion = Criterion::Compositional;
  groups[1].candidates =
      ranked_excluding(images, composed_embedding.value_or(sentence1_embedding), skip, cfg.k, query.query_id);
  groups[2].criterion = Criterion::VisualToOriginalTarget;
  groups[2].candidates = ranked_excluding(images, target_row, skip, cfg.k, query.query_id);
  return groups;
}

PromptPayload build_confidence_prompt(const CandidateGroup& group, const ImageRef& reference,
                                      std::span<const std::string> mod_texts,
                                      const std::function<ImageRef(const std::string&)>& image_for) {
  if (group.candidates.entries.empty()) throw Error(ErrorKind::EmptyGroup, "candidate group is empty");
  std::vector<std::string> names;
  for (const auto& e : group.candidates.entries) names.push_back(e.id);
  PromptPayload payload;
  payload.text = prompts::render(prompts::kConfidenceScoringTemplate,
                                 {{"ref_image_name", reference.id},
                                  {"relative_captions", prompts::quoted_list({mod_texts.begin(), mod_texts.end()})},
                                  {"top_k_names", prompts::quoted_list(names)}});
  payload.images.push_back(reference);
  for (const auto& name : names) payload.images.push_back(image_for ? image_for(name) : ImageRef{name, {}, {}});
  payload.trailer = std::string(prompts::kConfidenceScoringFooter);
  payload.prompt_version = std::string(prompts::kConfidenceScoringVersion);
  return payload;
}

std::map<std::string, double> parse_confidence_scores(std::string_view raw, const CandidateGroup& group) {
  auto obj = extract_json_object(raw);
  if (!obj) throw Error(ErrorKind::MalformedResponse, "no JSON object in scoring reply");
  for (const char* wrapper : {"scores", "confidences"}) {
    if (obj->size() == 1 && obj->contains(wrapper) && (*obj)[wrapper].is_object()) {
      obj = json((*obj)[wrapper]);
    }
  }
  std::map<std::string, double> out;
  for (const auto& e : group.candidates.entries) {
    if (!obj->contains(e.id)) throw Error(ErrorKind::SchemaViolation, "no score for candidate '" + e.id + "'");
    const auto& v = obj->at(e.id);
    if (!v.is_number()) throw Error(ErrorKind::SchemaViolation, "score for '" + e.id + "' is not a number");
    const double c = v.get<double>();
    if (!(c >= 0.0 && c <= 1.0)) {
      throw Error(ErrorKind::SchemaViolation, "score " + std::to_string(c) + " for '" + e.id + "' is outside [0, 1]");
    }
    out[e.id] = c;
  }
  return out;
}

MultiTargetRecord select_multi_targets(const QueryRecord& query, std::span<const CandidateGroup> groups,
                                       const Stage1Config& cfg) {
  std::map<std::string, ValidTarget> pool;
  for (const auto& group : groups) {
    for (const auto& [id, confidence] : group.confidences) {
      const bool passes = cfg.strict_threshold ? confidence > cfg.tau : confidence >= cfg.tau;
      if (!passes) continue;
      auto [it, inserted] = pool.try_emplace(id, ValidTarget{id, confidence, group.criterion});
      if (!inserted && confidence > it->second.confidence) it->second = {id, confidence, group.criterion};
    }
  }
  bool found_new = false;
  for (const auto& [id, _] : pool) found_new = found_new || query.gt_ids.count(id) == 0;
  for (const auto& gt : query.gt_ids) pool[gt] = {gt, 1.0, Criterion::OriginalGroundTruth};

  MultiTargetRecord record;
  record.query = query;
  for (auto& [_, target] : pool) record.valid_targets.push_back(std::move(target));
  record.excluded = !found_new;
  if (record.excluded) record.reason = "no candidate reached the confidence threshold";
  return record;
}

MultiTargetRecord score_and_select(Provider& provider, const QueryRecord& query,
                                   std::array<CandidateGroup, 3> groups, const Stage1Config& cfg,
                                   const std::function<ImageRef(const std::string&)>& image_for) {
  const ImageRef reference = image_for ? image_for(query.reference_id) : ImageRef{query.reference_id, {}, {}};
  for (auto& group : groups) {
    if (group.candidates.entries.empty()) continue;
    const auto payload = build_confidence_prompt(group, reference, query.mod_texts, image_for);
    const int attempts = 1 + std::max(0, cfg.max_parse_retries);
    for (int attempt = 1;; ++attempt) {
      const auto reply = provider.chat(payload);
      try {
        group.confidences = parse_confidence_scores(reply.content, group);
        break;
      } catch (const Error& e) {
        std::cerr << "warning: query '" << query.query_id << "' " << to_string(group.criterion) << " scoring attempt "
                  << attempt << "/" << attempts << ": " << e.what() << "\n  raw reply: " << reply.content << '\n';
        if (attempt >= attempts) throw;
      }
    }
  }
  return select_multi_targets(query, groups, cfg);
}

std::uint64_t SplitMix64::next() noexcept {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

TripletDraw sample_contrastive_triplet(const MultiTargetRecord& record, std::uint64_t seed) {
  std::vector<std::string> pool;
  for (const auto& t : record.valid_targets) pool.push_back(t.id);
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  if (pool.size() < 3) {
    throw Error(ErrorKind::InsufficientTargets, "query '" + record.query.query_id + "' has " +
                                                    std::to_string(pool.size()) + " valid targets, needs 3");
  }
  SplitMix64 rng(seed ^ fnv1a64(record.query.query_id));
  for (std::size_t i = pool.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next() % (i + 1));
    std::swap(pool[i], pool[j]);
  }
  return {pool[0], {pool[1], pool[2]}};
}

std::string require_single_sentence(std::string_view raw) {
  std::string text = strip_quotes(strip_code_fence(raw));
  if (text.empty()) throw Error(ErrorKind::MalformedResponse, "empty refinement");
  if (text.find('\n') != std::string::npos) throw Error(ErrorKind::MalformedResponse, "refinement spans several lines");
  static const std::regex boundary(R"([.!?]+["')\]]*\s+\S)");
  if (std::regex_search(text, boundary)) throw Error(ErrorKind::MalformedResponse, "refinement has more than one sentence");
  return text;
}

PromptPayload build_refinement_prompt(const ImageRef& reference, const ImageRef& target,
                                      std::span<const ImageRef> distractors,
                                      std::span<const std::string> original_captions) {
  PromptPayload payload;
  payload.text = prompts::render(prompts::kRefinementTemplate,
                                 {{"original_captions",
                                   prompts::quoted_list({original_captions.begin(), original_captions.end()})}});
  payload.images.push_back(reference);
  payload.images.push_back(target);
  payload.images.insert(payload.images.end(), distractors.begin(), distractors.end());
  payload.images_first = true;
  payload.prompt_version = std::string(prompts::kRefinementVersion);
  return payload;
}

std::string rewrite_modification(Provider& provider, const ImageRef& reference, const ImageRef& target,
                                 std::span<const ImageRef> distractors,
                                 std::span<const std::string> original_captions) {
  const auto reply = provider.chat(build_refinement_prompt(reference, target, distractors, original_captions));
  try {
    return require_single_sentence(reply.content);
  } catch (const Error&) {
    std::cerr << "warning: rejected refinement for target '" << target.id << "': " << reply.content << '\n';
    throw;
  }
}

MultiTargetStats multi_target_stats(std::span<const MultiTargetRecord> records) {
  MultiTargetStats stats;
  std::size_t pool_total = 0;
  for (const auto& r : records) {
    ++stats.total;
    if (r.excluded) {
      ++stats.excluded;
    } else {
      ++stats.retained;
      pool_total += r.valid_targets.size();
    }
  }
  stats.mean_pool_size = stats.retained == 0 ? 0.0 : static_cast<double>(pool_total) / static_cast<double>(stats.retained);
  return stats;
}

json to_json(const MultiTargetRecord& record) {
  json targets = json::array();
  for (const auto& t : record.valid_targets) {
    targets.push_back({{"id", t.id}, {"confidence", t.confidence}, {"criterion", to_string(t.criterion)}});
  }
  return json{{"query_id", record.query.query_id},
              {"valid_targets", targets},
              {"excluded", record.excluded},
              {"reason", record.excluded ? json(record.reason) : json(nullptr)}};
}

MultiTargetRecord multi_target_from_json(const json& j, const std::map<std::string, QueryRecord>& dataset) {
  MultiTargetRecord r;
  const auto qid = j.at("query_id").get<std::string>();
  auto it = dataset.find(qid);
  if (it == dataset.end()) throw Error(ErrorKind::MissingQueryOutcome, "query '" + qid + "' is not in the dataset");
  r.query = it->second;
  for (const auto& t : j.at("valid_targets")) {
    r.valid_targets.push_back(
        {t.at("id").get<std::string>(), t.at("confidence").get<double>(), parse_criterion(t.at("criterion").get<std::string>())});
  }
  r.excluded = j.at("excluded").get<bool>();
  if (j.contains("reason") && j.at("reason").is_string()) r.reason = j.at("reason").get<std::string>();
  return r;
}

json to_json(const SingleTargetTriplet& triplet) {
  return json{{"query_id", triplet.query_id},
              {"target_id", triplet.target_id},
              {"distractor_ids", triplet.distractor_ids},
              {"refined_text", triplet.refined_text},
              {"seed", triplet.seed}};
}

}  // namespace softcir
