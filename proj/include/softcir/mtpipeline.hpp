#pragma once

/// Two-stage multi-target dataset construction.
///
/// Stage 1 retrieves three top-k candidate groups per query (text query for
/// the modification, composed text query, visual neighbours of the original
/// target), has the chat model score each group, and keeps every candidate
/// whose confidence clears tau. Stage 2 samples a target and two distractors
/// from each pool of at least three and asks the model for a single-sentence
/// modification text that singles out the target.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "softcir/dataset.hpp"
#include "softcir/provider.hpp"
#include "softcir/vecstore.hpp"

namespace softcir {

struct Stage1Config {
  std::size_t k = 10;
  double tau = 0.85;
  /// Use confidence > tau instead of >= tau.
  bool strict_threshold = false;
  int max_parse_retries = 2;
};

enum class Domain { Generic, Fashion };
Domain parse_domain(std::string_view text);

enum class Criterion { TextualToModification, Compositional, VisualToOriginalTarget, OriginalGroundTruth };
std::string_view to_string(Criterion criterion) noexcept;
Criterion parse_criterion(std::string_view text);

struct CandidateGroup {
  Criterion criterion = Criterion::TextualToModification;
  RankedList candidates;
  std::map<std::string, double> confidences;
};

struct ValidTarget {
  std::string id;
  double confidence = 0.0;
  Criterion criterion = Criterion::OriginalGroundTruth;

  bool operator==(const ValidTarget&) const = default;
};

struct MultiTargetRecord {
  QueryRecord query;
  std::vector<ValidTarget> valid_targets;  // ascending id
  bool excluded = false;
  std::string reason;
};

struct SingleTargetTriplet {
  std::string query_id;
  std::string target_id;
  std::array<std::string, 2> distractor_ids;
  std::string refined_text;
  std::uint64_t seed = 0;
};

struct Stage1Queries {
  std::string sentence1;
  std::string sentence2;  // may be empty

  /// sentence1 + " " + sentence2, or sentence1 alone when sentence2 is empty.
  std::string composed() const;
};

/// Throws CaptionCountMismatch: generic takes one caption, fashion two.
PromptPayload build_stage1_query_prompt(std::span<const std::string> mod_texts, Domain domain,
                                        const ImageRef& reference);

/// Throws MalformedResponse when sentence1 is missing.
Stage1Queries parse_stage1_queries(std::string_view raw);

/// Text-store row ids for a query's generated sentences.
std::string sentence1_key(std::string_view query_id);
std::string composed_key(std::string_view query_id);

/// Groups in criterion order. A missing composed embedding means sentence2
/// was empty, so group 2 reuses the sentence1 query. The reference image is
/// never a candidate. Throws MissingEmbedding.
std::array<CandidateGroup, 3> retrieve_candidate_groups(const QueryRecord& query, const EmbeddingMatrix& images,
                                                        std::span<const float> sentence1_embedding,
                                                        std::optional<std::span<const float>> composed_embedding,
                                                        const std::string& original_target_id,
                                                        const Stage1Config& cfg);

/// Throws EmptyGroup.
PromptPayload build_confidence_prompt(const CandidateGroup& group, const ImageRef& reference,
                                      std::span<const std::string> mod_texts,
                                      const std::function<ImageRef(const std::string&)>& image_for);

/// Throws MalformedResponse or SchemaViolation (missing id, non-number,
/// score outside [0, 1]).
std::map<std::string, double> parse_confidence_scores(std::string_view raw, const CandidateGroup& group);

/// Union over groups of candidates clearing tau, deduplicated by maximum
/// confidence (first group wins ties). Original targets are always kept with
/// confidence 1.0. Excluded exactly when nothing beyond them qualifies.
MultiTargetRecord select_multi_targets(const QueryRecord& query, std::span<const CandidateGroup> groups,
                                       const Stage1Config& cfg);

/// Scores every group through the provider and applies select_multi_targets.
MultiTargetRecord score_and_select(Provider& provider, const QueryRecord& query,
                                   std::array<CandidateGroup, 3> groups, const Stage1Config& cfg,
                                   const std::function<ImageRef(const std::string&)>& image_for);

/// SplitMix64 step (Steele, Lea and Flood's constants).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}
  std::uint64_t next() noexcept;

 private:
  std::uint64_t state_;
};

/// 64-bit FNV-1a over the UTF-8 bytes.
std::uint64_t fnv1a64(std::string_view text) noexcept;

struct TripletDraw {
  std::string target;
  std::array<std::string, 2> distractors;
};

/// Pool sorted by id, Fisher-Yates shuffled with SplitMix64 seeded by
/// seed ^ fnv1a64(query_id); element 0 is the target, 1 and 2 the
/// distractors. Throws InsufficientTargets for pools under three.
TripletDraw sample_contrastive_triplet(const MultiTargetRecord& record, std::uint64_t seed);

/// Throws MalformedResponse unless the reply is one non-empty sentence.
std::string require_single_sentence(std::string_view raw);

PromptPayload build_refinement_prompt(const ImageRef& reference, const ImageRef& target,
                                      std::span<const ImageRef> distractors,
                                      std::span<const std::string> original_captions);

std::string rewrite_modification(Provider& provider, const ImageRef& reference, const ImageRef& target,
                                 std::span<const ImageRef> distractors,
                                 std::span<const std::string> original_captions);

struct MultiTargetStats {
  std::size_t total = 0;
  std::size_t retained = 0;
  std::size_t excluded = 0;
  double mean_pool_size = 0.0;  // over retained records
};

MultiTargetStats multi_target_stats(std::span<const MultiTargetRecord> records);

nlohmann::json to_json(const MultiTargetRecord& record);
/// The query fields are looked up in `dataset` by query id.
MultiTargetRecord multi_target_from_json(const nlohmann::json& j, const std::map<std::string, QueryRecord>& dataset);
nlohmann::json to_json(const SingleTargetTriplet& triplet);

}  // namespace softcir
