#pragma once

/// Soft filtering with dual textual constraints.
///
/// Each candidate carries three similarities: the base retriever score, the
/// score against the prescriptive (must-have) caption and the score against
/// the proscriptive (must-avoid) caption. The soft score multiplies the base
/// score by a modulation factor (reward + 1 - penalty) / 2, which lies in
/// [-0.5, 1.5] for cosine inputs and is deliberately not clamped. The final
/// ranking score is the convex blend (1 - lambda) * base + lambda * soft.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "softcir/vecstore.hpp"

namespace softcir {

struct ScoreTriple {
  double base = 0.0;
  double reward = 0.0;
  double penalty = 0.0;
};

enum class Variant { BaseOnly, RewardOnly, PenaltyOnly, Full };

/// Fixed report order.
inline constexpr Variant kAllVariants[] = {Variant::BaseOnly, Variant::RewardOnly, Variant::PenaltyOnly,
                                           Variant::Full};

std::string_view to_string(Variant variant) noexcept;
/// Accepts base|reward|penalty|full (and the long names); throws InvalidArgument.
Variant parse_variant(std::string_view text);

/// Where the base scores come from. Generative-query retrievers (CIReVL
/// style) default to lambda 1.0, textual-inversion ones (SEARLE style) to 0.2.
enum class BaseStyle { GenerativeQuery, Inversion };

std::string_view to_string(BaseStyle style) noexcept;
BaseStyle parse_base_style(std::string_view text);
double default_lambda(BaseStyle style) noexcept;

struct RerankConfig {
  double lambda = 1.0;
  Variant variant = Variant::Full;
  /// Per-query min-max rescaling of base scores to [0, 1] before scoring.
  bool minmax_base = false;
};

/// base * (reward + 1 - penalty) / 2.
double soft_score(const ScoreTriple& t);

/// (1 - lambda) * base + lambda * soft. Throws LambdaOutOfRange.
double fuse(double base, double soft, double lambda);

/// The soft term fed to fuse() for an ablation variant.
double variant_score(const ScoreTriple& t, Variant variant);

struct ScoreBreakdown {
  std::string id;
  double base = 0.0;
  double reward = 0.0;
  double penalty = 0.0;
  double soft = 0.0;
  double final_score = 0.0;
};

struct RerankOutcome {
  RankedList ranked;                     // by final score
  std::vector<ScoreBreakdown> breakdown;  // same order as ranked
  std::size_t negative_base_count = 0;
};

/// Columnar view of one query's candidates; the three spans are aligned with ids.
struct CandidateColumns {
  std::span<const std::string> ids;
  std::span<const double> base;
  std::span<const double> reward;
  std::span<const double> penalty;
};

RerankOutcome rerank(const CandidateColumns& columns, const RerankConfig& cfg, std::string query_id = {});

/// Map form. The three maps must share one id set (IdSetMismatch otherwise).
RerankOutcome rerank(const ScoreMap& base, const ScoreMap& reward, const ScoreMap& penalty,
                     const RerankConfig& cfg, std::string query_id = {});

/// Owned per-query candidate scores, ids in ascending order.
struct QueryScores {
  std::string query_id;
  std::vector<std::string> ids;
  std::vector<double> base;
  std::vector<double> reward;
  std::vector<double> penalty;

  CandidateColumns columns() const { return {ids, base, reward, penalty}; }
};

/// Candidate-vs-constraint similarities. An absent constraint embedding
/// means that constraint is missing, and every candidate gets 0 for it.
/// Candidates absent from the image store raise MissingEmbedding.
QueryScores assemble_query_scores(const std::string& query_id, const ScoreMap& base,
                                  const EmbeddingMatrix& images,
                                  std::optional<std::span<const float>> prescriptive,
                                  std::optional<std::span<const float>> proscriptive);

}  // namespace softcir
