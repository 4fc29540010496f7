#include "softcir/softfilter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "softcir/error.hpp"

namespace softcir {
namespace {

void require_finite(const ScoreTriple& t) {
  if (!std::isfinite(t.base) || !std::isfinite(t.reward) || !std::isfinite(t.penalty)) {
    throw Error(ErrorKind::NonFiniteValue, "score triple has a NaN/Inf component");
  }
}

}  // namespace

std::string_view to_string(Variant variant) noexcept {
  switch (variant) {
    case Variant::BaseOnly: return "base";
    case Variant::RewardOnly: return "reward";
    case Variant::PenaltyOnly: return "penalty";
    case Variant::Full: return "full";
  }
  return "full";
}

Variant parse_variant(std::string_view text) {
  if (text == "base" || text == "BaseOnly") return Variant::BaseOnly;
  if (text == "reward" || text == "RewardOnly") return Variant::RewardOnly;
  if (text == "penalty" || text == "PenaltyOnly") return Variant::PenaltyOnly;
  if (text == "full" || text == "Full") return Variant::Full;
  throw Error(ErrorKind::InvalidArgument, "unknown variant '" + std::string(text) + "'");
}

std::string_view to_string(BaseStyle style) noexcept {
  return style == BaseStyle::GenerativeQuery ? "generative-query" : "inversion";
}

BaseStyle parse_base_style(std::string_view text) {
  if (text == "generative-query") return BaseStyle::GenerativeQuery;
  if (text == "inversion") return BaseStyle::Inversion;
  throw Error(ErrorKind::InvalidArgument, "unknown base style '" + std::string(text) + "'");
}

double default_lambda(BaseStyle style) noexcept { return style == BaseStyle::GenerativeQuery ? 1.0 : 0.2; }

double soft_score(const ScoreTriple& t) {
  require_finite(t);
  return t.base * ((t.reward + 1.0 - t.penalty) / 2.0);
}

double fuse(double base, double soft, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(ErrorKind::LambdaOutOfRange, "lambda " + std::to_string(lambda) + " is outside [0, 1]");
  }
  return (1.0 - lambda) * base + lambda * soft;
}

double variant_score(const ScoreTriple& t, Variant variant) {
  require_finite(t);
  switch (variant) {
    case Variant::Full: return soft_score(t);
    case Variant::RewardOnly: return t.base * t.reward;
    case Variant::PenaltyOnly: return t.base * (1.0 - t.penalty);
    case Variant::BaseOnly: return t.base;
  }
  return t.base;
}

RerankOutcome rerank(const CandidateColumns& columns, const RerankConfig& cfg, std::string query_id) {
  const std::size_t n = columns.ids.size();
  if (columns.base.size() != n || columns.reward.size() != n || columns.penalty.size() != n) {
    throw Error(ErrorKind::IdSetMismatch, "candidate columns differ in length");
  }
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) {
    throw Error(ErrorKind::LambdaOutOfRange, "lambda " + std::to_string(cfg.lambda) + " is outside [0, 1]");
  }

  std::vector<double> base(columns.base.begin(), columns.base.end());
  if (cfg.minmax_base && n > 0) {
    const auto [lo, hi] = std::minmax_element(base.begin(), base.end());
    const double low = *lo;
    const double range = *hi - *lo;
    for (double& b : base) b = range > 0.0 ? (b - low) / range : 1.0;
  }

  RerankOutcome outcome;
  std::vector<ScoreBreakdown> rows(n);
  std::vector<double> finals(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ScoreTriple t{base[i], columns.reward[i], columns.penalty[i]};
    const double soft = variant_score(t, cfg.variant);
    // (1 - lambda) * b + lambda * b can be an ulp off b; BaseOnly must rank exactly by b.
    const double final_score = cfg.variant == Variant::BaseOnly ? t.base : fuse(t.base, soft, cfg.lambda);
    if (t.base < 0.0) ++outcome.negative_base_count;
    rows[i] = {columns.ids[i], t.base, t.reward, t.penalty, soft, final_score};
    finals[i] = final_score;
  }

  const auto order = rank_order(columns.ids, finals);
  outcome.ranked.query_id = std::move(query_id);
  outcome.ranked.entries.reserve(n);
  outcome.breakdown.reserve(n);
  for (std::size_t idx : order) {
    outcome.ranked.entries.push_back({columns.ids[idx], finals[idx]});
    outcome.breakdown.push_back(std::move(rows[idx]));
  }
  return outcome;
}

RerankOutcome rerank(const ScoreMap& base, const ScoreMap& reward, const ScoreMap& penalty,
                     const RerankConfig& cfg, std::string query_id) {
  if (reward.size() != base.size() || penalty.size() != base.size()) {
    throw Error(ErrorKind::IdSetMismatch, "base, reward and penalty maps cover different candidates");
  }
  std::vector<std::string> ids;
  ids.reserve(base.size());
  for (const auto& [id, _] : base) ids.push_back(id);
  std::sort(ids.begin(), ids.end());

  std::vector<double> b(ids.size()), r(ids.size()), p(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto rit = reward.find(ids[i]);
    auto pit = penalty.find(ids[i]);
    if (rit == reward.end() || pit == penalty.end()) {
      throw Error(ErrorKind::IdSetMismatch, "candidate '" + ids[i] + "' lacks a reward or penalty score");
    }
    b[i] = base.at(ids[i]);
    r[i] = rit->second;
    p[i] = pit->second;
  }
  return rerank(CandidateColumns{ids, b, r, p}, cfg, std::move(query_id));
}

QueryScores assemble_query_scores(const std::string& query_id, const ScoreMap& base,
                                  const EmbeddingMatrix& images,
                                  std::optional<std::span<const float>> prescriptive,
                                  std::optional<std::span<const float>> proscriptive) {
  QueryScores out;
  out.query_id = query_id;
  out.ids.reserve(base.size());
  for (const auto& [id, _] : base) out.ids.push_back(id);
  std::sort(out.ids.begin(), out.ids.end());

  const std::size_t n = out.ids.size();
  out.base.resize(n);
  out.reward.assign(n, 0.0);
  out.penalty.assign(n, 0.0);
  for (const auto* constraint : {&prescriptive, &proscriptive}) {
    if (*constraint && constraint->value().size() != images.dim()) {
      throw Error(ErrorKind::DimensionMismatch, "constraint embedding width does not match the image store");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.base[i] = base.at(out.ids[i]);
    const auto row = images.row(out.ids[i]);
    if (prescriptive) out.reward[i] = dot(row, *prescriptive);
    if (proscriptive) out.penalty[i] = dot(row, *proscriptive);
  }
  return out;
}

}  // namespace softcir
