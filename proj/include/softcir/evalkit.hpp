#pragma once

/// Retrieval metrics, report aggregation, lambda sweeps and variant ablation.
///
/// AP@K = (1 / min(|gt|, K)) * sum_{i <= min(K, n)} Precision@i * rel(i);
/// mAP@K is the plain mean over queries.

#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "softcir/dataset.hpp"
#include "softcir/softfilter.hpp"
#include "softcir/vecstore.hpp"

namespace softcir {

using IdSet = std::set<std::string>;

/// 1 iff a ground-truth id is among the first min(k, |ranked|) entries.
int recall_at_k(const RankedList& ranked, const IdSet& gt, std::size_t k);

/// Restricts the ranking to subset members (order kept), then recall_at_k.
/// Throws EmptySubsetIntersection.
int recall_subset_at_k(const RankedList& ranked, const IdSet& subset, const IdSet& gt, std::size_t k);

double average_precision_at_k(const RankedList& ranked, const IdSet& gt, std::size_t k);
inline double map_at_k(const RankedList& ranked, const IdSet& gt, std::size_t k) {
  return average_precision_at_k(ranked, gt, k);
}

enum class Metric { Recall, RecallSubset, MAP };

std::string_view to_string(Metric metric) noexcept;
Metric parse_metric(std::string_view text);

struct MetricRow {
  Metric metric = Metric::Recall;
  std::size_t k = 0;
  double lambda = 0.0;
  Variant variant = Variant::Full;
  double value = 0.0;
  std::size_t n_queries = 0;

  bool operator==(const MetricRow&) const = default;
};

struct EvalDiagnostics {
  std::size_t negative_base = 0;      // candidates with s_base < 0
  std::size_t empty_constraints = 0;  // queries lacking one or both constraints
  std::size_t gt_absent = 0;          // queries whose targets are missing from the pool

  bool operator==(const EvalDiagnostics&) const = default;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  std::size_t query_count = 0;
  EvalDiagnostics diagnostics;

  /// Throws InvalidArgument when no such row exists.
  double value(Metric metric, std::size_t k) const;
};

struct EvalOptions {
  std::vector<std::size_t> ks = {1, 5, 10, 50};
  std::vector<Metric> metrics = {Metric::Recall, Metric::RecallSubset, Metric::MAP};
  double lambda = 0.0;
  Variant variant = Variant::BaseOnly;
  std::size_t jobs = 1;
};

/// One ranking per dataset query, keyed by query id. Rows are emitted in
/// metric order, then ascending k. RecallSubset rows only count queries that
/// carry subset ids, and are skipped when none do.
EvalReport evaluate(const std::unordered_map<std::string, RankedList>& runs, std::span<const QueryRecord> dataset,
                    const EvalOptions& options);

EvalReport evaluate(const std::unordered_map<std::string, RerankOutcome>& runs,
                    std::span<const QueryRecord> dataset, const EvalOptions& options);

/// Candidate scores for every query plus per-query constraint presence.
struct ScoredDataset {
  std::vector<QueryRecord> queries;
  std::unordered_map<std::string, QueryScores> scores;
  std::size_t empty_constraint_queries = 0;
};

/// One evaluate() per lambda under the given variant.
std::vector<EvalReport> sweep_lambda(const ScoredDataset& data, std::span<const double> grid, Variant variant,
                                     const EvalOptions& options);

/// BaseOnly, RewardOnly, PenaltyOnly, Full at one lambda, in that order.
std::vector<EvalReport> ablation(const ScoredDataset& data, double lambda, const EvalOptions& options);

/// Rerank every query of a scored dataset.
std::unordered_map<std::string, RerankOutcome> rerank_dataset(const ScoredDataset& data, const RerankConfig& cfg,
                                                              std::size_t jobs = 1);

/// metric,k,lambda,variant,value,n_queries
std::string report_csv(std::span<const EvalReport> reports);
std::string report_table(std::span<const EvalReport> reports);
nlohmann::json report_json(std::span<const EvalReport> reports);

}  // namespace softcir
