#include "softcir/evalkit.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "softcir/dispatch.hpp"
#include "softcir/error.hpp"

namespace softcir {

int recall_at_k(const RankedList& ranked, const IdSet& gt, std::size_t k) {
  const std::size_t n = std::min(k, ranked.entries.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (gt.count(ranked.entries[i].id)) return 1;
  }
  return 0;
}

int recall_subset_at_k(const RankedList& ranked, const IdSet& subset, const IdSet& gt, std::size_t k) {
  RankedList filtered;
  filtered.query_id = ranked.query_id;
  for (const auto& e : ranked.entries) {
    if (subset.count(e.id)) filtered.entries.push_back(e);
  }
  if (filtered.entries.empty()) {
    throw Error(ErrorKind::EmptySubsetIntersection, "query '" + ranked.query_id + "': no subset member is ranked");
  }
  return recall_at_k(filtered, gt, k);
}

double average_precision_at_k(const RankedList& ranked, const IdSet& gt, std::size_t k) {
  if (gt.empty() || k == 0) return 0.0;
  const std::size_t n = std::min(k, ranked.entries.size());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt.count(ranked.entries[i].id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(std::min(gt.size(), k));
}

std::string_view to_string(Metric metric) noexcept {
  switch (metric) {
    case Metric::Recall: return "recall";
    case Metric::RecallSubset: return "recall_subset";
    case Metric::MAP: return "map";
  }
  return "recall";
}

Metric parse_metric(std::string_view text) {
  if (text == "recall" || text == "R") return Metric::Recall;
  if (text == "recall_subset" || text == "Rs") return Metric::RecallSubset;
  if (text == "map" || text == "mAP") return Metric::MAP;
  throw Error(ErrorKind::InvalidArgument, "unknown metric '" + std::string(text) + "'");
}

double EvalReport::value(Metric metric, std::size_t k) const {
  for (const auto& row : rows) {
    if (row.metric == metric && row.k == k) return row.value;
  }
  throw Error(ErrorKind::InvalidArgument, "report has no " + std::string(to_string(metric)) + "@" + std::to_string(k));
}

namespace {

struct PerQuery {
  std::vector<double> values;  // metric-major, then k
  bool has_subset = false;
  bool gt_absent = false;
};

template <class RankingOf>
EvalReport evaluate_impl(std::span<const QueryRecord> dataset, const EvalOptions& options, RankingOf ranking_of) {
  if (dataset.empty()) throw Error(ErrorKind::InvalidArgument, "dataset has no queries");
  if (options.ks.empty()) throw Error(ErrorKind::InvalidArgument, "no cutoffs requested");
  for (std::size_t k : options.ks) {
    if (k == 0) throw Error(ErrorKind::InvalidArgument, "k must be at least 1");
  }
  const std::size_t nk = options.ks.size();
  const std::size_t nm = options.metrics.size();

  std::vector<PerQuery> per(dataset.size());
  parallel_for(dataset.size(), options.jobs, [&](std::size_t qi) {
    const QueryRecord& q = dataset[qi];
    const RankedList& ranked = ranking_of(q);
    PerQuery& out = per[qi];
    out.values.assign(nm * nk, 0.0);
    out.has_subset = q.subset_ids.has_value();
    out.gt_absent = std::none_of(ranked.entries.begin(), ranked.entries.end(),
                                 [&](const RankedEntry& e) { return q.gt_ids.count(e.id) > 0; });
    for (std::size_t mi = 0; mi < nm; ++mi) {
      for (std::size_t ki = 0; ki < nk; ++ki) {
        const std::size_t k = options.ks[ki];
        double v = 0.0;
        switch (options.metrics[mi]) {
          case Metric::Recall: v = recall_at_k(ranked, q.gt_ids, k); break;
          case Metric::RecallSubset:
            if (q.subset_ids) v = recall_subset_at_k(ranked, *q.subset_ids, q.gt_ids, k);
            break;
          case Metric::MAP: v = average_precision_at_k(ranked, q.gt_ids, k); break;
        }
        out.values[mi * nk + ki] = v;
      }
    }
  });

  EvalReport report;
  report.query_count = dataset.size();
  for (const auto& p : per) report.diagnostics.gt_absent += p.gt_absent ? 1 : 0;
  for (std::size_t mi = 0; mi < nm; ++mi) {
    const Metric metric = options.metrics[mi];
    std::size_t counted = 0;
    for (const auto& p : per) counted += (metric != Metric::RecallSubset || p.has_subset) ? 1 : 0;
    if (counted == 0) continue;
    for (std::size_t ki = 0; ki < nk; ++ki) {
      double sum = 0.0;
      for (const auto& p : per) {
        if (metric == Metric::RecallSubset && !p.has_subset) continue;
        sum += p.values[mi * nk + ki];
      }
      report.rows.push_back(
          {metric, options.ks[ki], options.lambda, options.variant, sum / static_cast<double>(counted), counted});
    }
  }
  return report;
}

}  // namespace

EvalReport evaluate(const std::unordered_map<std::string, RankedList>& runs, std::span<const QueryRecord> dataset,
                    const EvalOptions& options) {
  for (const auto& q : dataset) {
    if (!runs.count(q.query_id)) throw Error(ErrorKind::MissingQueryOutcome, "no ranking for query '" + q.query_id + "'");
  }
  return evaluate_impl(dataset, options, [&](const QueryRecord& q) -> const RankedList& { return runs.at(q.query_id); });
}

EvalReport evaluate(const std::unordered_map<std::string, RerankOutcome>& runs,
                    std::span<const QueryRecord> dataset, const EvalOptions& options) {
  for (const auto& q : dataset) {
    if (!runs.count(q.query_id)) throw Error(ErrorKind::MissingQueryOutcome, "no outcome for query '" + q.query_id + "'");
  }
  auto report = evaluate_impl(dataset, options,
                              [&](const QueryRecord& q) -> const RankedList& { return runs.at(q.query_id).ranked; });
  for (const auto& q : dataset) report.diagnostics.negative_base += runs.at(q.query_id).negative_base_count;
  return report;
}

std::unordered_map<std::string, RerankOutcome> rerank_dataset(const ScoredDataset& data, const RerankConfig& cfg,
                                                              std::size_t jobs) {
  std::vector<RerankOutcome> outcomes(data.queries.size());
  parallel_for(data.queries.size(), jobs, [&](std::size_t i) {
    const auto& qid = data.queries[i].query_id;
    auto it = data.scores.find(qid);
    if (it == data.scores.end()) throw Error(ErrorKind::MissingQueryOutcome, "no candidate scores for query '" + qid + "'");
    outcomes[i] = rerank(it->second.columns(), cfg, qid);
  });
  std::unordered_map<std::string, RerankOutcome> out;
  out.reserve(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) out.emplace(data.queries[i].query_id, std::move(outcomes[i]));
  return out;
}

std::vector<EvalReport> sweep_lambda(const ScoredDataset& data, std::span<const double> grid, Variant variant,
                                     const EvalOptions& options) {
  for (double lambda : grid) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      throw Error(ErrorKind::LambdaOutOfRange, "grid value " + std::to_string(lambda) + " is outside [0, 1]");
    }
  }
  std::vector<EvalReport> reports;
  reports.reserve(grid.size());
  for (double lambda : grid) {
    RerankConfig cfg;
    cfg.lambda = lambda;
    cfg.variant = variant;
    EvalOptions opts = options;
    opts.lambda = lambda;
    opts.variant = variant;
    auto report = evaluate(rerank_dataset(data, cfg, options.jobs), data.queries, opts);
    report.diagnostics.empty_constraints = data.empty_constraint_queries;
    reports.push_back(std::move(report));
  }
  return reports;
}

std::vector<EvalReport> ablation(const ScoredDataset& data, double lambda, const EvalOptions& options) {
  std::vector<EvalReport> reports;
  for (Variant variant : kAllVariants) {
    const double grid[] = {lambda};
    auto one = sweep_lambda(data, grid, variant, options);
    reports.push_back(std::move(one.front()));
  }
  return reports;
}

std::string report_csv(std::span<const EvalReport> reports) {
  std::string out = "metric,k,lambda,variant,value,n_queries\n";
  for (const auto& report : reports) {
    for (const auto& row : report.rows) {
      out += std::string(to_string(row.metric)) + "," + std::to_string(row.k) + "," + format_double(row.lambda) + "," +
             std::string(to_string(row.variant)) + "," + format_double(row.value) + "," +
             std::to_string(row.n_queries) + "\n";
    }
  }
  return out;
}

std::string report_table(std::span<const EvalReport> reports) {
  std::ostringstream os;
  os << std::left << std::setw(15) << "metric" << std::setw(6) << "k" << std::setw(8) << "lambda" << std::setw(9)
     << "variant" << std::right << std::setw(10) << "value" << std::setw(10) << "queries" << '\n';
  for (const auto& report : reports) {
    for (const auto& row : report.rows) {
      os << std::left << std::setw(15) << to_string(row.metric) << std::setw(6) << row.k << std::setw(8)
         << format_double(row.lambda) << std::setw(9) << to_string(row.variant) << std::right << std::setw(10)
         << std::fixed << std::setprecision(2) << row.value * 100.0 << std::setw(10) << row.n_queries << '\n';
    }
    os << "  (" << report.query_count << " queries; negative base scores: " << report.diagnostics.negative_base
       << "; queries missing a constraint: " << report.diagnostics.empty_constraints
       << "; targets absent from pool: " << report.diagnostics.gt_absent << ")\n";
  }
  os << "Values are percentages. The soft modulation factor (reward + 1 - penalty) / 2 is unclamped and lies in "
        "[-0.5, 1.5] for cosine inputs.\n";
  return os.str();
}

nlohmann::json report_json(std::span<const EvalReport> reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& report : reports) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : report.rows) {
      rows.push_back({{"metric", to_string(row.metric)},
                      {"k", row.k},
                      {"lambda", row.lambda},
                      {"variant", to_string(row.variant)},
                      {"value", row.value},
                      {"n_queries", row.n_queries}});
    }
    out.push_back({{"rows", rows},
                   {"query_count", report.query_count},
                   {"diagnostics",
                    {{"negative_base", report.diagnostics.negative_base},
                     {"empty_constraints", report.diagnostics.empty_constraints},
                     {"gt_absent", report.diagnostics.gt_absent}}}});
  }
  return out;
}

}  // namespace softcir
