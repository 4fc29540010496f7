#pragma once

/// Id-indexed dense embedding storage, the SFTEMB1 file format, and the
/// inner-product / top-k kernels every other module builds on.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace softcir {

/// Candidate id -> score. Iteration order is unspecified; anything that
/// needs an order goes through top_k / rank_scores.
using ScoreMap = std::unordered_map<std::string, double>;

struct RankedEntry {
  std::string id;
  double score = 0.0;

  bool operator==(const RankedEntry&) const = default;
};

/// Scores non-increasing, ties broken by ascending id, ids unique.
struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  bool operator==(const RankedList&) const = default;
};

/// The global ordering rule: higher score first, then ascending id.
inline bool ranks_before(double score_a, const std::string& id_a, double score_b,
                         const std::string& id_b) noexcept {
  if (score_a != score_b) return score_a > score_b;
  return id_a < id_b;
}

struct EmbeddingRow {
  std::string id;
  std::vector<float> values;
};

/// Immutable after construction; safe to share across threads.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  /// Validates shape, uniqueness and finiteness. With normalize=true every
  /// row is rescaled to unit L2 norm and zero rows are rejected.
  static EmbeddingMatrix from_rows(std::span<const EmbeddingRow> rows, bool normalize);

  /// Takes ownership of an already laid-out row-major buffer. Same checks as
  /// from_rows; when normalized is claimed the row norms are verified.
  static EmbeddingMatrix from_buffer(std::vector<std::string> ids, std::size_t dim,
                                     std::vector<float> data, bool normalized);

  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool normalized() const noexcept { return normalized_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::span<const float> data() const noexcept { return data_; }

  std::span<const float> row(std::size_t index) const noexcept {
    return std::span<const float>(data_).subspan(index * dim_, dim_);
  }
  std::optional<std::size_t> find(const std::string& id) const;
  bool contains(const std::string& id) const { return find(id).has_value(); }
  /// Throws MissingEmbedding when the id is absent.
  std::span<const float> row(const std::string& id) const;

  bool operator==(const EmbeddingMatrix& other) const;

 private:
  void build_index();

  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<float> data_;
  bool normalized_ = false;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Convenience wrapper matching the import contract.
EmbeddingMatrix import_embeddings(std::span<const EmbeddingRow> rows, bool normalize = true);

/// Inner product of two equal-length vectors, accumulated in eight float
/// lanes. This is the hot kernel.
float dot(std::span<const float> a, std::span<const float> b) noexcept;

/// One inner product per row, aligned with store.ids().
std::vector<double> similarities(const EmbeddingMatrix& store, std::span<const float> query);

/// Same as similarities() keyed by id.
ScoreMap similarity_map(const EmbeddingMatrix& store, std::span<const float> query);

/// The min(k, |scores|) best entries under ranks_before. Non-finite scores
/// are rejected.
RankedList top_k(const ScoreMap& scores, std::size_t k, std::string query_id = {});

/// Indices of the best min(k, n) candidates in rank order (k = 0 means all).
std::vector<std::size_t> rank_order(std::span<const std::string> ids, std::span<const double> scores,
                                    std::size_t k = 0);

/// Full deterministic sort of parallel id / score columns.
RankedList rank_scores(std::span<const std::string> ids, std::span<const double> scores,
                       std::string query_id = {}, std::size_t k = 0);

/// `<dir>/<stem>.ids.json` for a store at `<dir>/<stem>.<ext>`.
std::filesystem::path ids_sidecar_path(const std::filesystem::path& store_path);

void write_store(const std::filesystem::path& path, const EmbeddingMatrix& matrix);
EmbeddingMatrix read_store(const std::filesystem::path& path);

}  // namespace softcir
