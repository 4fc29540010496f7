#include "softcir/vecstore.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "json.hpp"

#include "softcir/error.hpp"

namespace softcir {
namespace {

constexpr std::array<char, 8> kMagic = {'S', 'F', 'T', 'E', 'M', 'B', '1', '\0'};
constexpr std::uint8_t kDtypeFloat32 = 0x01;
constexpr std::uint8_t kFlagNormalized = 0x01;
constexpr std::size_t kHeaderSize = 18;
constexpr double kNormTolerance = 1e-4;

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32_le(const unsigned char* p) noexcept {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

double row_norm(std::span<const float> row) {
  double sum = 0.0;
  for (float v : row) sum += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sum);
}

void check_finite(std::span<const float> values, const std::string& id) {
  for (float v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteValue, "row '" + id + "' has a NaN/Inf entry");
  }
}

}  // namespace

EmbeddingMatrix EmbeddingMatrix::from_rows(std::span<const EmbeddingRow> rows, bool normalize) {
  if (rows.empty()) throw Error(ErrorKind::InvalidArgument, "no rows to import");
  const std::size_t dim = rows.front().values.size();
  if (dim == 0) throw Error(ErrorKind::DimensionMismatch, "vector width must be at least 1");

  std::vector<std::string> ids;
  std::vector<float> data;
  ids.reserve(rows.size());
  data.reserve(rows.size() * dim);
  for (const auto& row : rows) {
    if (row.values.size() != dim) {
      throw Error(ErrorKind::DimensionMismatch, "row '" + row.id + "' has width " +
                                                    std::to_string(row.values.size()) + ", expected " +
                                                    std::to_string(dim));
    }
    check_finite(row.values, row.id);
    ids.push_back(row.id);
    if (normalize) {
      const double norm = row_norm(row.values);
      if (norm == 0.0) throw Error(ErrorKind::ZeroVector, "row '" + row.id + "' cannot be normalized");
      for (float v : row.values) data.push_back(static_cast<float>(v / norm));
    } else {
      data.insert(data.end(), row.values.begin(), row.values.end());
    }
  }
  return from_buffer(std::move(ids), dim, std::move(data), normalize);
}

EmbeddingMatrix EmbeddingMatrix::from_buffer(std::vector<std::string> ids, std::size_t dim,
                                             std::vector<float> data, bool normalized) {
  if (dim == 0) throw Error(ErrorKind::DimensionMismatch, "vector width must be at least 1");
  if (data.size() != ids.size() * dim) {
    throw Error(ErrorKind::DimensionMismatch, "buffer holds " + std::to_string(data.size()) +
                                                  " values, expected " + std::to_string(ids.size() * dim));
  }
  EmbeddingMatrix m;
  m.ids_ = std::move(ids);
  m.dim_ = dim;
  m.data_ = std::move(data);
  m.normalized_ = normalized;
  m.build_index();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    check_finite(m.row(i), m.ids_[i]);
    if (normalized && std::abs(row_norm(m.row(i)) - 1.0) > kNormTolerance) {
      throw Error(ErrorKind::InvalidArgument, "row '" + m.ids_[i] + "' is flagged normalized but is not unit norm");
    }
  }
  return m;
}

void EmbeddingMatrix::build_index() {
  index_.clear();
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw Error(ErrorKind::DuplicateId, "id '" + ids_[i] + "' repeats");
  }
}

std::optional<std::size_t> EmbeddingMatrix::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const float> EmbeddingMatrix::row(const std::string& id) const {
  auto idx = find(id);
  if (!idx) throw Error(ErrorKind::MissingEmbedding, "no embedding for id '" + id + "'");
  return row(*idx);
}

bool EmbeddingMatrix::operator==(const EmbeddingMatrix& other) const {
  if (ids_ != other.ids_ || dim_ != other.dim_ || normalized_ != other.normalized_) return false;
  if (data_.size() != other.data_.size()) return false;
  // Bit equality, so -0.0f and 0.0f differ.
  return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

EmbeddingMatrix import_embeddings(std::span<const EmbeddingRow> rows, bool normalize) {
  return EmbeddingMatrix::from_rows(rows, normalize);
}

float dot(std::span<const float> a, std::span<const float> b) noexcept {
  const std::size_t n = a.size();
  const float* pa = a.data();
  const float* pb = b.data();
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int lane = 0; lane < 8; ++lane) acc[lane] += pa[i + lane] * pb[i + lane];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += pa[i] * pb[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

std::vector<double> similarities(const EmbeddingMatrix& store, std::span<const float> query) {
  if (query.size() != store.dim()) {
    throw Error(ErrorKind::DimensionMismatch, "query width " + std::to_string(query.size()) +
                                                  " does not match store width " + std::to_string(store.dim()));
  }
  std::vector<double> out(store.rows());
  for (std::size_t i = 0; i < store.rows(); ++i) out[i] = dot(store.row(i), query);
  return out;
}

ScoreMap similarity_map(const EmbeddingMatrix& store, std::span<const float> query) {
  const auto values = similarities(store, query);
  ScoreMap out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out.emplace(store.ids()[i], values[i]);
  return out;
}

std::vector<std::size_t> rank_order(std::span<const std::string> ids, std::span<const double> scores,
                                    std::size_t k) {
  if (ids.size() != scores.size()) throw Error(ErrorKind::IdSetMismatch, "id and score columns differ in length");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error(ErrorKind::NonFiniteValue, "score for '" + ids[i] + "' is not finite");
  }
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) { return ranks_before(scores[a], ids[a], scores[b], ids[b]); };
  const std::size_t keep = (k == 0) ? order.size() : std::min(k, order.size());
  if (keep < order.size()) {
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), before);
    order.resize(keep);
  } else {
    std::sort(order.begin(), order.end(), before);
  }
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (ids[order[i]] == ids[order[i - 1]]) throw Error(ErrorKind::DuplicateId, "candidate '" + ids[order[i]] + "' repeats");
  }
  return order;
}

RankedList rank_scores(std::span<const std::string> ids, std::span<const double> scores,
                       std::string query_id, std::size_t k) {
  RankedList out;
  out.query_id = std::move(query_id);
  const auto order = rank_order(ids, scores, k);
  out.entries.reserve(order.size());
  for (std::size_t idx : order) out.entries.push_back({ids[idx], scores[idx]});
  return out;
}

RankedList top_k(const ScoreMap& scores, std::size_t k, std::string query_id) {
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "k must be at least 1");
  std::vector<std::string> ids;
  std::vector<double> values;
  ids.reserve(scores.size());
  values.reserve(scores.size());
  for (const auto& [id, score] : scores) {
    ids.push_back(id);
    values.push_back(score);
  }
  return rank_scores(ids, values, std::move(query_id), k);
}

std::filesystem::path ids_sidecar_path(const std::filesystem::path& store_path) {
  auto sidecar = store_path;
  sidecar.replace_filename(store_path.stem().string() + ".ids.json");
  return sidecar;
}

void write_store(const std::filesystem::path& path, const EmbeddingMatrix& matrix) {
  if (matrix.rows() > 0xFFFFFFFFull || matrix.dim() > 0xFFFFFFFFull) {
    throw Error(ErrorKind::FormatError, "matrix too large for SFTEMB1");
  }
  std::string bytes;
  bytes.reserve(kHeaderSize + matrix.data().size() * 4);
  bytes.append(kMagic.data(), kMagic.size());
  put_u32_le(bytes, static_cast<std::uint32_t>(matrix.rows()));
  put_u32_le(bytes, static_cast<std::uint32_t>(matrix.dim()));
  bytes.push_back(static_cast<char>(kDtypeFloat32));
  bytes.push_back(static_cast<char>(matrix.normalized() ? kFlagNormalized : 0));
  for (float v : matrix.data()) put_u32_le(bytes, std::bit_cast<std::uint32_t>(v));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "short write to '" + path.string() + "'");

  const auto sidecar = ids_sidecar_path(path);
  std::ofstream ids_out(sidecar, std::ios::binary | std::ios::trunc);
  if (!ids_out) throw Error(ErrorKind::IoError, "cannot open '" + sidecar.string() + "' for writing");
  ids_out << nlohmann::json(matrix.ids()).dump() << '\n';
  if (!ids_out) throw Error(ErrorKind::IoError, "short write to '" + sidecar.string() + "'");
}

EmbeddingMatrix read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() < kHeaderSize) throw Error(ErrorKind::FormatError, "file shorter than the SFTEMB1 header");
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw Error(ErrorKind::FormatError, "bad magic in '" + path.string() + "'");
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t count = get_u32_le(raw + 8);
  const std::uint32_t dim = get_u32_le(raw + 12);
  const std::uint8_t dtype = raw[16];
  const std::uint8_t flags = raw[17];
  if (dtype != kDtypeFloat32) throw Error(ErrorKind::FormatError, "unsupported dtype code " + std::to_string(dtype));
  if (dim == 0) throw Error(ErrorKind::FormatError, "dim must be at least 1");
  const std::uint64_t expected = static_cast<std::uint64_t>(count) * dim * 4u;
  const std::uint64_t payload = bytes.size() - kHeaderSize;
  if (payload != expected) {
    throw Error(ErrorKind::FormatError, "payload is " + std::to_string(payload) + " bytes, header implies " +
                                            std::to_string(expected));
  }
  std::vector<float> data(static_cast<std::size_t>(count) * dim);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(get_u32_le(raw + kHeaderSize + 4 * i));
  }

  const auto sidecar = ids_sidecar_path(path);
  std::ifstream ids_in(sidecar);
  if (!ids_in) throw Error(ErrorKind::IoError, "cannot open id sidecar '" + sidecar.string() + "'");
  std::vector<std::string> ids;
  try {
    ids = nlohmann::json::parse(ids_in).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, "id sidecar '" + sidecar.string() + "' is not a JSON string array: " + e.what());
  }
  if (ids.size() != count) {
    throw Error(ErrorKind::FormatError, "sidecar lists " + std::to_string(ids.size()) + " ids, header says " +
                                            std::to_string(count));
  }
  try {
    return EmbeddingMatrix::from_buffer(std::move(ids), dim, std::move(data), (flags & kFlagNormalized) != 0);
  } catch (const Error& e) {
    throw Error(ErrorKind::FormatError, std::string("'") + path.string() + "': " + e.what());
  }
}

}  // namespace softcir
