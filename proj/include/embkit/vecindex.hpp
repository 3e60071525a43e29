#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "embkit/kernels/similarity.hpp"
#include "embkit/model.hpp"

namespace embkit {

struct RankedHit {
  std::string id;
  float score = 0.0F;
  std::size_t rank = 0;

  bool operator==(const RankedHit&) const = default;
};

// Divides every row by its L2 norm (computed in double). Throws a
// degenerate-row error naming the id for norms below 1e-12, and a validation
// error for non-finite rows.
EmbeddingMatrix l2_normalize(const EmbeddingMatrix& matrix);

/// Exact cosine top-k over a normalized matrix.
///
/// The matrix is repacked once into panels; the index keeps a reference to
/// the source matrix for ids, so the matrix must outlive the index. Results
/// are ordered by descending score with ties broken by ascending row, and do
/// not depend on block_size or on the thread count.
class SimilarityIndex {
 public:
  static constexpr std::size_t kDefaultBlockSize = 4096;

  explicit SimilarityIndex(const EmbeddingMatrix& matrix,
                           std::size_t block_size = kDefaultBlockSize);

  std::size_t rows() const noexcept { return matrix_->rows(); }
  std::size_t dim() const noexcept { return matrix_->dim(); }
  std::size_t block_size() const noexcept { return block_size_; }
  const EmbeddingMatrix& matrix() const noexcept { return *matrix_; }

  // Single query; `exclude` holds ids that must not appear (unknown ids are
  // ignored). k = 0 yields an empty list.
  std::vector<RankedHit> topk(std::span<const float> query, std::size_t k,
                              const std::unordered_set<std::string>& exclude = {}) const;

  // Batch of row-major queries, parallel. `excludes` is empty or has one
  // sorted row list per query.
  std::vector<std::vector<ScoredRow>> search(std::span<const float> queries, std::size_t k,
                                             std::span<const ExcludedRows> excludes = {}) const;

 private:
  void check_query(std::span<const float> query) const;

  const EmbeddingMatrix* matrix_;
  kernels::PanelMatrix panels_;
  std::size_t block_size_;
};

struct PoolEntry {
  std::string id;
  std::span<const float> vector;
};

// Top-k restricted to an explicit pool; ties broken by pool order.
std::vector<RankedHit> topk_among(std::span<const float> query, std::span<const PoolEntry> pool,
                                  std::size_t k);

}  // namespace embkit
