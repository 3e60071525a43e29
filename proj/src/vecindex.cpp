#include "embkit/vecindex.hpp"

#include <algorithm>
#include <cmath>

#include "embkit/error.hpp"

namespace embkit {

namespace {

void require_unit(std::span<const float> v, const char* what) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (!(std::abs(norm - 1.0) <= EmbeddingMatrix::kUnitTolerance)) {
    throw Error(ErrorKind::validation,
                std::string(what) + " must be unit-norm (got norm " + std::to_string(norm) + ")");
  }
}

}  // namespace

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& matrix) {
  const std::size_t d = matrix.dim();
  std::vector<float> out(matrix.values().size());
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    const auto row = matrix.row(r);
    double sq = 0.0;
    for (float v : row) {
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::validation, "row '" + matrix.id(r) + "' contains NaN/Inf");
      }
      sq += static_cast<double>(v) * v;
    }
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) {
      throw Error(ErrorKind::degenerate_row,
                  "row '" + matrix.id(r) + "' has (near) zero norm and cannot be normalized");
    }
    for (std::size_t j = 0; j < d; ++j) {
      out[r * d + j] = static_cast<float>(static_cast<double>(row[j]) / norm);
    }
  }
  return EmbeddingMatrix(matrix.ids(), d, std::move(out), true);
}

SimilarityIndex::SimilarityIndex(const EmbeddingMatrix& matrix, std::size_t block_size)
    : matrix_(&matrix), block_size_(std::max<std::size_t>(block_size, 1)) {
  if (!matrix.normalized()) {
    throw Error(ErrorKind::validation, "similarity index requires a normalized matrix");
  }
  if (auto bad = matrix.non_finite_rows(); !bad.empty()) {
    throw Error(ErrorKind::validation, "row '" + matrix.id(bad.front()) + "' contains NaN/Inf");
  }
  panels_ = kernels::PanelMatrix(matrix.values(), matrix.rows(), matrix.dim());
}

void SimilarityIndex::check_query(std::span<const float> query) const {
  if (query.size() != dim()) {
    throw Error(ErrorKind::dimension_mismatch,
                "query has dimension " + std::to_string(query.size()) + ", index has " +
                    std::to_string(dim()));
  }
  require_unit(query, "query");
}

std::vector<RankedHit> SimilarityIndex::topk(std::span<const float> query, std::size_t k,
                                             const std::unordered_set<std::string>& exclude) const {
  check_query(query);
  if (k == 0) return {};
  std::vector<std::size_t> excluded;
  for (const auto& id : exclude) {
    if (auto row = matrix_->find(id)) excluded.push_back(*row);
  }
  std::sort(excluded.begin(), excluded.end());
  const ExcludedRows rows_excluded(excluded);
  auto found = kernels::topk_parallel(panels_, query, k, std::span(&rows_excluded, 1), block_size_);
  std::vector<RankedHit> hits;
  hits.reserve(found[0].size());
  for (const auto& s : found[0]) {
    hits.push_back({matrix_->id(s.row), s.score, hits.size()});
  }
  return hits;
}

std::vector<std::vector<ScoredRow>> SimilarityIndex::search(
    std::span<const float> queries, std::size_t k, std::span<const ExcludedRows> excludes) const {
  if (queries.size() % dim() != 0) {
    throw Error(ErrorKind::dimension_mismatch, "query batch size is not a multiple of the dimension");
  }
  const std::size_t nq = queries.size() / dim();
  if (!excludes.empty() && excludes.size() != nq) {
    throw Error(ErrorKind::validation, "one exclusion list per query is required");
  }
  for (std::size_t i = 0; i < nq; ++i) check_query(queries.subspan(i * dim(), dim()));
  return kernels::topk_parallel(panels_, queries, k, excludes, block_size_);
}

std::vector<RankedHit> topk_among(std::span<const float> query, std::span<const PoolEntry> pool,
                                  std::size_t k) {
  require_unit(query, "query");
  std::vector<ScoredRow> scored;
  scored.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].vector.size() != query.size()) {
      throw Error(ErrorKind::dimension_mismatch,
                  "pool entry '" + pool[i].id + "' has dimension " +
                      std::to_string(pool[i].vector.size()) + ", query has " +
                      std::to_string(query.size()));
    }
    scored.push_back({i, dot(pool[i].vector, query)});
  }
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end(), ranks_before);
  std::vector<RankedHit> hits;
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    hits.push_back({pool[scored[i].row].id, scored[i].score, i});
  }
  return hits;
}

}  // namespace embkit
