#include "embkit/kernels/similarity.hpp"

#include <algorithm>
#include <array>

namespace embkit::kernels {

namespace {

constexpr std::size_t P = PanelMatrix::kPanelRows;
constexpr std::size_t kQueryTile = 4;

bool is_excluded(ExcludedRows excluded, std::size_t row) {
  return !excluded.empty() && std::binary_search(excluded.begin(), excluded.end(), row);
}

class TopCollector {
 public:
  explicit TopCollector(std::size_t k) : k_(k) { heap_.reserve(k); }

  // Cheap pre-check before the exclusion lookup.
  bool would_admit(std::size_t row, float score) const {
    return heap_.size() < k_ || ranks_before({row, score}, heap_.front());
  }

  void admit(std::size_t row, float score) {
    if (heap_.size() < k_) {
      heap_.push_back({row, score});
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    } else {
      std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
      heap_.back() = {row, score};
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    }
  }

  std::vector<ScoredRow> take() && {
    std::sort_heap(heap_.begin(), heap_.end(), ranks_before);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<ScoredRow> heap_;
};

// Scores QT queries against one panel. Each accumulator lane sums its own dot
// product over j in order, so the result equals dot() bit for bit.
template <std::size_t QT>
void score_panel(const float* panel, std::size_t dim, const std::array<const float*, QT>& q,
                 float (&out)[QT][P]) {
  float acc[QT][P] = {};
  for (std::size_t j = 0; j < dim; ++j) {
    const float* stripe = panel + j * P;
    for (std::size_t t = 0; t < QT; ++t) {
      const float qv = q[t][j];
      for (std::size_t r = 0; r < P; ++r) acc[t][r] += stripe[r] * qv;
    }
  }
  for (std::size_t t = 0; t < QT; ++t)
    for (std::size_t r = 0; r < P; ++r) out[t][r] = acc[t][r];
}

template <std::size_t QT>
void scan_block(const PanelMatrix& m, std::span<const float> queries, std::size_t first_query,
                std::size_t row_begin, std::size_t row_end,
                std::span<const ExcludedRows> excludes, std::size_t k,
                std::vector<ScoredRow>* partial_out) {
  const std::size_t dim = m.dim();
  std::array<const float*, QT> q{};
  std::array<TopCollector, QT> collectors = [&]<std::size_t... I>(std::index_sequence<I...>) {
    return std::array<TopCollector, QT>{((void)I, TopCollector(k))...};
  }(std::make_index_sequence<QT>{});
  for (std::size_t t = 0; t < QT; ++t) q[t] = queries.data() + (first_query + t) * dim;

  float scores[QT][P];
  for (std::size_t p = row_begin / P; p * P < row_end; ++p) {
    score_panel<QT>(m.panel(p), dim, q, scores);
    const std::size_t lo = std::max(row_begin, p * P);
    const std::size_t hi = std::min(row_end, p * P + P);
    for (std::size_t t = 0; t < QT; ++t) {
      const ExcludedRows excl = excludes.empty() ? ExcludedRows{} : excludes[first_query + t];
      for (std::size_t row = lo; row < hi; ++row) {
        const float s = scores[t][row - p * P];
        if (collectors[t].would_admit(row, s) && !is_excluded(excl, row)) {
          collectors[t].admit(row, s);
        }
      }
    }
  }
  for (std::size_t t = 0; t < QT; ++t) partial_out[t] = std::move(collectors[t]).take();
}

}  // namespace

PanelMatrix::PanelMatrix(std::span<const float> row_major, std::size_t rows, std::size_t dim)
    : rows_(rows), dim_(dim), data_(((rows + P - 1) / P) * P * dim, 0.0F) {
  for (std::size_t r = 0; r < rows; ++r) {
    float* base = data_.data() + (r / P) * dim * P + r % P;
    const float* src = row_major.data() + r * dim;
    for (std::size_t j = 0; j < dim; ++j) base[j * P] = src[j];
  }
}

std::vector<std::vector<ScoredRow>> topk_serial(std::span<const float> rows, std::size_t n,
                                                std::size_t dim, std::span<const float> queries,
                                                std::size_t k,
                                                std::span<const ExcludedRows> excludes) {
  const std::size_t nq = dim == 0 ? 0 : queries.size() / dim;
  std::vector<std::vector<ScoredRow>> out(nq);
  for (std::size_t qi = 0; qi < nq; ++qi) {
    const auto query = queries.subspan(qi * dim, dim);
    const ExcludedRows excl = excludes.empty() ? ExcludedRows{} : excludes[qi];
    std::vector<ScoredRow> all;
    all.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
      if (is_excluded(excl, r)) continue;
      all.push_back({r, dot(rows.subspan(r * dim, dim), query)});
    }
    const std::size_t take = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                      ranks_before);
    all.resize(take);
    out[qi] = std::move(all);
  }
  return out;
}

std::vector<std::vector<ScoredRow>> topk_parallel(const PanelMatrix& matrix,
                                                  std::span<const float> queries, std::size_t k,
                                                  std::span<const ExcludedRows> excludes,
                                                  std::size_t block_size) {
  const std::size_t dim = matrix.dim();
  const std::size_t nq = dim == 0 ? 0 : queries.size() / dim;
  std::vector<std::vector<ScoredRow>> out(nq);
  if (nq == 0 || k == 0 || matrix.rows() == 0) return out;

  block_size = std::max<std::size_t>(block_size, 1);
  const std::size_t n = matrix.rows();
  const std::size_t blocks = (n + block_size - 1) / block_size;
  const std::size_t tiles = (nq + kQueryTile - 1) / kQueryTile;

  // partial[q * blocks + b] holds query q's best k rows inside block b.
  std::vector<std::vector<ScoredRow>> partial(nq * blocks);
  const auto items = static_cast<std::ptrdiff_t>(tiles * blocks);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t item = 0; item < items; ++item) {
    const std::size_t tile = static_cast<std::size_t>(item) / blocks;
    const std::size_t block = static_cast<std::size_t>(item) % blocks;
    const std::size_t q0 = tile * kQueryTile;
    const std::size_t row_begin = block * block_size;
    const std::size_t row_end = std::min(n, row_begin + block_size);
    std::vector<ScoredRow> tmp[kQueryTile];
    if (q0 + kQueryTile <= nq) {
      scan_block<kQueryTile>(matrix, queries, q0, row_begin, row_end, excludes, k, tmp);
    } else {
      for (std::size_t t = 0; q0 + t < nq; ++t) {
        scan_block<1>(matrix, queries, q0 + t, row_begin, row_end, excludes, k, tmp + t);
      }
    }
    for (std::size_t t = 0; t < kQueryTile && q0 + t < nq; ++t) {
      partial[(q0 + t) * blocks + block] = std::move(tmp[t]);
    }
  }

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t qi = 0; qi < static_cast<std::ptrdiff_t>(nq); ++qi) {
    auto& merged = out[static_cast<std::size_t>(qi)];
    if (blocks == 1) {
      merged = std::move(partial[static_cast<std::size_t>(qi)]);
      continue;
    }
    for (std::size_t b = 0; b < blocks; ++b) {
      auto& part = partial[static_cast<std::size_t>(qi) * blocks + b];
      merged.insert(merged.end(), part.begin(), part.end());
    }
    const std::size_t take = std::min(k, merged.size());
    std::partial_sort(merged.begin(), merged.begin() + static_cast<std::ptrdiff_t>(take),
                      merged.end(), ranks_before);
    merged.resize(take);
  }
  return out;
}

}  // namespace embkit::kernels
