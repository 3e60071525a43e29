#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace embkit {

struct ScoredRow {
  std::size_t row = 0;
  float score = 0.0F;

  bool operator==(const ScoredRow&) const = default;
};

// Result order: higher score first, ties by ascending row.
inline bool ranks_before(const ScoredRow& a, const ScoredRow& b) noexcept {
  return a.score > b.score || (a.score == b.score && a.row < b.row);
}

// Inner product accumulated in float, strictly left to right. Every scoring
// path in the toolkit reproduces this exact operation order, which is what
// makes cluster files bit-reproducible across kernels and machines.
inline float dot(std::span<const float> a, std::span<const float> b) noexcept {
  float acc = 0.0F;
  for (std::size_t j = 0; j < a.size(); ++j) acc += a[j] * b[j];
  return acc;
}

// Rows excluded from one query's results; must be sorted ascending.
using ExcludedRows = std::span<const std::size_t>;

namespace kernels {

// Rows repacked into panels of kPanelRows so that one query lane runs down a
// contiguous stripe: value(row r, dim j) lives at
// data[(r / kPanelRows) * dim * kPanelRows + j * kPanelRows + r % kPanelRows].
// The tail panel is zero padded.
class PanelMatrix {
 public:
  static constexpr std::size_t kPanelRows = 16;

  PanelMatrix() = default;
  PanelMatrix(std::span<const float> row_major, std::size_t rows, std::size_t dim);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t panels() const noexcept { return (rows_ + kPanelRows - 1) / kPanelRows; }
  const float* panel(std::size_t p) const noexcept { return data_.data() + p * dim_ * kPanelRows; }

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

// Reference kernel: scores every row with dot() and partial-sorts. Kept for
// testing and benchmarking against the parallel kernel.
std::vector<std::vector<ScoredRow>> topk_serial(std::span<const float> rows, std::size_t n,
                                                std::size_t dim, std::span<const float> queries,
                                                std::size_t k,
                                                std::span<const ExcludedRows> excludes);

// OpenMP kernel over (query tile x row block) work items. Produces exactly the
// serial kernel's output for any block_size >= 1 and any thread count.
std::vector<std::vector<ScoredRow>> topk_parallel(const PanelMatrix& matrix,
                                                  std::span<const float> queries, std::size_t k,
                                                  std::span<const ExcludedRows> excludes,
                                                  std::size_t block_size);

}  // namespace kernels
}  // namespace embkit
