#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "embkit/model.hpp"

namespace embkit::contrastive {

/// Row i of `queries` is paired with row i of `candidates`; every other
/// candidate row is a negative for query i. Rows are raw embeddings: cosine
/// normalization happens inside the loss, so gradients flow through it.
struct ClusterBatch {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> queries;     // rows x dim, row-major
  std::vector<double> candidates;  // rows x dim, row-major

  void check() const;  // shape, finiteness, rows >= 2
};

struct LossResult {
  double mean = 0.0;
  std::vector<double> per_anchor;
};

struct Gradient {
  LossResult loss;
  std::vector<double> d_queries;     // d(mean loss)/d(queries), same layout
  std::vector<double> d_candidates;
};

// Per-anchor loss from an n x n similarity matrix (row-major), stabilized
// with max-subtraction.
LossResult infonce_from_similarities(std::span<const double> sims, std::size_t n, double tau);

LossResult infonce_loss(const ClusterBatch& batch, const LossConfig& cfg);
Gradient infonce_grad(const ClusterBatch& batch, const LossConfig& cfg);

// Concatenate clusters into one batch whose denominators span every row.
ClusterBatch concat(std::span<const ClusterBatch> batches);

/// x -> x W, shared by queries and candidates.
struct LinearAdapter {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::vector<double> w;  // d_in x d_out, row-major

  static LinearAdapter identity(std::size_t d);
  std::vector<double> apply(std::span<const float> x) const;
  bool operator==(const LinearAdapter&) const = default;
};

// Applies the adapter to every row and L2-normalizes the result.
EmbeddingMatrix apply_adapter(const LinearAdapter& adapter, const EmbeddingMatrix& features);

// "ADP1" | u32 d_in | u32 d_out | f64 weights, little-endian.
std::string encode_adapter(const LinearAdapter& adapter);
LinearAdapter decode_adapter(const std::string& bytes, const std::string& source = "<memory>");
void write_adapter(const std::string& path, const LinearAdapter& adapter);
LinearAdapter read_adapter(const std::string& path);

struct TrainConfig {
  LossConfig loss;
  std::size_t steps = 200;
  double learning_rate = 0.05;
  std::size_t batch_clusters = 128;
  std::uint64_t seed = 0;
  std::size_t d_out = 0;  // 0: same as input, starting from the identity
};

struct TrainResult {
  LinearAdapter adapter;
  std::vector<double> losses;  // mean loss of each step's minibatch, before its update
};

// Plain gradient descent on W. Each step takes the next `batch_clusters`
// clusters of a seeded per-epoch permutation; the step loss is the mean over
// every anchor row in the minibatch.
TrainResult train_adapter(const EmbeddingMatrix& features_q, const EmbeddingMatrix& features_c,
                          const std::vector<TrainingCluster>& clusters, const TrainConfig& cfg);

// One cluster as a batch of raw features: the anchor pair first, then the
// negatives in order.
ClusterBatch gather_cluster(const EmbeddingMatrix& features_q, const EmbeddingMatrix& features_c,
                            const TrainingCluster& cluster);

// "step,loss" header plus one row per step.
std::string loss_curve_csv(const std::vector<double>& losses);

}  // namespace embkit::contrastive
