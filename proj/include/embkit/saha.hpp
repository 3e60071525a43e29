#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "embkit/model.hpp"
#include "embkit/vecindex.hpp"

namespace embkit::saha {

struct MiningStats {
  std::size_t queries = 0;
  std::size_t pool_size = 0;
  std::size_t phase1_clusters = 0;
  std::size_t phase2_clusters = 0;
  std::size_t skipped_anchors = 0;   // phase-1 anchors short of k negatives
  std::size_t short_clusters = 0;    // emitted with fewer than k negatives
  std::size_t duplicated_qids = 0;   // qids present in more than one cluster
  std::vector<std::string> unassigned;  // qids in no cluster, dataset order
};

/// Mutable state threaded through the two coupling passes. Query sets
/// are bitmaps over dataset query order.
struct MiningState {
  std::vector<char> used_global;
  std::size_t used_count = 0;
  std::vector<TrainingCluster> clusters;
  MiningStats stats;
};

struct MiningResult {
  std::vector<TrainingCluster> clusters;
  MiningStats stats;
};

/// Self-aware hard negative miner.
///
/// Both embedding matrices must be normalized and hold a row for every query
/// (resp. candidate) of the dataset; rows are matched by id. The candidate
/// index is built over the candidates in manifest order, which is also the
/// retrieval tie-break order.
///
/// Selection per anchor q, in dataset order:
///   1. candidate pool = top m*k candidates by cosine, q's own positive
///      excluded;
///   2. every pooled candidate that has owners maps to its owner most similar
///      to q, giving an insertion-ordered owner set (q itself dropped);
///   3. owners already used are removed (globally used ones in the first
///      pass; in a pass that starts with used queries, only those consumed
///      earlier in the same pass), and the rest are stable-sorted by
///      ascending similarity to q;
///   4. the first k owners become the negatives.
class Miner {
 public:
  Miner(const Dataset& dataset, const EmbeddingMatrix& query_embeddings,
        const EmbeddingMatrix& candidate_embeddings, const MinerConfig& config);
  Miner(const Miner&) = delete;
  Miner& operator=(const Miner&) = delete;

  const MinerConfig& config() const noexcept { return config_; }
  std::size_t query_count() const noexcept { return dataset_->queries.size(); }

  // Owner of `did` most similar to `anchor` (unit vector); ties go to the
  // earlier owner. Throws not_an_owner when the candidate has no owners.
  std::string assign_owner(const std::string& did, std::span<const float> anchor) const;

  MiningState initial_state() const;

  // Candidate pool of one query: candidate ids by descending similarity, own
  // positive excluded, at most m*k long.
  std::vector<std::string> retrieve_pool(const std::string& qid) const;

  // One coupling pass over `subset` (dataset query indices, processed
  // in the given order). Emitted clusters are appended to state.clusters
  // and also returned.
  std::vector<TrainingCluster> couple_samples(std::span<const std::size_t> subset,
                                              MiningState& state, int phase);

  // Phase 1 over every query, phase 2 over the leftovers.
  MiningResult mine();

 private:
  std::size_t owner_of(std::size_t candidate_row, std::size_t anchor) const;
  const std::vector<std::size_t>& candidate_pool(std::span<const std::size_t> subset,
                                                 std::size_t position,
                                                 const MiningState& state);
  float query_similarity(std::size_t a, std::size_t b) const;

  const Dataset* dataset_;
  MinerConfig config_;
  EmbeddingMatrix queries_;     // dataset query order
  EmbeddingMatrix candidates_;  // manifest candidate order
  SimilarityIndex index_;
  std::vector<std::size_t> positive_row_;                // query -> candidate row
  std::vector<std::vector<std::size_t>> owners_;         // candidate row -> queries
  std::vector<std::vector<std::size_t>> pool_cache_;     // query -> pooled rows
  std::vector<char> pool_ready_;
};

MiningResult mine(const Dataset& dataset, const EmbeddingMatrix& query_embeddings,
                  const EmbeddingMatrix& candidate_embeddings, const MinerConfig& config);

// Cluster file: one JSON object per line,
// {"anchor_qid","anchor_did","phase","negatives":[{"qid","did","owner_sim"}]}.
std::string serialize_clusters(const std::vector<TrainingCluster>& clusters);
std::vector<TrainingCluster> parse_clusters(const std::string& text,
                                            const std::string& source = "<memory>");
std::vector<TrainingCluster> load_clusters(const std::string& path);

std::string stats_json(const MiningStats& stats);

}  // namespace embkit::saha
