#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace embkit {

/// One element of a record's content: inline text or an opaque image
/// reference (path or URI). Images are never decoded by this toolkit.
struct ContentPart {
  enum class Kind : std::uint8_t { text, image };

  Kind kind = Kind::text;
  std::string value;

  static ContentPart text(std::string s) { return {Kind::text, std::move(s)}; }
  static ContentPart image(std::string ref) { return {Kind::image, std::move(ref)}; }

  bool operator==(const ContentPart&) const = default;
};

/// A training or evaluation query with exactly one labeled positive.
struct QueryRecord {
  std::string qid;
  std::string instruction;
  std::vector<ContentPart> content;
  std::string positive_did;

  bool operator==(const QueryRecord&) const = default;
};

struct CandidateRecord {
  std::string did;
  std::vector<ContentPart> content;

  bool operator==(const CandidateRecord&) const = default;
};

struct Dataset {
  std::vector<QueryRecord> queries;
  std::vector<CandidateRecord> candidates;
};

/// Dense row-major float32 matrix with one string id per row.
///
/// Construction enforces the structural invariants (d >= 1, |ids| = n, unique
/// ids, and unit rows when flagged normalized). Finiteness is not enforced
/// here so that files holding NaN rows can still be loaded and reported by
/// validate(); every numeric consumer (l2_normalize, SimilarityIndex) rejects
/// non-finite rows itself.
class EmbeddingMatrix {
 public:
  static constexpr double kUnitTolerance = 1e-4;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim,
                  std::vector<float> values, bool normalized = false);

  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool normalized() const noexcept { return normalized_; }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(std::size_t row) const { return ids_.at(row); }
  std::span<const float> values() const noexcept { return values_; }
  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(values_).subspan(r * dim_, dim_);
  }

  std::optional<std::size_t> find(const std::string& id) const;
  // Throws a validation error naming the id when absent.
  std::size_t row_of(const std::string& id) const;

  // Rows containing NaN or Inf, ascending.
  std::vector<std::size_t> non_finite_rows() const;

  bool operator==(const EmbeddingMatrix& other) const {
    return dim_ == other.dim_ && normalized_ == other.normalized_ &&
           ids_ == other.ids_ && values_ == other.values_;
  }

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<float> values_;
  bool normalized_ = false;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// Candidate id -> owner queries (queries whose positive is that candidate).
/// Iteration follows first appearance in the query list; owner lists keep
/// dataset order.
class DocToQueries {
 public:
  const std::vector<std::string>* owners(const std::string& did) const;
  bool contains(const std::string& did) const { return owners(did) != nullptr; }

  const std::vector<std::string>& dids() const noexcept { return dids_; }
  std::size_t size() const noexcept { return dids_.size(); }
  bool empty() const noexcept { return dids_.empty(); }

  void add(const std::string& did, const std::string& qid);

  // (qid, did) pairs in did order, then owner order.
  std::vector<std::pair<std::string, std::string>> flatten() const;

 private:
  std::vector<std::string> dids_;
  std::vector<std::vector<std::string>> owners_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

struct NegativePair {
  std::string qid;
  std::string did;
  float owner_sim = 0.0F;  // cosine between the owner query and the anchor

  bool operator==(const NegativePair&) const = default;
};

/// One mining output unit: the anchor pair plus up to k negative pairs.
struct TrainingCluster {
  std::string anchor_qid;
  std::string anchor_did;
  std::vector<NegativePair> negatives;
  int phase = 1;

  bool operator==(const TrainingCluster&) const = default;
};

struct MinerConfig {
  std::size_t k = 15;
  std::size_t pool_multiplier = 4;
  bool strict_phase1 = true;
  bool allow_short_clusters = true;

  std::size_t pool_size() const noexcept { return k * pool_multiplier; }
  // Throws a config error on k = 0 or m = 0.
  void check() const;
};

struct LossConfig {
  double tau = 0.02;
  // Pool the denominators of every cluster in a step instead of scoring
  // each cluster against its own candidates only.
  bool pooled = false;

  void check() const;
};

}  // namespace embkit
