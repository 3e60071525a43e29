#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "embkit/model.hpp"

namespace embkit {

// JSON-lines manifests. Parsing keeps file order; a malformed line raises a
// ParseError carrying its 1-based line number, a duplicate id raises a
// validation error.
std::vector<QueryRecord> load_queries(const std::filesystem::path& path);
std::vector<CandidateRecord> load_candidates(const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& queries_path,
                     const std::filesystem::path& candidates_path);

// Same, from in-memory text; `source` only labels error messages.
std::vector<QueryRecord> parse_queries(const std::string& text,
                                       const std::string& source = "<memory>");
std::vector<CandidateRecord> parse_candidates(const std::string& text,
                                              const std::string& source = "<memory>");

// Canonical serialization: fixed key order, compact JSON, LF after every line.
std::string serialize_queries(const std::vector<QueryRecord>& queries);
std::string serialize_candidates(const std::vector<CandidateRecord>& candidates);

DocToQueries build_d2q(const std::vector<QueryRecord>& queries);

struct Finding {
  enum class Kind { dangling_positive, missing_embedding, non_finite_row };

  Kind kind;
  std::string id;
  std::string detail;
};

const char* to_string(Finding::Kind kind) noexcept;

struct ValidationReport {
  std::vector<Finding> findings;

  bool ok() const noexcept { return findings.empty(); }
  std::size_t count(Finding::Kind kind) const;
};

// Cross-checks manifests against each other and, when given, against their
// embedding matrices (rows are matched by id, not position).
ValidationReport validate(const Dataset& dataset,
                          const EmbeddingMatrix* query_embeddings = nullptr,
                          const EmbeddingMatrix* candidate_embeddings = nullptr);

}  // namespace embkit
