#include "embkit/model.hpp"

#include <cmath>

#include "embkit/error.hpp"

namespace embkit {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::validation: return "validation";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::dimension_mismatch: return "dimension_mismatch";
    case ErrorKind::degenerate_row: return "degenerate_row";
    case ErrorKind::degenerate_batch: return "degenerate_batch";
    case ErrorKind::not_an_owner: return "not_an_owner";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::backend: return "backend";
  }
  return "unknown";
}

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim,
                                 std::vector<float> values, bool normalized)
    : ids_(std::move(ids)), dim_(dim), values_(std::move(values)), normalized_(normalized) {
  if (dim_ == 0) throw Error(ErrorKind::validation, "embedding dimension must be >= 1");
  if (values_.size() != ids_.size() * dim_) {
    throw Error(ErrorKind::validation,
                "embedding matrix holds " + std::to_string(values_.size()) +
                    " values, expected " + std::to_string(ids_.size()) + " x " +
                    std::to_string(dim_));
  }
  lookup_.reserve(ids_.size());
  for (std::size_t r = 0; r < ids_.size(); ++r) {
    if (!lookup_.emplace(ids_[r], r).second) {
      throw Error(ErrorKind::validation, "duplicate embedding id '" + ids_[r] + "'");
    }
  }
  if (normalized_) {
    for (std::size_t r = 0; r < ids_.size(); ++r) {
      double sq = 0.0;
      for (float v : row(r)) sq += static_cast<double>(v) * v;
      const double norm = std::sqrt(sq);
      if (!(std::abs(norm - 1.0) <= kUnitTolerance)) {
        throw Error(ErrorKind::validation,
                    "row '" + ids_[r] + "' flagged normalized has norm " + std::to_string(norm));
      }
    }
  }
}

std::optional<std::size_t> EmbeddingMatrix::find(const std::string& id) const {
  auto it = lookup_.find(id);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingMatrix::row_of(const std::string& id) const {
  auto it = lookup_.find(id);
  if (it == lookup_.end()) {
    throw Error(ErrorKind::validation, "no embedding row for id '" + id + "'");
  }
  return it->second;
}

std::vector<std::size_t> EmbeddingMatrix::non_finite_rows() const {
  std::vector<std::size_t> bad;
  for (std::size_t r = 0; r < rows(); ++r) {
    for (float v : row(r)) {
      if (!std::isfinite(v)) {
        bad.push_back(r);
        break;
      }
    }
  }
  return bad;
}

const std::vector<std::string>* DocToQueries::owners(const std::string& did) const {
  auto it = lookup_.find(did);
  return it == lookup_.end() ? nullptr : &owners_[it->second];
}

void DocToQueries::add(const std::string& did, const std::string& qid) {
  auto [it, inserted] = lookup_.emplace(did, dids_.size());
  if (inserted) {
    dids_.push_back(did);
    owners_.emplace_back();
  }
  owners_[it->second].push_back(qid);
}

std::vector<std::pair<std::string, std::string>> DocToQueries::flatten() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < dids_.size(); ++i) {
    for (const auto& q : owners_[i]) out.emplace_back(q, dids_[i]);
  }
  return out;
}

void MinerConfig::check() const {
  if (k == 0) throw Error(ErrorKind::config, "k must be a positive integer");
  if (pool_multiplier == 0) {
    throw Error(ErrorKind::config, "pool multiplier must be a positive integer");
  }
}

void LossConfig::check() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorKind::config, "temperature must be a positive finite number");
  }
}

}  // namespace embkit
