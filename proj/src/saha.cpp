#include "embkit/saha.hpp"

#include <algorithm>
#include <unordered_map>

#include <json.hpp>

#include "embkit/dataset.hpp"
#include "embkit/error.hpp"
#include "embkit/fileutil.hpp"

namespace embkit::saha {

namespace {

// Anchors whose candidate pools are computed together in one batched scan.
// Pools are pure functions of the anchor, so batching only affects speed.
constexpr std::size_t kPrefetch = 256;

EmbeddingMatrix gather_rows(const EmbeddingMatrix& source, const std::vector<std::string>& ids,
                            const char* what) {
  if (!source.normalized()) {
    throw Error(ErrorKind::validation, std::string(what) + " embeddings must be normalized");
  }
  const std::size_t d = source.dim();
  std::vector<float> values(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = source.row(source.row_of(ids[i]));
    std::copy(row.begin(), row.end(), values.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return EmbeddingMatrix(ids, d, std::move(values), true);
}

std::vector<std::string> query_ids(const Dataset& ds) {
  std::vector<std::string> ids;
  ids.reserve(ds.queries.size());
  for (const auto& q : ds.queries) ids.push_back(q.qid);
  return ids;
}

std::vector<std::string> candidate_ids(const Dataset& ds) {
  std::vector<std::string> ids;
  ids.reserve(ds.candidates.size());
  for (const auto& c : ds.candidates) ids.push_back(c.did);
  return ids;
}

const EmbeddingMatrix& checked_dims(const EmbeddingMatrix& q, const EmbeddingMatrix& c) {
  if (q.dim() != c.dim()) {
    throw Error(ErrorKind::dimension_mismatch,
                "query embeddings have dimension " + std::to_string(q.dim()) +
                    ", candidate embeddings " + std::to_string(c.dim()));
  }
  return q;
}

}  // namespace

Miner::Miner(const Dataset& dataset, const EmbeddingMatrix& query_embeddings,
             const EmbeddingMatrix& candidate_embeddings, const MinerConfig& config)
    : dataset_(&dataset),
      config_(config),
      queries_(gather_rows(checked_dims(query_embeddings, candidate_embeddings),
                           query_ids(dataset), "query")),
      candidates_(gather_rows(candidate_embeddings, candidate_ids(dataset), "candidate")),
      index_(candidates_) {
  config_.check();
  const std::size_t nq = dataset.queries.size();
  if (config_.k >= nq) {
    throw Error(ErrorKind::config, "k = " + std::to_string(config_.k) +
                                       " must be smaller than the number of queries (" +
                                       std::to_string(nq) + ")");
  }
  positive_row_.resize(nq);
  owners_.resize(dataset.candidates.size());
  for (std::size_t q = 0; q < nq; ++q) {
    const auto& rec = dataset.queries[q];
    auto row = candidates_.find(rec.positive_did);
    if (!row) {
      throw Error(ErrorKind::validation, "query '" + rec.qid + "' has positive_did '" +
                                             rec.positive_did + "' with no candidate record");
    }
    positive_row_[q] = *row;
    owners_[*row].push_back(q);
  }
  pool_cache_.resize(nq);
  pool_ready_.assign(nq, 0);
}

float Miner::query_similarity(std::size_t a, std::size_t b) const {
  return dot(queries_.row(a), queries_.row(b));
}

std::size_t Miner::owner_of(std::size_t candidate_row, std::size_t anchor) const {
  const auto& owners = owners_[candidate_row];
  if (owners.size() == 1) return owners.front();
  std::size_t best = owners.front();
  float best_sim = query_similarity(best, anchor);
  for (std::size_t i = 1; i < owners.size(); ++i) {
    const float s = query_similarity(owners[i], anchor);
    if (s > best_sim) {
      best_sim = s;
      best = owners[i];
    }
  }
  return best;
}

std::string Miner::assign_owner(const std::string& did, std::span<const float> anchor) const {
  auto row = candidates_.find(did);
  if (!row || owners_[*row].empty()) {
    throw Error(ErrorKind::not_an_owner, "candidate '" + did + "' has no owner queries");
  }
  if (anchor.size() != queries_.dim()) {
    throw Error(ErrorKind::dimension_mismatch, "anchor vector has the wrong dimension");
  }
  const auto& owners = owners_[*row];
  std::size_t best = owners.front();
  float best_sim = dot(queries_.row(best), anchor);
  for (std::size_t i = 1; i < owners.size(); ++i) {
    const float s = dot(queries_.row(owners[i]), anchor);
    if (s > best_sim) {
      best_sim = s;
      best = owners[i];
    }
  }
  return dataset_->queries[best].qid;
}

const std::vector<std::size_t>& Miner::candidate_pool(std::span<const std::size_t> subset,
                                                      std::size_t position,
                                                      const MiningState& state) {
  const std::size_t anchor = subset[position];
  if (pool_ready_[anchor]) return pool_cache_[anchor];

  // Speculatively batch the next anchors that are still unused.
  std::vector<std::size_t> batch;
  for (std::size_t i = position; i < subset.size() && batch.size() < kPrefetch; ++i) {
    const std::size_t q = subset[i];
    if (!pool_ready_[q] && !state.used_global[q]) batch.push_back(q);
  }
  const std::size_t d = queries_.dim();
  std::vector<float> block(batch.size() * d);
  std::vector<std::size_t> excluded_rows(batch.size());
  std::vector<ExcludedRows> excludes(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = queries_.row(batch[i]);
    std::copy(row.begin(), row.end(), block.begin() + static_cast<std::ptrdiff_t>(i * d));
    excluded_rows[i] = positive_row_[batch[i]];
  }
  for (std::size_t i = 0; i < batch.size(); ++i) excludes[i] = ExcludedRows(&excluded_rows[i], 1);

  auto found = index_.search(block, config_.pool_size(), excludes);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto& pool = pool_cache_[batch[i]];
    pool.reserve(found[i].size());
    for (const auto& hit : found[i]) pool.push_back(hit.row);
    pool_ready_[batch[i]] = 1;
  }
  return pool_cache_[anchor];
}

std::vector<std::string> Miner::retrieve_pool(const std::string& qid) const {
  const std::size_t q = queries_.row_of(qid);
  const ExcludedRows excluded(&positive_row_[q], 1);
  auto found = index_.search(queries_.row(q), config_.pool_size(), std::span(&excluded, 1));
  std::vector<std::string> ids;
  for (const auto& hit : found[0]) ids.push_back(candidates_.id(hit.row));
  return ids;
}

MiningState Miner::initial_state() const {
  MiningState state;
  state.used_global.assign(query_count(), 0);
  state.stats.queries = query_count();
  state.stats.pool_size = config_.pool_size();
  return state;
}

std::vector<TrainingCluster> Miner::couple_samples(std::span<const std::size_t> subset,
                                                   MiningState& state, int phase) {
  const std::size_t nq = query_count();
  const std::size_t k = config_.k;
  const bool allow_redundancy = state.used_count > 0;
  std::vector<char> used_local(nq, 0);
  std::vector<std::uint32_t> seen(nq, 0);
  std::uint32_t stamp = 0;

  std::vector<TrainingCluster> emitted;
  std::vector<std::size_t> adjacent;
  std::vector<std::pair<float, std::size_t>> ranked;

  for (std::size_t pos = 0; pos < subset.size(); ++pos) {
    const std::size_t q = subset[pos];
    if (state.used_global[q]) continue;

    const auto& pool = candidate_pool(subset, pos, state);
    ++stamp;
    adjacent.clear();
    for (std::size_t row : pool) {
      if (owners_[row].empty()) continue;
      const std::size_t owner = owner_of(row, q);
      if (owner == q || seen[owner] == stamp) continue;
      seen[owner] = stamp;
      adjacent.push_back(owner);
    }

    const auto& dedup = allow_redundancy ? used_local : state.used_global;
    ranked.clear();
    for (std::size_t owner : adjacent) {
      if (!dedup[owner]) ranked.emplace_back(query_similarity(owner, q), owner);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    if (ranked.size() > k) ranked.resize(k);

    if (ranked.size() < k) {
      if (phase == 1 && config_.strict_phase1) {
        ++state.stats.skipped_anchors;
        continue;
      }
      // A cluster without negatives carries no contrastive signal.
      if (ranked.empty() || !config_.allow_short_clusters) continue;
    }

    TrainingCluster cluster;
    cluster.anchor_qid = dataset_->queries[q].qid;
    cluster.anchor_did = dataset_->queries[q].positive_did;
    cluster.phase = phase;
    cluster.negatives.reserve(ranked.size());
    for (const auto& [sim, owner] : ranked) {
      cluster.negatives.push_back(
          {dataset_->queries[owner].qid, dataset_->queries[owner].positive_did, sim});
    }

    auto mark_global = [&](std::size_t idx) {
      if (!state.used_global[idx]) {
        state.used_global[idx] = 1;
        ++state.used_count;
      }
    };
    mark_global(q);
    for (const auto& [sim, owner] : ranked) {
      mark_global(owner);
      if (allow_redundancy) used_local[owner] = 1;
    }

    if (ranked.size() < k) ++state.stats.short_clusters;
    if (phase == 1) {
      ++state.stats.phase1_clusters;
    } else {
      ++state.stats.phase2_clusters;
    }
    state.clusters.push_back(cluster);
    emitted.push_back(std::move(cluster));
  }
  return emitted;
}

MiningResult Miner::mine() {
  MiningState state = initial_state();
  const std::size_t nq = query_count();

  std::vector<std::size_t> all(nq);
  for (std::size_t i = 0; i < nq; ++i) all[i] = i;
  couple_samples(all, state, 1);

  std::vector<std::size_t> leftover;
  for (std::size_t i = 0; i < nq; ++i) {
    if (!state.used_global[i]) leftover.push_back(i);
  }
  couple_samples(leftover, state, 2);

  std::unordered_map<std::string, std::size_t> occurrences;
  for (const auto& c : state.clusters) {
    ++occurrences[c.anchor_qid];
    for (const auto& n : c.negatives) ++occurrences[n.qid];
  }
  for (const auto& [qid, count] : occurrences) {
    if (count > 1) ++state.stats.duplicated_qids;
  }
  for (const auto& rec : dataset_->queries) {
    if (!occurrences.contains(rec.qid)) state.stats.unassigned.push_back(rec.qid);
  }
  return MiningResult{std::move(state.clusters), std::move(state.stats)};
}

MiningResult mine(const Dataset& dataset, const EmbeddingMatrix& query_embeddings,
                  const EmbeddingMatrix& candidate_embeddings, const MinerConfig& config) {
  Miner miner(dataset, query_embeddings, candidate_embeddings, config);
  return miner.mine();
}

std::string serialize_clusters(const std::vector<TrainingCluster>& clusters) {
  std::string out;
  for (const auto& c : clusters) {
    nlohmann::ordered_json o;
    o["anchor_qid"] = c.anchor_qid;
    o["anchor_did"] = c.anchor_did;
    o["phase"] = c.phase;
    auto negs = nlohmann::ordered_json::array();
    for (const auto& n : c.negatives) {
      nlohmann::ordered_json e;
      e["qid"] = n.qid;
      e["did"] = n.did;
      e["owner_sim"] = n.owner_sim;
      negs.push_back(std::move(e));
    }
    o["negatives"] = std::move(negs);
    out += o.dump();
    out += '\n';
  }
  return out;
}

std::vector<TrainingCluster> parse_clusters(const std::string& text, const std::string& source) {
  std::vector<TrainingCluster> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    try {
      const auto o = nlohmann::json::parse(line);
      TrainingCluster c;
      c.anchor_qid = o.at("anchor_qid").get<std::string>();
      c.anchor_did = o.at("anchor_did").get<std::string>();
      c.phase = o.at("phase").get<int>();
      if (c.phase != 1 && c.phase != 2) throw ParseError(source, line_no, "phase must be 1 or 2");
      for (const auto& n : o.at("negatives")) {
        c.negatives.push_back({n.at("qid").get<std::string>(), n.at("did").get<std::string>(),
                               n.contains("owner_sim") ? n.at("owner_sim").get<float>() : 0.0F});
      }
      out.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return out;
}

std::vector<TrainingCluster> load_clusters(const std::string& path) {
  return parse_clusters(read_file(path), path);
}

std::string stats_json(const MiningStats& stats) {
  nlohmann::ordered_json o;
  o["queries"] = stats.queries;
  o["pool_size"] = stats.pool_size;
  o["phase1_clusters"] = stats.phase1_clusters;
  o["phase2_clusters"] = stats.phase2_clusters;
  o["skipped_anchors"] = stats.skipped_anchors;
  o["short_clusters"] = stats.short_clusters;
  o["duplicated_qids"] = stats.duplicated_qids;
  o["unassigned"] = stats.unassigned;
  return o.dump();
}

}  // namespace embkit::saha
