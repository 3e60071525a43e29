#pragma once

// Independent checks of the mining invariants. Each returns the number of
// violations and appends human-readable descriptions to `log`.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "embkit/model.hpp"
#include "embkit/saha.hpp"
#include "oracles/brute_force.hpp"

namespace oracle {

inline std::size_t check_phase1_disjoint(const std::vector<embkit::TrainingCluster>& clusters,
                                         std::vector<std::string>& log) {
  std::set<std::string> seen;
  std::size_t bad = 0;
  for (const auto& c : clusters) {
    if (c.phase != 1) continue;
    std::vector<std::string> ids = {c.anchor_qid};
    for (const auto& n : c.negatives) ids.push_back(n.qid);
    for (const auto& id : ids) {
      if (!seen.insert(id).second) {
        ++bad;
        log.push_back("phase-1 qid reused: " + id);
      }
    }
  }
  return bad;
}

// Every query is in some cluster (as anchor or negative) or reported
// unassigned, never both.
inline std::size_t check_totality(const embkit::Dataset& ds,
                                  const std::vector<embkit::TrainingCluster>& clusters,
                                  const std::vector<std::string>& unassigned,
                                  std::vector<std::string>& log) {
  std::set<std::string> covered;
  for (const auto& c : clusters) {
    covered.insert(c.anchor_qid);
    for (const auto& n : c.negatives) covered.insert(n.qid);
  }
  std::set<std::string> left(unassigned.begin(), unassigned.end());
  std::size_t bad = 0;
  for (const auto& q : ds.queries) {
    const bool in_cluster = covered.count(q.qid) > 0;
    const bool reported = left.count(q.qid) > 0;
    if (in_cluster == reported) {
      ++bad;
      log.push_back("totality broken for " + q.qid);
    }
  }
  if (left.size() != unassigned.size()) {
    ++bad;
    log.push_back("duplicate unassigned entries");
  }
  return bad;
}

inline std::size_t check_leakage(const std::vector<embkit::TrainingCluster>& clusters,
                                 std::vector<std::string>& log) {
  std::size_t bad = 0;
  for (const auto& c : clusters) {
    std::set<std::string> qids = {c.anchor_qid};
    for (const auto& n : c.negatives) {
      if (n.did == c.anchor_did || n.qid == c.anchor_qid) {
        ++bad;
        log.push_back("leakage in cluster of " + c.anchor_qid);
      }
      if (!qids.insert(n.qid).second) {
        ++bad;
        log.push_back("repeated qid inside cluster of " + c.anchor_qid);
      }
    }
  }
  return bad;
}

inline std::size_t check_owner_fidelity(const embkit::Dataset& ds,
                                        const std::vector<embkit::TrainingCluster>& clusters,
                                        std::vector<std::string>& log) {
  std::map<std::string, std::string> positive;
  for (const auto& q : ds.queries) positive[q.qid] = q.positive_did;
  std::size_t bad = 0;
  for (const auto& c : clusters) {
    if (positive[c.anchor_qid] != c.anchor_did) {
      ++bad;
      log.push_back("anchor did mismatch for " + c.anchor_qid);
    }
    for (const auto& n : c.negatives) {
      auto it = positive.find(n.qid);
      if (it == positive.end() || it->second != n.did) {
        ++bad;
        log.push_back("negative (" + n.qid + ", " + n.did + ") is not an owner pair");
      }
    }
  }
  return bad;
}

inline std::size_t check_cluster_sizes(const std::vector<embkit::TrainingCluster>& clusters,
                                       const embkit::MinerConfig& cfg,
                                       std::vector<std::string>& log) {
  std::size_t bad = 0;
  for (const auto& c : clusters) {
    if (c.negatives.size() > cfg.k || c.negatives.empty() ||
        (c.phase == 1 && cfg.strict_phase1 && c.negatives.size() != cfg.k)) {
      ++bad;
      log.push_back("bad cluster size for " + c.anchor_qid);
    }
  }
  return bad;
}

// Re-derives each phase-1 cluster's deduplicated owner set by brute force
// (used set before the cluster = every qid of the earlier phase-1 clusters)
// and checks that every selected owner is at most as similar to the anchor as
// every rejected one.
inline std::size_t check_ascending_selection(const embkit::Dataset& ds,
                                             const embkit::EmbeddingMatrix& qemb,
                                             const embkit::EmbeddingMatrix& cemb,
                                             const embkit::MinerConfig& cfg,
                                             const std::vector<embkit::TrainingCluster>& clusters,
                                             std::vector<std::string>& log) {
  std::map<std::string, std::vector<std::string>> owners;
  std::map<std::string, std::string> positive;
  for (const auto& q : ds.queries) {
    owners[q.positive_did].push_back(q.qid);
    positive[q.qid] = q.positive_did;
  }
  // Candidate matrix restricted to the manifest, in manifest order.
  std::vector<std::string> cids;
  std::vector<float> cvals;
  for (const auto& c : ds.candidates) {
    cids.push_back(c.did);
    auto row = cemb.row(cemb.row_of(c.did));
    cvals.insert(cvals.end(), row.begin(), row.end());
  }
  embkit::EmbeddingMatrix cands(cids, cemb.dim(), cvals, true);
  auto sim = [&](const std::string& a, const std::string& b) {
    return embkit::dot(qemb.row(qemb.row_of(a)), qemb.row(qemb.row_of(b)));
  };

  std::set<std::string> used;
  std::size_t bad = 0;
  for (const auto& c : clusters) {
    if (c.phase != 1) continue;
    const auto qv = qemb.row(qemb.row_of(c.anchor_qid));
    auto pool = full_scan_topk(cands, qv, cfg.pool_size(), {positive[c.anchor_qid]});
    std::set<std::string> adj;
    for (const auto& hit : pool) {
      auto it = owners.find(hit.id);
      if (it == owners.end()) continue;
      std::string best = it->second.front();
      for (const auto& o : it->second) {
        if (sim(o, c.anchor_qid) > sim(best, c.anchor_qid)) best = o;
      }
      if (best != c.anchor_qid && !used.count(best)) adj.insert(best);
    }
    std::set<std::string> selected;
    float max_selected = -2.0F;
    for (const auto& n : c.negatives) {
      selected.insert(n.qid);
      max_selected = std::max(max_selected, sim(n.qid, c.anchor_qid));
      if (!adj.count(n.qid)) {
        ++bad;
        log.push_back("negative " + n.qid + " not in deduplicated owner set of " + c.anchor_qid);
      }
    }
    for (const auto& o : adj) {
      if (selected.count(o)) continue;
      if (sim(o, c.anchor_qid) < max_selected) {
        ++bad;
        log.push_back("rejected owner " + o + " is less similar than a selected one for " +
                      c.anchor_qid);
      }
    }
    used.insert(c.anchor_qid);
    for (const auto& n : c.negatives) used.insert(n.qid);
  }
  return bad;
}

}  // namespace oracle
