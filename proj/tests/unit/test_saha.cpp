#include <algorithm>
#include <map>

#include <gtest/gtest.h>

#include "embkit/error.hpp"
#include "embkit/saha.hpp"
#include "oracles/instances.hpp"
#include "oracles/invariants.hpp"
#include "oracles/saha_reference.hpp"

using namespace embkit;
using saha::Miner;

namespace {

Dataset make_dataset(const std::vector<std::pair<std::string, std::string>>& q_to_d,
                     const std::vector<std::string>& dids) {
  Dataset ds;
  for (const auto& d : dids) ds.candidates.push_back({d, {ContentPart::text(d)}});
  for (const auto& [q, d] : q_to_d) ds.queries.push_back({q, "", {ContentPart::text(q)}, d});
  return ds;
}

std::size_t all_invariants(const oracle::Instance& inst, const MinerConfig& cfg,
                           const saha::MiningResult& r, std::vector<std::string>& log) {
  return oracle::check_phase1_disjoint(r.clusters, log) +
         oracle::check_totality(inst.dataset, r.clusters, r.stats.unassigned, log) +
         oracle::check_leakage(r.clusters, log) +
         oracle::check_owner_fidelity(inst.dataset, r.clusters, log) +
         oracle::check_cluster_sizes(r.clusters, cfg, log) +
         oracle::check_ascending_selection(inst.dataset, inst.query_emb, inst.cand_emb, cfg,
                                           r.clusters, log);
}

}  // namespace

TEST(MinerConfig, Defaults) {
  MinerConfig cfg;
  EXPECT_EQ(cfg.k, 15u);
  EXPECT_EQ(cfg.pool_multiplier, 4u);
  EXPECT_EQ(cfg.pool_size(), 60u);
}

TEST(AssignOwner, SingleOwner) {
  auto ds = make_dataset({{"a", "x"}, {"b", "y"}}, {"x", "y"});
  EmbeddingMatrix q({"a", "b"}, 2, {1, 0, 0, 1}, true);
  EmbeddingMatrix c({"x", "y"}, 2, {1, 0, 0, 1}, true);
  Miner miner(ds, q, c, MinerConfig{1, 1});
  const float anchor[] = {0, 1};
  EXPECT_EQ(miner.assign_owner("x", anchor), "a");
}

TEST(AssignOwner, PicksOwnerIdenticalToAnchor) {
  auto ds = make_dataset({{"a", "x"}, {"b", "x"}, {"c", "y"}}, {"x", "y"});
  EmbeddingMatrix q({"a", "b", "c"}, 2, {1, 0, 0.6F, 0.8F, 0, 1}, true);
  EmbeddingMatrix c({"x", "y"}, 2, {1, 0, 0, 1}, true);
  Miner miner(ds, q, c, MinerConfig{1, 1});
  const float like_a[] = {1, 0};
  const float like_b[] = {0.6F, 0.8F};
  EXPECT_EQ(miner.assign_owner("x", like_a), "a");
  EXPECT_EQ(miner.assign_owner("x", like_b), "b");
}

TEST(AssignOwner, TieGoesToEarlierOwner) {
  auto ds = make_dataset({{"a", "x"}, {"b", "x"}, {"c", "y"}}, {"x", "y"});
  EmbeddingMatrix q({"a", "b", "c"}, 2, {0.6F, 0.8F, 0.6F, 0.8F, 0, 1}, true);
  EmbeddingMatrix c({"x", "y"}, 2, {1, 0, 0, 1}, true);
  Miner miner(ds, q, c, MinerConfig{1, 1});
  const float anchor[] = {1, 0};
  EXPECT_EQ(miner.assign_owner("x", anchor), "a");
}

TEST(AssignOwner, RandomOwnersMatchFullSort) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto qm = oracle::random_unit_matrix(rng, "o", 11, 8);
    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t i = 0; i < 10; ++i) pairs.emplace_back(qm.id(i), "shared");
    pairs.emplace_back(qm.id(10), "other");
    auto ds = make_dataset(pairs, {"shared", "other"});
    auto cm = oracle::random_unit_matrix(rng, "unused", 2, 8);
    EmbeddingMatrix cands({"shared", "other"}, 8,
                          std::vector<float>(cm.values().begin(), cm.values().end()), true);
    Miner miner(ds, qm, cands, MinerConfig{1, 1});
    const auto anchor = oracle::random_unit_rows(rng, 1, 8);

    std::vector<std::pair<float, std::string>> scored;
    for (std::size_t i = 0; i < 10; ++i) scored.emplace_back(dot(qm.row(i), anchor), qm.id(i));
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    EXPECT_EQ(miner.assign_owner("shared", anchor), scored.front().second);
  }
}

TEST(AssignOwner, OwnerlessCandidateIsAnError) {
  auto ds = make_dataset({{"a", "x"}, {"b", "x"}}, {"x", "orphan"});
  EmbeddingMatrix q({"a", "b"}, 2, {1, 0, 0, 1}, true);
  EmbeddingMatrix c({"x", "orphan"}, 2, {1, 0, 0, 1}, true);
  Miner miner(ds, q, c, MinerConfig{1, 1});
  const float anchor[] = {1, 0};
  try {
    miner.assign_owner("orphan", anchor);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::not_an_owner);
  }
}

TEST(Mine, TwoOrthogonalQueries) {
  auto ds = make_dataset({{"a", "x"}, {"b", "y"}}, {"x", "y"});
  EmbeddingMatrix q({"a", "b"}, 2, {1, 0, 0, 1}, true);
  EmbeddingMatrix c({"x", "y"}, 2, {1, 0, 0, 1}, true);
  auto r = saha::mine(ds, q, c, MinerConfig{1, 1});
  ASSERT_EQ(r.clusters.size(), 1u);
  const auto& cl = r.clusters[0];
  EXPECT_EQ(cl.anchor_qid, "a");
  EXPECT_EQ(cl.anchor_did, "x");
  EXPECT_EQ(cl.phase, 1);
  ASSERT_EQ(cl.negatives.size(), 1u);
  EXPECT_EQ(cl.negatives[0].qid, "b");
  EXPECT_EQ(cl.negatives[0].did, "y");
  EXPECT_FLOAT_EQ(cl.negatives[0].owner_sim, 0.0F);
  EXPECT_TRUE(r.stats.unassigned.empty());
  EXPECT_EQ(r.stats.phase2_clusters, 0u);
}

TEST(Mine, AnchorWithOwnerlessNeighborsIsSkipped) {
  // a's only retrieved candidate (k*m = 1) is the orphan, so phase 1 skips a
  // and b anchors instead with a as its negative.
  auto ds = make_dataset({{"a", "x"}, {"b", "y"}}, {"x", "y", "orphan"});
  EmbeddingMatrix q({"a", "b"}, 2, {1, 0, 0, 1}, true);
  EmbeddingMatrix c({"x", "y", "orphan"}, 2, {1, 0, 0.6F, -0.8F, 1, 0}, true);
  auto r = saha::mine(ds, q, c, MinerConfig{1, 1});
  EXPECT_EQ(r.stats.skipped_anchors, 1u);
  ASSERT_EQ(r.clusters.size(), 1u);
  EXPECT_EQ(r.clusters[0].anchor_qid, "b");
  EXPECT_EQ(r.clusters[0].negatives[0].qid, "a");
}

TEST(Mine, OwnPositiveNeverInPool) {
  auto inst = oracle::random_instance(5, 60, 40, 12);
  Miner miner(inst.dataset, inst.query_emb, inst.cand_emb, MinerConfig{3, 2});
  for (const auto& rec : inst.dataset.queries) {
    auto pool = miner.retrieve_pool(rec.qid);
    EXPECT_EQ(pool.size(), 6u);
    EXPECT_EQ(std::count(pool.begin(), pool.end(), rec.positive_did), 0);
  }
}

TEST(Mine, PoolHoldsMTimesKCandidates) {
  auto inst = oracle::random_instance(6, 80, 100, 16);
  MinerConfig cfg{7, 4};
  Miner miner(inst.dataset, inst.query_emb, inst.cand_emb, cfg);
  EXPECT_EQ(miner.retrieve_pool("q0").size(), 28u);
  auto r = miner.mine();
  EXPECT_EQ(r.stats.pool_size, 28u);
}

TEST(Mine, ConfigErrors) {
  auto inst = oracle::random_instance(7, 10, 10, 4);
  try {
    saha::mine(inst.dataset, inst.query_emb, inst.cand_emb, MinerConfig{0, 4});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
  try {
    saha::mine(inst.dataset, inst.query_emb, inst.cand_emb, MinerConfig{10, 4});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Mine, RejectsUnnormalizedEmbeddings) {
  auto ds = make_dataset({{"a", "x"}, {"b", "y"}}, {"x", "y"});
  EmbeddingMatrix q({"a", "b"}, 2, {2, 0, 0, 2}, false);
  EmbeddingMatrix c({"x", "y"}, 2, {1, 0, 0, 1}, true);
  EXPECT_THROW(saha::mine(ds, q, c, MinerConfig{1, 1}), Error);
}

TEST(Mine, MatchesReferenceOnRandomInstances) {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    auto inst = oracle::random_instance(seed, 40 + seed * 7, 30 + seed * 5, 6 + seed % 5, 3 + seed % 4);
    for (MinerConfig cfg : {MinerConfig{2, 2}, MinerConfig{3, 4}, MinerConfig{4, 1, false, true},
                            MinerConfig{3, 3, true, false}}) {
      auto got = saha::mine(inst.dataset, inst.query_emb, inst.cand_emb, cfg);
      auto want = oracle::ReferenceSaha(inst.dataset, inst.query_emb, inst.cand_emb, cfg).run();
      ASSERT_EQ(got.clusters, want.clusters) << "seed " << seed << " k " << cfg.k;
      EXPECT_EQ(got.stats.unassigned, want.unassigned);

      std::vector<std::string> log;
      EXPECT_EQ(all_invariants(inst, cfg, got, log), 0u) << (log.empty() ? "" : log.front());
    }
  }
}

TEST(Mine, Deterministic) {
  auto inst = oracle::random_instance(99, 300, 200, 24);
  MinerConfig cfg{5, 4};
  auto a = saha::mine(inst.dataset, inst.query_emb, inst.cand_emb, cfg);
  auto b = saha::mine(inst.dataset, inst.query_emb, inst.cand_emb, cfg);
  EXPECT_EQ(saha::serialize_clusters(a.clusters), saha::serialize_clusters(b.clusters));
  EXPECT_EQ(saha::stats_json(a.stats), saha::stats_json(b.stats));
}

TEST(ClusterFile, RoundTrip) {
  auto inst = oracle::random_instance(3, 120, 80, 10);
  auto r = saha::mine(inst.dataset, inst.query_emb, inst.cand_emb, MinerConfig{4, 2});
  ASSERT_FALSE(r.clusters.empty());
  const auto text = saha::serialize_clusters(r.clusters);
  EXPECT_EQ(saha::parse_clusters(text), r.clusters);
  EXPECT_EQ(saha::serialize_clusters(saha::parse_clusters(text)), text);
}

TEST(ClusterFile, BadPhaseIsParseError) {
  const std::string text =
      R"({"anchor_qid":"a","anchor_did":"x","phase":3,"negatives":[]})"
      "\n";
  EXPECT_THROW(saha::parse_clusters(text), ParseError);
}
