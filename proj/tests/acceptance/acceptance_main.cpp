// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. `--only N[,M...]` runs a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <omp.h>

#include "cli.hpp"
#include "embkit/attnstats.hpp"
#include "embkit/contrastive.hpp"
#include "embkit/evalkit.hpp"
#include "embkit/fileutil.hpp"
#include "embkit/prompts.hpp"
#include "embkit/saha.hpp"
#include "embkit/synth.hpp"
#include "embkit/vecindex.hpp"
#include "oracles/attention_reference.hpp"
#include "oracles/brute_force.hpp"
#include "oracles/infonce_reference.hpp"
#include "oracles/instances.hpp"
#include "oracles/invariants.hpp"
#include "oracles/saha_reference.hpp"

namespace fs = std::filesystem;
using namespace embkit;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome retrieval_exactness() {
  Outcome o;
  const auto t0 = Clock::now();
  struct Case {
    std::size_t n, queries, k, duplicate_every;
  };
  // 1000 queries in total; duplicated rows force score ties.
  const std::vector<Case> cases = {
      {10000, 500, 10, 0}, {10000, 200, 100, 0}, {10000, 100, 1, 97},
      {3000, 150, 60, 3},  {37, 50, 42, 5}};
  std::size_t checked = 0;
  Rng rng(2024);
  for (const auto& c : cases) {
    auto rows = oracle::random_unit_rows(rng, c.n, 128);
    if (c.duplicate_every > 0) {
      for (std::size_t r = c.duplicate_every; r < c.n; r += c.duplicate_every) {
        std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>((r - 1) * 128), 128,
                    rows.begin() + static_cast<std::ptrdiff_t>(r * 128));
      }
    }
    std::vector<std::string> ids;
    for (std::size_t r = 0; r < c.n; ++r) ids.push_back("r" + std::to_string(r));
    EmbeddingMatrix m(ids, 128, rows, true);
    SimilarityIndex index(m, 1000);

    // Half the queries are copies of corpus rows so that ties reach the top.
    auto queries = oracle::random_unit_rows(rng, c.queries, 128);
    for (std::size_t q = 0; q < c.queries; q += 2) {
      const std::size_t src = rng.index(c.n);
      std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>(src * 128), 128,
                  queries.begin() + static_cast<std::ptrdiff_t>(q * 128));
    }
    const auto batch = index.search(queries, c.k);
    for (std::size_t q = 0; q < c.queries; ++q) {
      const std::span<const float> qv(queries.data() + q * 128, 128);
      const auto want = oracle::full_scan_topk(m, qv, c.k);
      const auto single = index.topk(qv, c.k);
      bool same = want.size() == batch[q].size() && want.size() == single.size();
      for (std::size_t i = 0; same && i < want.size(); ++i) {
        same = want[i].id == m.id(batch[q][i].row) && want[i].id == single[i].id;
      }
      if (!same) o.fail("mismatch at n=" + std::to_string(c.n) + " query " + std::to_string(q));
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 30.0) o.fail("took " + fmt("%.1f", secs) + " s");
  if (o.pass) o.detail = std::to_string(checked) + " queries identical to full scan, " + fmt("%.1f s", secs);
  return o;
}

// ---------------------------------------------------------------- 2

Outcome saha_oracle_equivalence() {
  Outcome o;
  const std::size_t ks[] = {1, 3, 7};
  const std::size_t ms[] = {1, 2, 4};
  Rng rng(77);
  std::size_t clusters = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const std::size_t queries = 20 + rng.index(281);
    const std::size_t docs = queries / 2 + rng.index(queries);
    const std::size_t dim = 4 + rng.index(29);
    const std::size_t topics = 1 + rng.index(12);
    MinerConfig cfg{ks[i % 3], ms[(i / 3) % 3], i % 5 != 4, i % 7 != 6};
    const auto inst = oracle::random_instance(1000 + i, queries, docs, dim, topics);
    const auto got = saha::mine(inst.dataset, inst.query_emb, inst.cand_emb, cfg);
    const auto want = oracle::ReferenceSaha(inst.dataset, inst.query_emb, inst.cand_emb, cfg).run();
    if (got.clusters != want.clusters || got.stats.unassigned != want.unassigned) {
      o.fail("instance " + std::to_string(i) + " differs (k=" + std::to_string(cfg.k) +
             ", m=" + std::to_string(cfg.pool_multiplier) + ")");
    }
    clusters += got.clusters.size();
  }
  if (o.pass) o.detail = "50 instances, " + std::to_string(clusters) + " clusters identical";
  return o;
}

// ---------------------------------------------------------------- 3

Outcome mining_invariants() {
  Outcome o;
  std::size_t violations = 0;
  std::size_t runs = 0;
  std::vector<std::string> log;
  const std::size_t sizes[] = {2000, 5000, 10000};
  std::size_t i = 0;
  for (std::size_t k : {1, 7, 15}) {
    for (std::size_t m : {4, 6, 8}) {
      const std::size_t n = sizes[i % 3];
      const auto inst = oracle::random_instance(500 + i, n, n * 4 / 5, 24, 16);
      const MinerConfig cfg{k, m};
      const auto r = saha::mine(inst.dataset, inst.query_emb, inst.cand_emb, cfg);
      violations += oracle::check_phase1_disjoint(r.clusters, log) +
                    oracle::check_totality(inst.dataset, r.clusters, r.stats.unassigned, log) +
                    oracle::check_leakage(r.clusters, log) +
                    oracle::check_owner_fidelity(inst.dataset, r.clusters, log) +
                    oracle::check_cluster_sizes(r.clusters, cfg, log) +
                    oracle::check_ascending_selection(inst.dataset, inst.query_emb, inst.cand_emb,
                                                      cfg, r.clusters, log);
      ++runs;
      ++i;
    }
  }
  if (violations > 0) o.fail(std::to_string(violations) + " violations, first: " + log.front());
  if (o.pass) o.detail = std::to_string(runs) + " grid points up to 10000 queries, 0 violations";
  return o;
}

// ---------------------------------------------------------------- 4

Outcome pool_arithmetic() {
  Outcome o;
  const auto inst = oracle::random_instance(44, 400, 300, 16, 6);
  const MinerConfig cfg{7, 4};
  saha::Miner miner(inst.dataset, inst.query_emb, inst.cand_emb, cfg);
  for (const auto& q : inst.dataset.queries) {
    const auto pool = miner.retrieve_pool(q.qid);
    const auto want = oracle::full_scan_topk(inst.cand_emb, inst.query_emb.row(inst.query_emb.row_of(q.qid)),
                                             28, {q.positive_did});
    bool same = pool.size() == 28 && want.size() == 28;
    for (std::size_t i = 0; same && i < 28; ++i) same = pool[i] == want[i].id;
    if (!same) o.fail("pool of " + q.qid + " is not the 28 nearest non-positive candidates");
  }
  const auto r = miner.mine();
  if (r.stats.pool_size != 28) o.fail("stats report pool " + std::to_string(r.stats.pool_size));
  if (o.pass) o.detail = "400 anchors, pool = 28 = 7 x 4";
  return o;
}

// ---------------------------------------------------------------- 5

Outcome infonce_checks() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst_uniform = 0.0;
  for (double tau : {0.02, 0.1, 1.0}) {
    std::vector<double> sims(64, 0.3);
    const auto r = contrastive::infonce_from_similarities(sims, 8, tau);
    for (double l : r.per_anchor) worst_uniform = std::max(worst_uniform, std::abs(l - std::log(8.0)));
    // Identical rows give identical similarities through the embedding path too.
    contrastive::ClusterBatch b;
    b.rows = 8;
    b.dim = 3;
    for (int i = 0; i < 8; ++i) {
      b.queries.insert(b.queries.end(), {1.0, 2.0, 2.0});
      b.candidates.insert(b.candidates.end(), {2.0, 1.0, -2.0});
    }
    for (double l : contrastive::infonce_loss(b, LossConfig{tau}).per_anchor) {
      worst_uniform = std::max(worst_uniform, std::abs(l - std::log(8.0)));
    }
  }
  if (worst_uniform > 1e-9) o.fail("uniform loss off by " + fmt("%.3g", worst_uniform));

  Rng rng(5);
  double worst_fd = 0.0;
  for (int t = 0; t < 20; ++t) {
    contrastive::ClusterBatch b;
    b.rows = 2 + rng.index(15);
    b.dim = 4 + rng.index(29);
    for (std::size_t i = 0; i < b.rows * b.dim; ++i) {
      b.queries.push_back(rng.normal());
      b.candidates.push_back(rng.normal());
    }
    const auto g = contrastive::infonce_grad(b, LossConfig{0.02});
    const auto fd = oracle::finite_difference(b.queries, b.candidates, b.rows, b.dim, 0.02);
    worst_fd = std::max({worst_fd, oracle::relative_error(g.d_queries, fd.d_queries),
                         oracle::relative_error(g.d_candidates, fd.d_candidates)});
  }
  if (worst_fd > 1e-4) o.fail("finite-difference relative error " + fmt("%.3g", worst_fd));
  const double secs = seconds_since(t0);
  if (secs >= 10.0) o.fail("took " + fmt("%.1f", secs) + " s");
  if (o.pass) {
    o.detail = "ln 8 within " + fmt("%.1e", worst_uniform) + ", worst FD rel err " +
               fmt("%.2e", worst_fd) + ", " + fmt("%.2f s", secs);
  }
  return o;
}

// ---------------------------------------------------------------- 6

Outcome aggregation() {
  Outcome o;
  std::array<std::optional<eval::MetaSummary>, eval::kMetaTasks> meta;
  meta[0] = eval::MetaSummary{48.6, 10};
  meta[1] = eval::MetaSummary{33.3, 10};
  meta[2] = eval::MetaSummary{44.1, 12};
  meta[3] = eval::MetaSummary{52.6, 4};
  const auto t = eval::aggregate_from_means(meta);
  if (std::abs(t.overall - 43.3) > 0.05) o.fail("overall " + fmt("%.4f", t.overall));

  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t count = 1 + rng.index(20);
    for (auto& m : meta) m = eval::MetaSummary{100.0 * rng.uniform(), count};
    const auto e = eval::aggregate_from_means(meta);
    if (e.overall != e.avg_task) o.fail("equal counts: overall != avg-task");
  }
  if (o.pass) o.detail = "overall " + fmt("%.4f", t.overall) + "; equal counts exact on 100 draws";
  return o;
}

// ---------------------------------------------------------------- 7

Outcome sampling_proxy() {
  Outcome o;
  const auto t0 = Clock::now();
  std::size_t fn_ok = 0;
  std::size_t p1_ok = 0;
  std::ostringstream rows;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    synth::SynthConfig sc;
    sc.seed = seed;
    const auto data = synth::generate(sc);
    eval::CompareConfig cfg;
    cfg.seed = seed;
    cfg.train.seed = seed;
    cfg.strategies = {eval::Sampling::in_batch, eval::Sampling::naive_hn, eval::Sampling::saha};
    eval::SamplingInputs in{&data.train, &data.features_q, &data.features_c, &data.labels,
                            &data.eval_task};
    const auto r = eval::compare_sampling(in, cfg);
    const auto* rnd = r.find("in_batch");
    const auto* hn = r.find("naive_hn");
    const auto* sh = r.find("saha");
    if (sh->fn_rate < hn->fn_rate && hn->fn_rate > 0.0) ++fn_ok;
    if (sh->precision_at_1 >= rnd->precision_at_1) ++p1_ok;
    rows << "\n    seed " << seed << ": fn saha " << fmt("%.3f", sh->fn_rate) << " hn "
         << fmt("%.3f", hn->fn_rate) << " | P@1 saha " << fmt("%.3f", sh->precision_at_1)
         << " random " << fmt("%.3f", rnd->precision_at_1) << " hn "
         << fmt("%.3f", hn->precision_at_1);
  }
  const double secs = seconds_since(t0);
  if (fn_ok != 5) o.fail("FN ordering held on " + std::to_string(fn_ok) + "/5 seeds");
  if (p1_ok < 4) o.fail("SaHa >= random P@1 on " + std::to_string(p1_ok) + "/5 seeds");
  if (secs >= 300.0) o.fail("took " + fmt("%.1f", secs) + " s");
  o.detail = (o.pass ? "" : o.detail + "; ") + "FN " + std::to_string(fn_ok) + "/5, P@1 " +
             std::to_string(p1_ok) + "/5, " + fmt("%.1f s", secs) + rows.str();
  return o;
}

// ---------------------------------------------------------------- 8

std::vector<attn::TokenType> random_labels(Rng& rng, std::size_t seq) {
  std::vector<attn::TokenType> labels(seq);
  for (auto& t : labels) t = static_cast<attn::TokenType>(rng.index(attn::kTokenTypes));
  return labels;
}

Outcome attention_checks() {
  Outcome o;
  Rng rng(8);
  double worst_oracle = 0.0;
  double worst_partition = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto layers = static_cast<std::uint32_t>(1 + rng.index(4));
    const auto heads = static_cast<std::uint32_t>(1 + rng.index(6));
    const auto seq = static_cast<std::uint32_t>(2 + rng.index(40));
    const auto d = oracle::random_dump(rng, layers, heads, seq);
    const auto m = attn::TokenTypeMap::with_outputs(random_labels(rng, seq), attn::OutputMode::attending);
    std::array<std::size_t, attn::kTokenTypes> counts{};
    for (auto t : m.labels) ++counts[static_cast<std::size_t>(t)];
    for (std::size_t l = 0; l < layers; ++l) {
      const auto e = attn::attention_efficiency(d, m, l);
      long double weighted = 0;
      for (std::size_t t = 0; t < attn::kTokenTypes; ++t) {
        if (counts[t] == 0) continue;
        const auto want = oracle::efficiency_triple_loop(d, m, l, static_cast<attn::TokenType>(t));
        worst_oracle = std::max(worst_oracle, static_cast<double>(std::fabs(*e[t] - want)));
        weighted += *e[t] * counts[t];
      }
      long double mass = 0;
      for (auto i : m.output_positions) {
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t p = 0; p < seq; ++p) mass += static_cast<long double>(d.at(l, h, i, p)) / heads;
        }
      }
      worst_partition = std::max(worst_partition, static_cast<double>(std::fabs(weighted - mass)));
    }
  }
  if (worst_oracle > 1e-7) o.fail("triple-loop difference " + fmt("%.3g", worst_oracle));
  if (worst_partition > 1e-6) o.fail("partition difference " + fmt("%.3g", worst_partition));

  const auto [dump, map] = oracle::system_heavy_dump();
  const auto report = attn::efficiency_report(dump, map, {});
  if (!report.system_dominant.value_or(false)) o.fail("system-heavy dump not flagged");
  if (o.pass) {
    o.detail = "oracle within " + fmt("%.1e", worst_oracle) + ", partition within " +
               fmt("%.1e", worst_partition) + ", system dominant on " +
               std::to_string(report.layers_system_above_user) + "/" +
               std::to_string(report.layers) + " layers";
  }
  return o;
}

// ---------------------------------------------------------------- 9

Outcome golden_prompts() {
  Outcome o;
  const std::string dir = EMBKIT_GOLDEN_DIR;
  if (std::string(prompts::kSystemText) !=
      "Given an image, summarize the provided image in one word. Given only text, describe "
      "the text in one word.") {
    o.fail("system text differs");
  }
  const std::vector<ContentPart> query = {ContentPart::text("[ Query ]")};
  const std::vector<ContentPart> candidate = {ContentPart::text("[ Candidate ]")};
  const auto q = prompts::render_query(prompts::kSystemText, "[ Task Instruction ]", query,
                                       "[ Representation Prompt ]",
                                       prompts::kDefaultStrategy);
  if (prompts::to_text(q) + "\n" != read_file(dir + "/query_default.txt")) o.fail("query block differs");
  const auto c = prompts::render_candidate(prompts::kSystemText, candidate,
                                           prompts::kDefaultStrategy);
  if (prompts::to_text(c) + "\n" != read_file(dir + "/candidate_default.txt")) {
    o.fail("candidate block differs");
  }
  if (o.pass) o.detail = "default query and candidate blocks byte-identical";
  return o;
}

// ---------------------------------------------------------------- 10

struct CliRun {
  int code;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "embkit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, err.str()};
}

Outcome determinism() {
  Outcome o;
  const int default_threads = omp_get_max_threads();
  const fs::path dir = fs::temp_directory_path() / "embkit_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  auto same_files = [&](const std::string& a, const std::string& b) {
    return read_file(p(a)) == read_file(p(b));
  };
  auto must = [&](const CliRun& r, const std::string& what) {
    if (r.code != 0) o.fail(what + " failed: " + r.err);
  };

  for (const char* tag : {"a", "b"}) {
    must(cli({"gen-synth", "--seed", "17", "--out-dir", p(std::string("synth_") + tag)}), "gen-synth");
  }
  for (const auto& entry : fs::directory_iterator(p("synth_a"))) {
    const auto name = entry.path().filename().string();
    if (!same_files("synth_a/" + name, "synth_b/" + name)) o.fail("gen-synth " + name + " differs");
  }

  const std::string d = p("synth_a") + "/";
  auto mine = [&](const std::string& out, const std::string& threads) {
    return cli({"--threads", threads, "mine", "--queries", d + "train_queries.jsonl", "--candidates",
                d + "train_candidates.jsonl", "--query-emb", d + "features_q.emb", "--cand-emb",
                d + "features_c.emb", "--normalize", "--k", "7", "--out", p(out), "--stats-out",
                p(out + ".stats")});
  };
  must(mine("c1.jsonl", "1"), "mine");
  must(mine("c2.jsonl", "1"), "mine");
  must(mine("c3.jsonl", "3"), "mine");
  if (!same_files("c1.jsonl", "c2.jsonl") || !same_files("c1.jsonl.stats", "c2.jsonl.stats")) {
    o.fail("mine reruns differ");
  }
  if (!same_files("c1.jsonl", "c3.jsonl")) o.fail("mine differs across thread counts");

  auto train = [&](const std::string& tag) {
    return cli({"train-toy", "--clusters", p("c1.jsonl"), "--features-q", d + "features_q.emb",
                "--features-c", d + "features_c.emb", "--steps", "50", "--seed", "3",
                "--batch-clusters", "64", "--out-adapter", p("w" + tag), "--loss-out", p("l" + tag)});
  };
  must(train("1"), "train-toy");
  must(train("2"), "train-toy");
  if (!same_files("w1", "w2") || !same_files("l1", "l2")) o.fail("train-toy reruns differ");
  fs::remove_all(dir);
  omp_set_num_threads(default_threads);

  const auto t0 = Clock::now();
  const auto inst = oracle::random_instance(10, 100000, 100000, 256, 64);
  const double gen_secs = seconds_since(t0);
  const auto t1 = Clock::now();
  const auto r = saha::mine(inst.dataset, inst.query_emb, inst.cand_emb, MinerConfig{15, 4});
  const double secs = seconds_since(t1);
  if (secs >= 600.0) o.fail("100k-query mine took " + fmt("%.1f", secs) + " s");
  if (o.pass) {
    o.detail = "mine/train-toy/gen-synth byte-identical; 100k x d256 mine " + fmt("%.1f s", secs) +
               " (" + std::to_string(r.clusters.size()) + " clusters, " +
               std::to_string(omp_get_max_threads()) + " threads, data gen " +
               fmt("%.1f s", gen_secs) + ")";
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"retrieval exactness", retrieval_exactness},
      {"miner equals reference", saha_oracle_equivalence},
      {"mining invariants", mining_invariants},
      {"pool arithmetic", pool_arithmetic},
      {"InfoNCE analytic checks", infonce_checks},
      {"aggregation arithmetic", aggregation},
      {"sampling proxy ordering", sampling_proxy},
      {"attention efficiency", attention_checks},
      {"prompt golden files", golden_prompts},
      {"determinism and scale", determinism},
  };

  std::set<std::size_t> only;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) != "--only") continue;
    std::stringstream list(argv[i + 1]);
    for (std::string item; std::getline(list, item, ',');) only.insert(std::stoul(item));
  }

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    failures += o.pass ? 0 : 1;
    std::printf("AC%-2zu %s  %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
