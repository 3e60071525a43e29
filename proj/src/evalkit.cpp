#include "embkit/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "embkit/error.hpp"
#include "embkit/fileutil.hpp"
#include "embkit/random.hpp"
#include "embkit/saha.hpp"
#include "embkit/vecindex.hpp"

namespace embkit::eval {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr const char* kMetaNames[kMetaTasks] = {"Classification", "VQA", "Retrieval", "Grounding"};
constexpr const char* kSamplingNames[] = {"in_batch", "naive_hn", "hn_beta", "saha"};

// Candidates of `ds` in manifest order, rows taken from `emb`.
EmbeddingMatrix manifest_candidates(const Dataset& ds, const EmbeddingMatrix& emb) {
  std::vector<std::string> ids;
  std::vector<float> values;
  values.reserve(ds.candidates.size() * emb.dim());
  for (const auto& c : ds.candidates) {
    ids.push_back(c.did);
    const auto row = emb.row(emb.row_of(c.did));
    values.insert(values.end(), row.begin(), row.end());
  }
  return EmbeddingMatrix(std::move(ids), emb.dim(), std::move(values), emb.normalized());
}

// Top documents per query, owner-less rows and the query's own positive
// excluded. With `beta`, documents scoring above s(q, c+) + beta are dropped
// before the first k are taken. Each document is paired with its first owner.
std::vector<TrainingCluster> mine_documents(const Dataset& ds, const EmbeddingMatrix& qemb,
                                            const EmbeddingMatrix& cemb, std::size_t k,
                                            std::size_t retrieve, std::optional<double> beta) {
  const auto cands = manifest_candidates(ds, cemb);
  std::vector<std::vector<std::size_t>> owners(cands.rows());
  std::vector<std::size_t> positive(ds.queries.size());
  for (std::size_t q = 0; q < ds.queries.size(); ++q) {
    positive[q] = cands.row_of(ds.queries[q].positive_did);
    owners[positive[q]].push_back(q);
  }
  std::vector<std::size_t> ownerless;
  for (std::size_t r = 0; r < cands.rows(); ++r) {
    if (owners[r].empty()) ownerless.push_back(r);
  }

  const std::size_t d = qemb.dim();
  std::vector<float> block(ds.queries.size() * d);
  std::vector<std::vector<std::size_t>> excluded(ds.queries.size());
  std::vector<ExcludedRows> excludes(ds.queries.size());
  for (std::size_t q = 0; q < ds.queries.size(); ++q) {
    const auto row = qemb.row(qemb.row_of(ds.queries[q].qid));
    std::copy(row.begin(), row.end(), block.begin() + static_cast<std::ptrdiff_t>(q * d));
    auto& ex = excluded[q];
    ex = ownerless;
    ex.insert(std::upper_bound(ex.begin(), ex.end(), positive[q]), positive[q]);
    excludes[q] = ExcludedRows(ex);
  }
  SimilarityIndex index(cands);
  const auto found = index.search(block, retrieve, excludes);

  std::vector<TrainingCluster> out;
  for (std::size_t q = 0; q < ds.queries.size(); ++q) {
    const auto anchor = std::span<const float>(block).subspan(q * d, d);
    const float pos_sim = dot(cands.row(positive[q]), anchor);
    TrainingCluster c;
    c.anchor_qid = ds.queries[q].qid;
    c.anchor_did = ds.queries[q].positive_did;
    for (const auto& hit : found[q]) {
      if (c.negatives.size() == k) break;
      if (beta && hit.score > pos_sim + *beta) continue;
      const std::size_t owner = owners[hit.row].front();
      const auto owner_vec = qemb.row(qemb.row_of(ds.queries[owner].qid));
      c.negatives.push_back({ds.queries[owner].qid, cands.id(hit.row), dot(owner_vec, anchor)});
    }
    if (!c.negatives.empty()) out.push_back(std::move(c));
  }
  return out;
}

std::vector<TrainingCluster> random_groups(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> order(ds.queries.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<TrainingCluster> out;
  for (std::size_t start = 0; start + k + 1 <= order.size(); start += k + 1) {
    TrainingCluster c;
    c.anchor_qid = ds.queries[order[start]].qid;
    c.anchor_did = ds.queries[order[start]].positive_did;
    for (std::size_t j = start + 1; j <= start + k; ++j) {
      c.negatives.push_back({ds.queries[order[j]].qid, ds.queries[order[j]].positive_did, 0.0F});
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

const char* to_string(MetaTask m) { return kMetaNames[static_cast<std::size_t>(m)]; }

std::optional<MetaTask> parse_meta_task(std::string_view name) {
  for (std::size_t i = 0; i < kMetaTasks; ++i) {
    if (name == kMetaNames[i]) return static_cast<MetaTask>(i);
  }
  return std::nullopt;
}

void EvalTask::check() const {
  std::unordered_set<std::string> seen;
  for (const auto& q : queries) {
    if (!seen.insert(q.qid).second) {
      throw Error(ErrorKind::validation, "task '" + name + "': duplicate qid '" + q.qid + "'");
    }
    if (std::find(q.pool.begin(), q.pool.end(), q.gold) == q.pool.end()) {
      throw Error(ErrorKind::validation,
                  "task '" + name + "': gold '" + q.gold + "' of '" + q.qid + "' is not in its pool");
    }
  }
}

EvalTask parse_eval_task(const std::string& text, std::string name, MetaTask meta,
                         const std::string& source) {
  EvalTask task{std::move(name), meta, {}};
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto o = nlohmann::json::parse(line);
      task.queries.push_back({o.at("qid").get<std::string>(),
                              o.at("pool").get<std::vector<std::string>>(),
                              o.at("gold").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  task.check();
  return task;
}

EvalTask load_eval_task(const std::string& path, std::string name, MetaTask meta) {
  return parse_eval_task(read_file(path), std::move(name), meta, path);
}

std::string serialize_eval_task(const EvalTask& task) {
  std::string out;
  for (const auto& q : task.queries) {
    ordered_json o;
    o["qid"] = q.qid;
    o["pool"] = q.pool;
    o["gold"] = q.gold;
    out += o.dump();
    out += '\n';
  }
  return out;
}

Rankings rank_pools(const EvalTask& task, const EmbeddingMatrix& queries,
                    const EmbeddingMatrix& candidates) {
  if (!queries.normalized() || !candidates.normalized()) {
    throw Error(ErrorKind::validation, "ranking needs normalized embeddings");
  }
  Rankings out;
  out.reserve(task.queries.size());
  for (const auto& q : task.queries) {
    std::vector<PoolEntry> pool;
    pool.reserve(q.pool.size());
    for (const auto& did : q.pool) pool.push_back({did, candidates.row(candidates.row_of(did))});
    const auto hits = topk_among(queries.row(queries.row_of(q.qid)), pool, pool.size());
    auto& ranked = out[q.qid];
    for (const auto& h : hits) ranked.push_back(h.id);
  }
  return out;
}

double precision_at_1(const EvalTask& task, const Rankings& rankings) {
  if (task.queries.empty()) throw Error(ErrorKind::validation, "task '" + task.name + "' has no queries");
  std::size_t hits = 0;
  for (const auto& q : task.queries) {
    auto it = rankings.find(q.qid);
    if (it == rankings.end() || it->second.empty()) {
      throw Error(ErrorKind::validation, "no ranking for query '" + q.qid + "'");
    }
    hits += it->second.front() == q.gold;
  }
  return static_cast<double>(hits) / static_cast<double>(task.queries.size());
}

ScoreTable aggregate(const std::vector<TaskScore>& scores) {
  if (scores.empty()) throw Error(ErrorKind::validation, "nothing to aggregate");
  std::array<double, kMetaTasks> sums{};
  std::array<std::size_t, kMetaTasks> counts{};
  for (const auto& s : scores) {
    sums[static_cast<std::size_t>(s.meta_task)] += s.score;
    ++counts[static_cast<std::size_t>(s.meta_task)];
  }
  std::array<std::optional<MetaSummary>, kMetaTasks> meta;
  for (std::size_t m = 0; m < kMetaTasks; ++m) {
    if (counts[m]) meta[m] = MetaSummary{sums[m] / static_cast<double>(counts[m]), counts[m]};
  }
  ScoreTable t = aggregate_from_means(meta);
  t.tasks = scores;
  // Direct mean over tasks; equal to the count-weighted meta means.
  double total = 0.0;
  for (const auto& s : scores) total += s.score;
  t.overall = total / static_cast<double>(scores.size());
  return t;
}

ScoreTable aggregate_from_means(const std::array<std::optional<MetaSummary>, kMetaTasks>& meta) {
  ScoreTable t;
  t.meta = meta;
  // Counts are divided by their gcd first, so equal counts become unit
  // weights and the weighted sum performs exactly the unweighted sum's
  // operations.
  std::size_t g = 0;
  for (const auto& m : meta) {
    if (!m) continue;
    if (m->count == 0) throw Error(ErrorKind::validation, "dataset counts must be positive");
    g = std::gcd(g, m->count);
  }
  if (g == 0) throw Error(ErrorKind::validation, "nothing to aggregate");
  double weighted = 0.0, means = 0.0;
  std::size_t weights = 0, present = 0;
  for (const auto& m : meta) {
    if (!m) continue;
    const std::size_t w = m->count / g;
    weighted += w == 1 ? m->mean : m->mean * static_cast<double>(w);
    weights += w;
    means += m->mean;
    ++present;
  }
  t.overall = weighted / static_cast<double>(weights);
  t.avg_task = means / static_cast<double>(present);
  return t;
}

std::string score_table_json(const ScoreTable& table) {
  ordered_json o;
  ordered_json tasks = ordered_json::array();
  for (const auto& s : table.tasks) {
    tasks.push_back({{"name", s.name}, {"meta_task", to_string(s.meta_task)}, {"precision_at_1", s.score}});
  }
  o["tasks"] = std::move(tasks);
  ordered_json meta = ordered_json::object();
  for (std::size_t m = 0; m < kMetaTasks; ++m) {
    if (table.meta[m]) {
      meta[kMetaNames[m]] = {{"mean", table.meta[m]->mean}, {"datasets", table.meta[m]->count}};
    }
  }
  o["meta_tasks"] = std::move(meta);
  o["overall"] = table.overall;
  o["avg_task"] = table.avg_task;
  return o.dump(2) + "\n";
}

double false_negative_rate(const std::vector<TrainingCluster>& clusters, const Labels& labels) {
  auto label_of = [&](const std::string& qid) {
    auto it = labels.find(qid);
    if (it == labels.end()) throw Error(ErrorKind::validation, "no label for query '" + qid + "'");
    return it->second;
  };
  std::size_t pairs = 0, same = 0;
  for (const auto& c : clusters) {
    const int anchor = label_of(c.anchor_qid);
    for (const auto& n : c.negatives) {
      ++pairs;
      same += label_of(n.qid) == anchor;
    }
  }
  return pairs == 0 ? 0.0 : static_cast<double>(same) / static_cast<double>(pairs);
}

const char* to_string(Sampling s) { return kSamplingNames[static_cast<std::size_t>(s)]; }

std::optional<Sampling> parse_sampling(std::string_view name) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (name == kSamplingNames[i]) return static_cast<Sampling>(i);
  }
  return std::nullopt;
}

const StrategyReport* ComparisonReport::find(std::string_view name) const {
  for (const auto& s : strategies) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::vector<TrainingCluster> sample_clusters(Sampling strategy, const Dataset& train,
                                             const EmbeddingMatrix& query_emb,
                                             const EmbeddingMatrix& cand_emb,
                                             const CompareConfig& cfg) {
  const std::size_t k = cfg.miner.k;
  switch (strategy) {
    case Sampling::in_batch:
      return random_groups(train, k, cfg.seed);
    case Sampling::naive_hn:
      return mine_documents(train, query_emb, cand_emb, k, k, std::nullopt);
    case Sampling::hn_beta:
      return mine_documents(train, query_emb, cand_emb, k, cfg.miner.pool_size(), cfg.beta);
    case Sampling::saha:
      return saha::mine(train, query_emb, cand_emb, cfg.miner).clusters;
  }
  return {};
}

ComparisonReport compare_sampling(const SamplingInputs& in, const CompareConfig& cfg) {
  if (!in.train || !in.features_q || !in.features_c || !in.labels || !in.eval) {
    throw Error(ErrorKind::validation, "compare_sampling is missing an input");
  }
  cfg.miner.check();
  const auto qn = l2_normalize(*in.features_q);
  const auto cn = l2_normalize(*in.features_c);

  ComparisonReport report;
  report.seed = cfg.seed;
  report.k = cfg.miner.k;
  report.pool_multiplier = cfg.miner.pool_multiplier;
  report.baseline_precision_at_1 = precision_at_1(*in.eval, rank_pools(*in.eval, qn, cn));

  for (auto strategy : cfg.strategies) {
    StrategyReport s;
    s.name = to_string(strategy);
    const auto start = std::chrono::steady_clock::now();
    const auto clusters = sample_clusters(strategy, *in.train, qn, cn, cfg);
    const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
    // In-batch grouping is not a mining step.
    s.mining_seconds = strategy == Sampling::in_batch || !cfg.record_timing ? 0.0 : took.count();

    s.clusters = clusters.size();
    s.fn_rate = false_negative_rate(clusters, *in.labels);
    double sim = 0.0;
    for (const auto& c : clusters) {
      const auto anchor = qn.row(qn.row_of(c.anchor_qid));
      for (const auto& n : c.negatives) {
        sim += dot(cn.row(cn.row_of(n.did)), anchor);
        ++s.pairs;
      }
    }
    s.mean_negative_sim = s.pairs ? sim / static_cast<double>(s.pairs) : 0.0;

    auto train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;
    const auto trained = contrastive::train_adapter(*in.features_q, *in.features_c, clusters, train_cfg);
    const auto aq = contrastive::apply_adapter(trained.adapter, *in.features_q);
    const auto ac = contrastive::apply_adapter(trained.adapter, *in.features_c);
    s.precision_at_1 = precision_at_1(*in.eval, rank_pools(*in.eval, aq, ac));
    report.strategies.push_back(std::move(s));
  }
  return report;
}

std::string comparison_json(const ComparisonReport& r) {
  ordered_json o;
  o["seed"] = r.seed;
  o["k"] = r.k;
  o["pool_multiplier"] = r.pool_multiplier;
  o["baseline_precision_at_1"] = r.baseline_precision_at_1;
  ordered_json arr = ordered_json::array();
  for (const auto& s : r.strategies) {
    ordered_json e;
    e["name"] = s.name;
    e["clusters"] = s.clusters;
    e["pairs"] = s.pairs;
    e["fn_rate"] = s.fn_rate;
    e["mean_negative_sim"] = s.mean_negative_sim;
    e["precision_at_1"] = s.precision_at_1;
    e["mining_seconds"] = s.mining_seconds;
    arr.push_back(std::move(e));
  }
  o["strategies"] = std::move(arr);
  return o.dump(2) + "\n";
}

ComparisonReport parse_comparison_json(const std::string& text) {
  try {
    const auto o = nlohmann::json::parse(text);
    ComparisonReport r;
    r.seed = o.at("seed").get<std::uint64_t>();
    r.k = o.at("k").get<std::size_t>();
    r.pool_multiplier = o.at("pool_multiplier").get<std::size_t>();
    r.baseline_precision_at_1 = o.at("baseline_precision_at_1").get<double>();
    for (const auto& e : o.at("strategies")) {
      r.strategies.push_back({e.at("name").get<std::string>(), e.at("clusters").get<std::size_t>(),
                              e.at("pairs").get<std::size_t>(), e.at("fn_rate").get<double>(),
                              e.at("mean_negative_sim").get<double>(),
                              e.at("precision_at_1").get<double>(),
                              e.at("mining_seconds").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("comparison report: ") + e.what());
  }
}

}  // namespace embkit::eval
