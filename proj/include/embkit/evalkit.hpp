#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "embkit/contrastive.hpp"
#include "embkit/model.hpp"

namespace embkit::eval {

enum class MetaTask { Classification, VQA, Retrieval, Grounding };
inline constexpr std::size_t kMetaTasks = 4;

const char* to_string(MetaTask m);
std::optional<MetaTask> parse_meta_task(std::string_view name);

struct EvalQuery {
  std::string qid;
  std::vector<std::string> pool;
  std::string gold;

  bool operator==(const EvalQuery&) const = default;
};

struct EvalTask {
  std::string name;
  MetaTask meta_task = MetaTask::Retrieval;
  std::vector<EvalQuery> queries;

  void check() const;  // gold in pool, unique qids
};

// JSON lines {"qid", "pool": [dids], "gold"}.
EvalTask parse_eval_task(const std::string& text, std::string name, MetaTask meta,
                         const std::string& source = "<memory>");
EvalTask load_eval_task(const std::string& path, std::string name, MetaTask meta);
std::string serialize_eval_task(const EvalTask& task);

using Rankings = std::unordered_map<std::string, std::vector<std::string>>;

// Each query's pool sorted by descending cosine; ties keep pool order.
Rankings rank_pools(const EvalTask& task, const EmbeddingMatrix& queries,
                    const EmbeddingMatrix& candidates);

// Fraction of queries whose first ranked did is the gold one.
double precision_at_1(const EvalTask& task, const Rankings& rankings);

struct TaskScore {
  std::string name;
  MetaTask meta_task = MetaTask::Retrieval;
  double score = 0.0;
};

struct MetaSummary {
  double mean = 0.0;
  std::size_t count = 0;  // datasets behind the mean
};

struct ScoreTable {
  std::vector<TaskScore> tasks;
  std::array<std::optional<MetaSummary>, kMetaTasks> meta;
  double overall = 0.0;   // dataset-count weighted
  double avg_task = 0.0;  // unweighted mean of the meta-task means
};

ScoreTable aggregate(const std::vector<TaskScore>& scores);
// Same aggregates when only the per-meta-task means and dataset counts are
// known.
ScoreTable aggregate_from_means(const std::array<std::optional<MetaSummary>, kMetaTasks>& meta);
std::string score_table_json(const ScoreTable& table);

using Labels = std::unordered_map<std::string, int>;

// Share of (anchor, negative) pairs whose query labels agree; 0 when there
// are no pairs.
double false_negative_rate(const std::vector<TrainingCluster>& clusters, const Labels& labels);

enum class Sampling { in_batch, naive_hn, hn_beta, saha };
const char* to_string(Sampling s);
std::optional<Sampling> parse_sampling(std::string_view name);

struct SamplingInputs {
  const Dataset* train = nullptr;
  const EmbeddingMatrix* features_q = nullptr;  // raw features, every query id
  const EmbeddingMatrix* features_c = nullptr;
  const Labels* labels = nullptr;
  const EvalTask* eval = nullptr;  // held-out task scored with each adapter
};

struct CompareConfig {
  MinerConfig miner{7, 4};
  contrastive::TrainConfig train{LossConfig{}, 200, 0.05, 32, 0, 0};
  double beta = 0.02;
  std::uint64_t seed = 0;
  bool record_timing = true;
  std::vector<Sampling> strategies = {Sampling::in_batch, Sampling::naive_hn, Sampling::hn_beta,
                                      Sampling::saha};
};

struct StrategyReport {
  std::string name;
  std::size_t clusters = 0;
  std::size_t pairs = 0;
  double fn_rate = 0.0;
  double mean_negative_sim = 0.0;  // anchor query vs negative candidate
  double precision_at_1 = 0.0;
  double mining_seconds = 0.0;

  bool operator==(const StrategyReport&) const = default;
};

struct ComparisonReport {
  std::uint64_t seed = 0;
  std::size_t k = 0;
  std::size_t pool_multiplier = 0;
  double baseline_precision_at_1 = 0.0;  // raw features, no adapter
  std::vector<StrategyReport> strategies;

  const StrategyReport* find(std::string_view name) const;
  bool operator==(const ComparisonReport&) const = default;
};

// Clusters from one sampling strategy over normalized training features.
std::vector<TrainingCluster> sample_clusters(Sampling strategy, const Dataset& train,
                                             const EmbeddingMatrix& query_emb,
                                             const EmbeddingMatrix& cand_emb,
                                             const CompareConfig& cfg);

ComparisonReport compare_sampling(const SamplingInputs& in, const CompareConfig& cfg);
std::string comparison_json(const ComparisonReport& report);
ComparisonReport parse_comparison_json(const std::string& text);

}  // namespace embkit::eval
