#pragma once

#include <cstdint>
#include <string>

#include "embkit/evalkit.hpp"
#include "embkit/model.hpp"

namespace embkit::synth {

/// Gaussian-mixture retrieval benchmark with known classes.
///
/// Instance i belongs to class i mod `classes`. Its latent point is the
/// class center (a random unit vector) plus `noise` * N(0, I). The query and
/// its positive candidate are two independent views of that point: each adds
/// (noise / 2) * N(0, I) and a larger (2.5 * noise) nuisance drawn from a
/// fixed random subspace of rank dim / 4, which a trained adapter can learn
/// to suppress. The last `holdout` share of instances forms the evaluation
/// split.
struct SynthConfig {
  std::size_t classes = 20;
  std::size_t queries_per_class = 100;
  std::size_t dim = 64;
  double noise = 0.2;
  std::uint64_t seed = 0;
  double holdout = 0.2;

  void check() const;
};

struct SynthData {
  Dataset train;
  Dataset eval;
  EmbeddingMatrix features_q;  // raw, every instance, ids q<i>
  EmbeddingMatrix features_c;  // raw, every instance, ids d<i>
  eval::Labels labels;         // q<i> and d<i> -> class
  eval::EvalTask eval_task;    // each eval query ranked over all eval candidates
};

SynthData generate(const SynthConfig& cfg);

// Writes train_queries.jsonl, train_candidates.jsonl, eval_queries.jsonl,
// eval_candidates.jsonl, features_q.emb, features_c.emb, labels.json and
// eval_task.jsonl into `dir` (created if missing).
void write(const SynthData& data, const std::string& dir);

std::string labels_json(const SynthData& data);
eval::Labels parse_labels(const std::string& text, const std::string& source = "<memory>");
eval::Labels load_labels(const std::string& path);

}  // namespace embkit::synth
