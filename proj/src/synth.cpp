#include "embkit/synth.hpp"

#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "embkit/dataset.hpp"
#include "embkit/emb_io.hpp"
#include "embkit/error.hpp"
#include "embkit/fileutil.hpp"
#include "embkit/random.hpp"

namespace embkit::synth {

namespace {

// Orthonormal columns (dim x rank, row-major) by Gram-Schmidt on Gaussians.
std::vector<double> random_basis(Rng& rng, std::size_t dim, std::size_t rank) {
  std::vector<double> b(dim * rank);
  for (std::size_t c = 0; c < rank; ++c) {
    for (;;) {
      std::vector<double> v(dim);
      for (auto& x : v) x = rng.normal();
      for (std::size_t p = 0; p < c; ++p) {
        double proj = 0.0;
        for (std::size_t i = 0; i < dim; ++i) proj += v[i] * b[i * rank + p];
        for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * b[i * rank + p];
      }
      double n = 0.0;
      for (double x : v) n += x * x;
      n = std::sqrt(n);
      if (n < 1e-9) continue;
      for (std::size_t i = 0; i < dim; ++i) b[i * rank + c] = v[i] / n;
      break;
    }
  }
  return b;
}

}  // namespace

void SynthConfig::check() const {
  if (dim < 2) throw Error(ErrorKind::config, "dim must be at least 2");
  if (classes == 0 || queries_per_class == 0) {
    throw Error(ErrorKind::config, "classes and queries_per_class must be positive");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw Error(ErrorKind::config, "noise must be >= 0");
  if (!(holdout >= 0.0 && holdout < 1.0)) throw Error(ErrorKind::config, "holdout must be in [0, 1)");
}

SynthData generate(const SynthConfig& cfg) {
  cfg.check();
  Rng rng(cfg.seed);
  const std::size_t d = cfg.dim;
  const std::size_t n = cfg.classes * cfg.queries_per_class;
  const std::size_t rank = std::max<std::size_t>(1, d / 4);

  std::vector<double> centers(cfg.classes * d);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      centers[c * d + j] = rng.normal();
      sq += centers[c * d + j] * centers[c * d + j];
    }
    const double norm = std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j) centers[c * d + j] /= norm;
  }
  const auto basis = random_basis(rng, d, rank);

  const double jitter = cfg.noise / 2;
  const double nuisance = 2.5 * cfg.noise;
  std::vector<double> latent(d), z(rank);
  auto view = [&](std::vector<float>& out) {
    for (auto& x : z) x = rng.normal();
    for (std::size_t j = 0; j < d; ++j) {
      double v = latent[j] + jitter * rng.normal();
      for (std::size_t r = 0; r < rank; ++r) v += nuisance * basis[j * rank + r] * z[r];
      out.push_back(static_cast<float>(v));
    }
  };

  SynthData data;
  std::vector<std::string> qids, dids;
  std::vector<float> qv, cv;
  qv.reserve(n * d);
  cv.reserve(n * d);
  const auto holdout = static_cast<std::size_t>(std::llround(cfg.holdout * static_cast<double>(n)));
  const std::size_t train_n = n - holdout;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % cfg.classes;
    for (std::size_t j = 0; j < d; ++j) latent[j] = centers[cls * d + j] + cfg.noise * rng.normal();
    view(qv);
    view(cv);
    const std::string qid = "q" + std::to_string(i);
    const std::string did = "d" + std::to_string(i);
    qids.push_back(qid);
    dids.push_back(did);
    data.labels[qid] = static_cast<int>(cls);
    data.labels[did] = static_cast<int>(cls);
    Dataset& split = i < train_n ? data.train : data.eval;
    split.queries.push_back({qid, "Find the matching item.", {ContentPart::text("query " + qid)}, did});
    split.candidates.push_back({did, {ContentPart::text("item " + did)}});
  }
  data.features_q = EmbeddingMatrix(std::move(qids), d, std::move(qv));
  data.features_c = EmbeddingMatrix(std::move(dids), d, std::move(cv));

  data.eval_task.name = "synthetic";
  data.eval_task.meta_task = eval::MetaTask::Retrieval;
  std::vector<std::string> pool;
  for (const auto& c : data.eval.candidates) pool.push_back(c.did);
  for (const auto& q : data.eval.queries) data.eval_task.queries.push_back({q.qid, pool, q.positive_did});
  return data;
}

std::string labels_json(const SynthData& data) {
  nlohmann::ordered_json o = nlohmann::ordered_json::object();
  for (const auto& id : data.features_q.ids()) o[id] = data.labels.at(id);
  for (const auto& id : data.features_c.ids()) o[id] = data.labels.at(id);
  return o.dump() + "\n";
}

eval::Labels parse_labels(const std::string& text, const std::string& source) {
  try {
    const auto o = nlohmann::json::parse(text);
    eval::Labels out;
    for (const auto& [k, v] : o.items()) out[k] = v.get<int>();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, source + ": " + e.what());
  }
}

eval::Labels load_labels(const std::string& path) { return parse_labels(read_file(path), path); }

void write(const SynthData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  auto put = [&](const char* name, const std::string& bytes) {
    write_file_atomic((base / name).string(), bytes);
  };
  put("train_queries.jsonl", serialize_queries(data.train.queries));
  put("train_candidates.jsonl", serialize_candidates(data.train.candidates));
  put("eval_queries.jsonl", serialize_queries(data.eval.queries));
  put("eval_candidates.jsonl", serialize_candidates(data.eval.candidates));
  write_emb1((base / "features_q.emb").string(), data.features_q);
  write_emb1((base / "features_c.emb").string(), data.features_c);
  put("labels.json", labels_json(data));
  put("eval_task.jsonl", eval::serialize_eval_task(data.eval_task));
}

}  // namespace embkit::synth
