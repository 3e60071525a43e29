#include "embkit/contrastive.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <numeric>

#include "embkit/error.hpp"
#include "embkit/fileutil.hpp"
#include "embkit/random.hpp"

namespace embkit::contrastive {

namespace {

constexpr char kAdapterMagic[4] = {'A', 'D', 'P', '1'};

// Unit rows plus the original norms.
void normalize_rows(std::span<const double> raw, std::size_t rows, std::size_t dim,
                    std::vector<double>& unit, std::vector<double>& norms, const char* side) {
  unit.resize(raw.size());
  norms.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) sq += raw[r * dim + j] * raw[r * dim + j];
    const double n = std::sqrt(sq);
    if (!(n > 1e-12)) {
      throw Error(ErrorKind::degenerate_row,
                  std::string(side) + " row " + std::to_string(r) + " has zero norm");
    }
    norms[r] = n;
    for (std::size_t j = 0; j < dim; ++j) unit[r * dim + j] = raw[r * dim + j] / n;
  }
}

std::vector<double> similarities(const std::vector<double>& u, const std::vector<double>& v,
                                 std::size_t n, std::size_t dim) {
  std::vector<double> s(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < dim; ++t) acc += u[i * dim + t] * v[j * dim + t];
      s[i * n + j] = acc;
    }
  }
  return s;
}

// Softmax of row i of s/tau into p.
void softmax_row(std::span<const double> s, std::size_t n, std::size_t i, double tau, double* p) {
  double mx = s[i * n] / tau;
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, s[i * n + j] / tau);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    p[j] = std::exp(s[i * n + j] / tau - mx);
    z += p[j];
  }
  for (std::size_t j = 0; j < n; ++j) p[j] /= z;
}

// Back through x -> x / |x|: (g - u (u.g)) / |x|.
void through_normalization(const std::vector<double>& unit, const std::vector<double>& norms,
                           std::size_t rows, std::size_t dim, std::vector<double>& g) {
  for (std::size_t r = 0; r < rows; ++r) {
    double ug = 0.0;
    for (std::size_t j = 0; j < dim; ++j) ug += unit[r * dim + j] * g[r * dim + j];
    for (std::size_t j = 0; j < dim; ++j) {
      g[r * dim + j] = (g[r * dim + j] - unit[r * dim + j] * ug) / norms[r];
    }
  }
}

}  // namespace

void ClusterBatch::check() const {
  if (rows < 2) {
    throw Error(ErrorKind::degenerate_batch,
                "a contrastive batch needs at least 2 rows, got " + std::to_string(rows));
  }
  if (dim == 0 || queries.size() != rows * dim || candidates.size() != rows * dim) {
    throw Error(ErrorKind::validation, "batch matrices do not match rows x dim");
  }
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(queries) || !finite(candidates)) {
    throw Error(ErrorKind::validation, "batch contains non-finite values");
  }
}

LossResult infonce_from_similarities(std::span<const double> sims, std::size_t n, double tau) {
  if (n < 2) throw Error(ErrorKind::degenerate_batch, "a contrastive batch needs at least 2 rows");
  if (!(tau > 0.0)) throw Error(ErrorKind::config, "tau must be positive");
  LossResult r;
  r.per_anchor.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = sims[i * n] / tau;
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, sims[i * n + j] / tau);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(sims[i * n + j] / tau - mx);
    r.per_anchor[i] = mx + std::log(z) - sims[i * n + i] / tau;
  }
  r.mean = std::accumulate(r.per_anchor.begin(), r.per_anchor.end(), 0.0) /
           static_cast<double>(n);
  return r;
}

LossResult infonce_loss(const ClusterBatch& batch, const LossConfig& cfg) {
  batch.check();
  cfg.check();
  std::vector<double> u, v, nu, nv;
  normalize_rows(batch.queries, batch.rows, batch.dim, u, nu, "query");
  normalize_rows(batch.candidates, batch.rows, batch.dim, v, nv, "candidate");
  const auto s = similarities(u, v, batch.rows, batch.dim);
  return infonce_from_similarities(s, batch.rows, cfg.tau);
}

Gradient infonce_grad(const ClusterBatch& batch, const LossConfig& cfg) {
  batch.check();
  cfg.check();
  const std::size_t n = batch.rows;
  const std::size_t d = batch.dim;
  std::vector<double> u, v, nu, nv;
  normalize_rows(batch.queries, n, d, u, nu, "query");
  normalize_rows(batch.candidates, n, d, v, nv, "candidate");
  const auto s = similarities(u, v, n, d);

  Gradient g;
  g.loss = infonce_from_similarities(s, n, cfg.tau);

  // dL/ds_ij = (p_ij - [i == j]) / (tau n)
  std::vector<double> coeff(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    softmax_row(s, n, i, cfg.tau, &coeff[i * n]);
    coeff[i * n + i] -= 1.0;
  }
  const double scale = 1.0 / (cfg.tau * static_cast<double>(n));
  for (auto& c : coeff) c *= scale;

  g.d_queries.assign(n * d, 0.0);
  g.d_candidates.assign(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double c = coeff[i * n + j];
      for (std::size_t t = 0; t < d; ++t) {
        g.d_queries[i * d + t] += c * v[j * d + t];
        g.d_candidates[j * d + t] += c * u[i * d + t];
      }
    }
  }
  through_normalization(u, nu, n, d, g.d_queries);
  through_normalization(v, nv, n, d, g.d_candidates);
  return g;
}

ClusterBatch concat(std::span<const ClusterBatch> batches) {
  ClusterBatch out;
  for (const auto& b : batches) {
    if (out.dim == 0) out.dim = b.dim;
    if (b.dim != out.dim) throw Error(ErrorKind::dimension_mismatch, "batches differ in dimension");
    out.rows += b.rows;
    out.queries.insert(out.queries.end(), b.queries.begin(), b.queries.end());
    out.candidates.insert(out.candidates.end(), b.candidates.begin(), b.candidates.end());
  }
  return out;
}

LinearAdapter LinearAdapter::identity(std::size_t d) {
  LinearAdapter a{d, d, std::vector<double>(d * d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) a.w[i * d + i] = 1.0;
  return a;
}

std::vector<double> LinearAdapter::apply(std::span<const float> x) const {
  if (x.size() != d_in) {
    throw Error(ErrorKind::dimension_mismatch, "adapter expects dimension " +
                                                   std::to_string(d_in) + ", got " +
                                                   std::to_string(x.size()));
  }
  std::vector<double> z(d_out, 0.0);
  for (std::size_t i = 0; i < d_in; ++i) {
    const double xi = x[i];
    for (std::size_t j = 0; j < d_out; ++j) z[j] += xi * w[i * d_out + j];
  }
  return z;
}

EmbeddingMatrix apply_adapter(const LinearAdapter& adapter, const EmbeddingMatrix& features) {
  std::vector<float> out(features.rows() * adapter.d_out);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto z = adapter.apply(features.row(r));
    double sq = 0.0;
    for (double x : z) sq += x * x;
    const double n = std::sqrt(sq);
    if (!(n > 1e-12)) {
      throw Error(ErrorKind::degenerate_row, "row '" + features.id(r) + "' maps to zero");
    }
    for (std::size_t j = 0; j < adapter.d_out; ++j) {
      out[r * adapter.d_out + j] = static_cast<float>(z[j] / n);
    }
  }
  return EmbeddingMatrix(features.ids(), adapter.d_out, std::move(out), true);
}

std::string encode_adapter(const LinearAdapter& a) {
  std::string out(kAdapterMagic, 4);
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(a.d_in),
                                 static_cast<std::uint32_t>(a.d_out)};
  out.append(reinterpret_cast<const char*>(dims), sizeof dims);
  out.append(reinterpret_cast<const char*>(a.w.data()), a.w.size() * sizeof(double));
  return out;
}

LinearAdapter decode_adapter(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kAdapterMagic, 4) != 0) {
    throw Error(ErrorKind::parse, source + ": not an ADP1 adapter file");
  }
  std::uint32_t dims[2];
  std::memcpy(dims, bytes.data() + 4, sizeof dims);
  LinearAdapter a{dims[0], dims[1], {}};
  const std::size_t expected = 12 + static_cast<std::size_t>(dims[0]) * dims[1] * sizeof(double);
  if (bytes.size() != expected) {
    throw Error(ErrorKind::parse, source + ": adapter file size " + std::to_string(bytes.size()) +
                                      " does not match " + std::to_string(expected));
  }
  a.w.resize(static_cast<std::size_t>(dims[0]) * dims[1]);
  std::memcpy(a.w.data(), bytes.data() + 12, a.w.size() * sizeof(double));
  if (!std::all_of(a.w.begin(), a.w.end(), [](double x) { return std::isfinite(x); })) {
    throw Error(ErrorKind::validation, source + ": adapter has non-finite weights");
  }
  return a;
}

void write_adapter(const std::string& path, const LinearAdapter& adapter) {
  write_file_atomic(path, encode_adapter(adapter));
}

LinearAdapter read_adapter(const std::string& path) { return decode_adapter(read_file(path), path); }

ClusterBatch gather_cluster(const EmbeddingMatrix& fq, const EmbeddingMatrix& fc,
                            const TrainingCluster& cluster) {
  ClusterBatch b;
  b.dim = fq.dim();
  auto add = [&](const std::string& qid, const std::string& did) {
    const auto qr = fq.row(fq.row_of(qid));
    const auto cr = fc.row(fc.row_of(did));
    b.queries.insert(b.queries.end(), qr.begin(), qr.end());
    b.candidates.insert(b.candidates.end(), cr.begin(), cr.end());
    ++b.rows;
  };
  add(cluster.anchor_qid, cluster.anchor_did);
  for (const auto& n : cluster.negatives) add(n.qid, n.did);
  return b;
}

namespace {

// Z = X W for every row of a batch.
ClusterBatch project(const ClusterBatch& x, const LinearAdapter& a) {
  ClusterBatch z;
  z.rows = x.rows;
  z.dim = a.d_out;
  z.queries.assign(x.rows * a.d_out, 0.0);
  z.candidates.assign(x.rows * a.d_out, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t i = 0; i < a.d_in; ++i) {
      const double xq = x.queries[r * a.d_in + i];
      const double xc = x.candidates[r * a.d_in + i];
      const double* wrow = &a.w[i * a.d_out];
      for (std::size_t j = 0; j < a.d_out; ++j) {
        z.queries[r * a.d_out + j] += xq * wrow[j];
        z.candidates[r * a.d_out + j] += xc * wrow[j];
      }
    }
  }
  return z;
}

// weight * (Xq^T dZq + Xc^T dZc)
void accumulate_dw(const ClusterBatch& x, const Gradient& gz, double weight, std::size_t d_out,
                   std::vector<double>& dw) {
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t i = 0; i < x.dim; ++i) {
      const double xq = weight * x.queries[r * x.dim + i];
      const double xc = weight * x.candidates[r * x.dim + i];
      double* out = &dw[i * d_out];
      for (std::size_t j = 0; j < d_out; ++j) {
        out[j] += xq * gz.d_queries[r * d_out + j] + xc * gz.d_candidates[r * d_out + j];
      }
    }
  }
}

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace

TrainResult train_adapter(const EmbeddingMatrix& fq, const EmbeddingMatrix& fc,
                          const std::vector<TrainingCluster>& clusters, const TrainConfig& cfg) {
  cfg.loss.check();
  if (fq.dim() != fc.dim()) {
    throw Error(ErrorKind::dimension_mismatch, "query and candidate features differ in dimension");
  }
  if (clusters.empty()) throw Error(ErrorKind::validation, "no training clusters");
  if (cfg.batch_clusters == 0) throw Error(ErrorKind::config, "batch_clusters must be positive");
  if (!std::isfinite(cfg.learning_rate)) throw Error(ErrorKind::config, "learning rate must be finite");

  // Gather every cluster up front; unknown ids fail here, before training.
  std::vector<ClusterBatch> data;
  data.reserve(clusters.size());
  for (const auto& c : clusters) {
    data.push_back(gather_cluster(fq, fc, c));
    data.back().check();
  }

  const std::size_t d_in = fq.dim();
  const std::size_t d_out = cfg.d_out == 0 ? d_in : cfg.d_out;
  Rng rng(cfg.seed);
  TrainResult result;
  if (d_out == d_in) {
    result.adapter = LinearAdapter::identity(d_in);
  } else {
    result.adapter = LinearAdapter{d_in, d_out, std::vector<double>(d_in * d_out)};
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_in));
    for (auto& w : result.adapter.w) w = scale * rng.normal();
  }
  LinearAdapter& a = result.adapter;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces a shuffle on the first step
  const std::size_t per_step = std::min(cfg.batch_clusters, data.size());

  std::vector<std::size_t> picked(per_step);
  std::vector<std::vector<double>> partial;
  std::vector<double> cluster_loss;
  result.losses.reserve(cfg.steps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& p : picked) {
      if (cursor == order.size()) {
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      p = order[cursor++];
    }
    // Reduce in cluster order: the step result depends only on which
    // clusters were drawn.
    std::sort(picked.begin(), picked.end());

    std::vector<double> dw(d_in * d_out, 0.0);
    double step_loss = 0.0;
    if (cfg.loss.pooled) {
      std::vector<ClusterBatch> parts;
      for (auto p : picked) parts.push_back(data[p]);
      const auto x = concat(parts);
      try {
        const auto g = infonce_grad(project(x, a), cfg.loss);
        step_loss = g.loss.mean;
        accumulate_dw(x, g, 1.0, d_out, dw);
      } catch (const Error& e) {
        throw Error(ErrorKind::divergence,
                    "training failed at step " + std::to_string(step) + ": " + e.what());
      }
    } else {
      std::size_t total_rows = 0;
      for (auto p : picked) total_rows += data[p].rows;
      partial.assign(per_step, {});
      cluster_loss.assign(per_step, 0.0);
      std::vector<std::string> failures(per_step);
      const long n = static_cast<long>(per_step);
#pragma omp parallel for schedule(dynamic, 1)
      for (long b = 0; b < n; ++b) {
        try {
          const auto& x = data[picked[b]];
          const auto g = infonce_grad(project(x, a), cfg.loss);
          // Cluster means are re-weighted so the step loss averages anchor rows.
          const double weight = static_cast<double>(x.rows) / static_cast<double>(total_rows);
          partial[b].assign(d_in * d_out, 0.0);
          accumulate_dw(x, g, weight, d_out, partial[b]);
          cluster_loss[b] = weight * g.loss.mean;
        } catch (const Error& e) {
          failures[b] = e.what();
        }
      }
      for (const auto& f : failures) {
        if (!f.empty()) {
          throw Error(ErrorKind::divergence, "training failed at step " + std::to_string(step) + ": " + f);
        }
      }
      // Fixed-order reduction keeps training bit-reproducible.
      for (std::size_t b = 0; b < per_step; ++b) {
        step_loss += cluster_loss[b];
        for (std::size_t t = 0; t < dw.size(); ++t) dw[t] += partial[b][t];
      }
    }

    if (!std::isfinite(step_loss)) {
      throw Error(ErrorKind::divergence, "loss became non-finite at step " + std::to_string(step));
    }
    result.losses.push_back(step_loss);
    for (std::size_t t = 0; t < dw.size(); ++t) a.w[t] -= cfg.learning_rate * dw[t];
    if (!std::all_of(a.w.begin(), a.w.end(), [](double w) { return std::isfinite(w); })) {
      throw Error(ErrorKind::divergence, "weights became non-finite at step " + std::to_string(step));
    }
  }
  return result;
}

std::string loss_curve_csv(const std::vector<double>& losses) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) {
    out += std::to_string(i);
    out += ',';
    out += format_double(losses[i]);
    out += '\n';
  }
  return out;
}

}  // namespace embkit::contrastive
