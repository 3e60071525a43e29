#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "embkit/attnstats.hpp"
#include "embkit/backend.hpp"
#include "embkit/contrastive.hpp"
#include "embkit/dataset.hpp"
#include "embkit/emb_io.hpp"
#include "embkit/error.hpp"
#include "embkit/evalkit.hpp"
#include "embkit/fileutil.hpp"
#include "embkit/prompts.hpp"
#include "embkit/saha.hpp"
#include "embkit/synth.hpp"
#include "embkit/vecindex.hpp"

namespace embkit::cli {

namespace {

using nlohmann::json;

constexpr const char* kEnvPrefix = "EMBKIT_";

// ---------------------------------------------------------------- settings

struct NormalizeArgs {
  std::string in, out;
};

struct MineArgs {
  std::string queries, candidates, query_emb, cand_emb, out, stats_out;
  MinerConfig miner;
  bool normalize = false;
};

struct RenderArgs {
  std::string queries, candidates, out;
  std::string strategy = prompts::to_string(prompts::kDefaultStrategy);
  prompts::PromptOptions options;
};

struct EvalArgs {
  std::string query_emb, cand_emb, adapter, out;
  std::vector<std::string> tasks;  // NAME:META:PATH
  std::vector<std::string> metas;  // META=MEAN:COUNT
};

struct AttnArgs {
  std::string dump, typemap, out, summary_out;
  std::string outputs = "attending";
  std::string format = "csv";
  bool per_output = false;
};

struct TrainArgs {
  std::string clusters, features_q, features_c, out_adapter, loss_out;
  contrastive::TrainConfig train;
};

struct FetchArgs {
  std::string manifest, out;
  std::string side = "query";
  std::string strategy = prompts::to_string(prompts::kDefaultStrategy);
  prompts::PromptOptions options;
  backend::BackendEndpoint endpoint;
};

struct SynthArgs {
  synth::SynthConfig synth;
  std::string out_dir;
};

struct CompareArgs {
  std::string data_dir, out;
  eval::CompareConfig compare;
  std::vector<std::string> strategies;
  bool no_timing = false;
};

struct Settings {
  std::string config;
  std::size_t threads = 0;
  NormalizeArgs normalize;
  MineArgs mine;
  RenderArgs render;
  EvalArgs eval;
  AttnArgs attn;
  TrainArgs train;
  FetchArgs fetch;
  SynthArgs synth;
  CompareArgs compare;
};

// ---------------------------------------------------------------- helpers

std::string env_name(const std::string& option) {
  std::string name = kEnvPrefix;
  for (char c : option) {
    name += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return name;
}

std::string canonical_key(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

void emit(std::ostream& out, const std::string& path, const std::string& bytes) {
  if (path.empty() || path == "-") {
    out << bytes;
  } else {
    write_file_atomic(path, bytes);
  }
}

prompts::PromptStrategy strategy_or_throw(const std::string& name) {
  auto s = prompts::parse_strategy(name);
  if (!s) throw Error(ErrorKind::config, "unknown prompt strategy '" + name + "'");
  return *s;
}

EmbeddingMatrix as_normalized(EmbeddingMatrix m) {
  return m.normalized() ? m : l2_normalize(m);
}

void require_ok(const ValidationReport& report) {
  if (report.ok()) return;
  const auto& f = report.findings.front();
  throw Error(ErrorKind::validation, std::string(to_string(f.kind)) + " '" + f.id + "': " +
                                         f.detail + " (" +
                                         std::to_string(report.findings.size()) + " findings)");
}

// ---------------------------------------------------------------- commands

int cmd_normalize(const NormalizeArgs& a) {
  write_emb1(a.out, l2_normalize(read_emb1(a.in)));
  return 0;
}

int cmd_mine(const MineArgs& a, std::ostream& err) {
  a.miner.check();
  const Dataset ds = load_dataset(a.queries, a.candidates);
  EmbeddingMatrix q = read_emb1(a.query_emb);
  EmbeddingMatrix c = read_emb1(a.cand_emb);
  require_ok(validate(ds, &q, &c));
  if (a.normalize) {
    q = as_normalized(std::move(q));
    c = as_normalized(std::move(c));
  }
  const auto result = saha::mine(ds, q, c, a.miner);
  write_file_atomic(a.out, saha::serialize_clusters(result.clusters));
  const std::string stats = saha::stats_json(result.stats);
  if (a.stats_out.empty()) {
    err << stats << '\n';
  } else {
    write_file_atomic(a.stats_out, stats + "\n");
  }
  return 0;
}

int cmd_render(RenderArgs a, std::ostream& out) {
  a.options.strategy = strategy_or_throw(a.strategy);
  if (a.queries.empty() && a.candidates.empty()) {
    throw Error(ErrorKind::config, "render-prompts needs --queries and/or --candidates");
  }
  Dataset ds;
  if (!a.queries.empty()) ds.queries = load_queries(a.queries);
  if (!a.candidates.empty()) ds.candidates = load_candidates(a.candidates);
  emit(out, a.out, prompts::render_jsonl(ds, a.options));
  return 0;
}

eval::MetaTask meta_or_throw(const std::string& name) {
  auto m = eval::parse_meta_task(name);
  if (!m) throw Error(ErrorKind::config, "unknown meta-task '" + name + "'");
  return *m;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.tasks.empty() == a.metas.empty()) {
    throw Error(ErrorKind::config, "eval needs either --task entries or --meta entries");
  }
  if (!a.metas.empty()) {
    std::array<std::optional<eval::MetaSummary>, eval::kMetaTasks> meta;
    for (const auto& spec : a.metas) {
      const auto eq = spec.find('=');
      const auto colon = spec.find(':', eq == std::string::npos ? 0 : eq);
      if (eq == std::string::npos || colon == std::string::npos) {
        throw Error(ErrorKind::config, "--meta expects META=MEAN:COUNT, got '" + spec + "'");
      }
      const auto m = meta_or_throw(spec.substr(0, eq));
      try {
        meta[static_cast<std::size_t>(m)] =
            eval::MetaSummary{std::stod(spec.substr(eq + 1, colon - eq - 1)),
                              static_cast<std::size_t>(std::stoul(spec.substr(colon + 1)))};
      } catch (const std::logic_error&) {
        throw Error(ErrorKind::config, "--meta expects META=MEAN:COUNT, got '" + spec + "'");
      }
    }
    emit(out, a.out, eval::score_table_json(eval::aggregate_from_means(meta)) + "\n");
    return 0;
  }

  if (a.query_emb.empty() || a.cand_emb.empty()) {
    throw Error(ErrorKind::config, "eval with --task needs --query-emb and --cand-emb");
  }
  struct TaskRef {
    std::string name;
    eval::MetaTask meta;
    std::string path;
  };
  std::vector<TaskRef> refs;
  for (const auto& spec : a.tasks) {
    const auto c1 = spec.find(':');
    const auto c2 = c1 == std::string::npos ? c1 : spec.find(':', c1 + 1);
    if (c2 == std::string::npos) {
      throw Error(ErrorKind::config, "--task expects NAME:META:PATH, got '" + spec + "'");
    }
    refs.push_back({spec.substr(0, c1), meta_or_throw(spec.substr(c1 + 1, c2 - c1 - 1)),
                    spec.substr(c2 + 1)});
  }

  EmbeddingMatrix q = read_emb1(a.query_emb);
  EmbeddingMatrix c = read_emb1(a.cand_emb);
  if (a.adapter.empty()) {
    q = as_normalized(std::move(q));
    c = as_normalized(std::move(c));
  } else {
    const auto adapter = contrastive::read_adapter(a.adapter);
    q = contrastive::apply_adapter(adapter, q);
    c = contrastive::apply_adapter(adapter, c);
  }
  std::vector<eval::TaskScore> scores;
  for (const auto& r : refs) {
    const auto task = eval::load_eval_task(r.path, r.name, r.meta);
    scores.push_back({r.name, r.meta, eval::precision_at_1(task, eval::rank_pools(task, q, c))});
  }
  emit(out, a.out, eval::score_table_json(eval::aggregate(scores)) + "\n");
  return 0;
}

int cmd_attn(const AttnArgs& a, std::ostream& out, std::ostream& err) {
  attn::OutputMode mode;
  if (a.outputs == "attending") {
    mode = attn::OutputMode::attending;
  } else if (a.outputs == "assistant") {
    mode = attn::OutputMode::assistant_only;
  } else {
    throw Error(ErrorKind::config, "--outputs must be 'attending' or 'assistant'");
  }
  if (a.format != "csv" && a.format != "table") {
    throw Error(ErrorKind::config, "--format must be 'csv' or 'table'");
  }
  const auto dump = attn::read_atn1(a.dump);
  const auto map = attn::load_typemap(a.typemap, mode);
  const auto report = attn::efficiency_report(dump, map, attn::EfficiencyOptions{a.per_output});
  emit(out, a.out, a.format == "csv" ? attn::report_csv(report) : attn::report_table(report));
  const std::string summary = attn::report_summary_json(report);
  if (a.summary_out.empty()) {
    err << summary << '\n';
  } else {
    write_file_atomic(a.summary_out, summary + "\n");
  }
  return 0;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  a.train.loss.check();
  if (a.train.batch_clusters == 0) throw Error(ErrorKind::config, "batch-clusters must be positive");
  const auto clusters = saha::load_clusters(a.clusters);
  const auto fq = read_emb1(a.features_q);
  const auto fc = read_emb1(a.features_c);
  const auto result = contrastive::train_adapter(fq, fc, clusters, a.train);
  contrastive::write_adapter(a.out_adapter, result.adapter);
  emit(out, a.loss_out, contrastive::loss_curve_csv(result.losses));
  return 0;
}

int cmd_fetch(FetchArgs a) {
  a.options.strategy = strategy_or_throw(a.strategy);
  a.endpoint.check();
  backend::Side side;
  Dataset ds;
  if (a.side == "query") {
    side = backend::Side::query;
    ds.queries = load_queries(a.manifest);
  } else if (a.side == "candidate") {
    side = backend::Side::candidate;
    ds.candidates = load_candidates(a.manifest);
  } else {
    throw Error(ErrorKind::config, "--side must be 'query' or 'candidate'");
  }
  const auto items = backend::render_items(ds, side, a.options);
  write_emb1(a.out, backend::fetch_embeddings(items, a.endpoint));
  return 0;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  a.synth.check();
  const auto data = synth::generate(a.synth);
  synth::write(data, a.out_dir);
  nlohmann::ordered_json summary;
  summary["train_queries"] = data.train.queries.size();
  summary["eval_queries"] = data.eval.queries.size();
  summary["dim"] = a.synth.dim;
  out << summary.dump() << '\n';
  return 0;
}

int cmd_compare(CompareArgs a, std::ostream& out) {
  a.compare.miner.check();
  a.compare.train.loss.check();
  if (!a.strategies.empty()) {
    a.compare.strategies.clear();
    for (const auto& name : a.strategies) {
      auto s = eval::parse_sampling(name);
      if (!s) throw Error(ErrorKind::config, "unknown sampling strategy '" + name + "'");
      a.compare.strategies.push_back(*s);
    }
  }
  a.compare.record_timing = !a.no_timing;
  a.compare.train.seed = a.compare.seed;

  const std::string dir = a.data_dir + "/";
  const Dataset train = load_dataset(dir + "train_queries.jsonl", dir + "train_candidates.jsonl");
  const auto fq = read_emb1(dir + "features_q.emb");
  const auto fc = read_emb1(dir + "features_c.emb");
  const auto labels = synth::load_labels(dir + "labels.json");
  const auto task = eval::load_eval_task(dir + "eval_task.jsonl", "synthetic", eval::MetaTask::Retrieval);

  eval::SamplingInputs in{&train, &fq, &fc, &labels, &task};
  emit(out, a.out, eval::comparison_json(eval::compare_sampling(in, a.compare)) + "\n");
  return 0;
}

// ---------------------------------------------------------------- parser

void add_miner_options(CLI::App* sub, MinerConfig& m) {
  sub->add_option("--k", m.k, "negatives per cluster")->capture_default_str();
  sub->add_option("--pool-multiplier", m.pool_multiplier, "candidate pool = multiplier * k")
      ->capture_default_str();
}

void add_prompt_options(CLI::App* sub, std::string& strategy, prompts::PromptOptions& o) {
  sub->add_option("--strategy", strategy, "prompt strategy")->capture_default_str();
  sub->add_option("--system-text", o.system_text, "system instruction");
  sub->add_option("--representation-stem", o.representation_stem,
                  "query-side representation prompt stem")
      ->capture_default_str();
  sub->add_flag("--candidate-one-word,!--no-candidate-one-word", o.candidate_one_word,
                "append the one-word keyword on the candidate side");
}

void build(CLI::App& app, Settings& s) {
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", s.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--threads", s.threads, "worker threads (0: OpenMP default)");

  auto* norm = app.add_subcommand("normalize", "L2-normalize an embedding file");
  norm->add_option("--in", s.normalize.in)->required()->check(CLI::ExistingFile);
  norm->add_option("--out", s.normalize.out)->required();

  auto* mine = app.add_subcommand("mine", "mine hard-negative training clusters");
  mine->add_option("--queries", s.mine.queries)->required()->check(CLI::ExistingFile);
  mine->add_option("--candidates", s.mine.candidates)->required()->check(CLI::ExistingFile);
  mine->add_option("--query-emb", s.mine.query_emb)->required()->check(CLI::ExistingFile);
  mine->add_option("--cand-emb", s.mine.cand_emb)->required()->check(CLI::ExistingFile);
  mine->add_option("--out", s.mine.out, "cluster file")->required();
  mine->add_option("--stats-out", s.mine.stats_out, "stats JSON (default: stderr)");
  add_miner_options(mine, s.mine.miner);
  mine->add_flag("--strict-phase1,!--no-strict-phase1", s.mine.miner.strict_phase1,
                 "first pass emits only full clusters");
  mine->add_flag("--allow-short-clusters,!--no-allow-short-clusters",
                 s.mine.miner.allow_short_clusters, "second pass may emit short clusters");
  mine->add_flag("--normalize", s.mine.normalize, "normalize embeddings not flagged normalized");

  auto* render = app.add_subcommand("render-prompts", "render manifests as conversations");
  render->add_option("--queries", s.render.queries)->check(CLI::ExistingFile);
  render->add_option("--candidates", s.render.candidates)->check(CLI::ExistingFile);
  render->add_option("--out", s.render.out, "JSON-lines output (default: stdout)");
  add_prompt_options(render, s.render.strategy, s.render.options);

  auto* ev = app.add_subcommand("eval", "Precision@1 per task and aggregate scores");
  ev->add_option("--query-emb", s.eval.query_emb)->check(CLI::ExistingFile);
  ev->add_option("--cand-emb", s.eval.cand_emb)->check(CLI::ExistingFile);
  ev->add_option("--adapter", s.eval.adapter, "linear adapter applied to both sides")
      ->check(CLI::ExistingFile);
  ev->add_option("--task", s.eval.tasks, "NAME:META:PATH, repeatable");
  ev->add_option("--meta", s.eval.metas, "META=MEAN:COUNT, repeatable (aggregation only)");
  ev->add_option("--out", s.eval.out, "report JSON (default: stdout)");

  auto* at = app.add_subcommand("attn", "attention efficiency per layer and token type");
  at->add_option("--dump", s.attn.dump)->required()->check(CLI::ExistingFile);
  at->add_option("--typemap", s.attn.typemap)->required()->check(CLI::ExistingFile);
  at->add_option("--outputs", s.attn.outputs, "attending | assistant")->capture_default_str();
  at->add_flag("--per-output", s.attn.per_output, "also divide by the output-position count");
  at->add_option("--format", s.attn.format, "csv | table")->capture_default_str();
  at->add_option("--out", s.attn.out, "report (default: stdout)");
  at->add_option("--summary-out", s.attn.summary_out, "summary JSON (default: stderr)");

  auto* tr = app.add_subcommand("train-toy", "train a linear adapter on clusters");
  tr->add_option("--clusters", s.train.clusters)->required()->check(CLI::ExistingFile);
  tr->add_option("--features-q", s.train.features_q)->required()->check(CLI::ExistingFile);
  tr->add_option("--features-c", s.train.features_c)->required()->check(CLI::ExistingFile);
  tr->add_option("--out-adapter", s.train.out_adapter)->required();
  tr->add_option("--loss-out", s.train.loss_out, "loss curve CSV (default: stdout)");
  tr->add_option("--tau", s.train.train.loss.tau)->capture_default_str();
  tr->add_flag("--pooled", s.train.train.loss.pooled, "share denominators across the step");
  tr->add_option("--steps", s.train.train.steps)->capture_default_str();
  tr->add_option("--lr", s.train.train.learning_rate)->capture_default_str();
  tr->add_option("--batch-clusters", s.train.train.batch_clusters)->capture_default_str();
  tr->add_option("--d-out", s.train.train.d_out, "output dimension (0: same as input)");
  tr->add_option("--seed", s.train.train.seed)->capture_default_str();

  auto* fe = app.add_subcommand("fetch-embeddings", "embed a manifest through an HTTP backend");
  fe->add_option("--manifest", s.fetch.manifest)->required()->check(CLI::ExistingFile);
  fe->add_option("--side", s.fetch.side, "query | candidate")->capture_default_str();
  fe->add_option("--out", s.fetch.out, "EMB1 output")->required();
  fe->add_option("--url", s.fetch.endpoint.url)->capture_default_str();
  fe->add_option("--model", s.fetch.endpoint.model);
  fe->add_option("--timeout", s.fetch.endpoint.timeout_seconds)->capture_default_str();
  fe->add_option("--max-in-flight", s.fetch.endpoint.max_in_flight)->capture_default_str();
  fe->add_option("--attempts", s.fetch.endpoint.attempts)->capture_default_str();
  fe->add_option("--dim", s.fetch.endpoint.expected_dim, "expected dimension (0: any)");
  add_prompt_options(fe, s.fetch.strategy, s.fetch.options);

  auto* gs = app.add_subcommand("gen-synth", "write a synthetic clustered dataset");
  gs->add_option("--classes", s.synth.synth.classes)->capture_default_str();
  gs->add_option("--queries-per-class", s.synth.synth.queries_per_class)->capture_default_str();
  gs->add_option("--dim", s.synth.synth.dim)->capture_default_str();
  gs->add_option("--noise", s.synth.synth.noise)->capture_default_str();
  gs->add_option("--holdout", s.synth.synth.holdout)->capture_default_str();
  gs->add_option("--seed", s.synth.synth.seed)->capture_default_str();
  gs->add_option("--out-dir", s.synth.out_dir)->required();

  auto* cs = app.add_subcommand("compare-sampling", "compare cluster samplers on gen-synth data");
  cs->add_option("--data-dir", s.compare.data_dir)->required()->check(CLI::ExistingDirectory);
  cs->add_option("--out", s.compare.out, "report JSON (default: stdout)");
  add_miner_options(cs, s.compare.compare.miner);
  cs->add_option("--steps", s.compare.compare.train.steps)->capture_default_str();
  cs->add_option("--lr", s.compare.compare.train.learning_rate)->capture_default_str();
  cs->add_option("--batch-clusters", s.compare.compare.train.batch_clusters)
      ->capture_default_str();
  cs->add_option("--tau", s.compare.compare.train.loss.tau)->capture_default_str();
  cs->add_option("--beta", s.compare.compare.beta)->capture_default_str();
  cs->add_option("--seed", s.compare.compare.seed)->capture_default_str();
  cs->add_option("--strategies", s.compare.strategies, "in_batch,naive_hn,hn_beta,saha")
      ->delimiter(',');
  cs->add_flag("--no-timing", s.compare.no_timing, "report zero mining times");
}

// ------------------------------------------------ env and config folding

bool is_flag(const CLI::Option* opt) { return opt->get_expected_max() == 0; }

std::string primary_name(const CLI::Option* opt) {
  const auto& names = opt->get_lnames();
  return names.empty() ? std::string() : names.front();
}

// Values given on the command line for `sub`'s options, by option name.
std::set<std::string> given_on_command_line(const std::vector<std::string>& args,
                                            const CLI::Option* opt) {
  std::set<std::string> hits;
  for (const auto& name : opt->get_lnames()) {
    for (const auto& a : args) {
      if (a == "--" + name || a.rfind("--" + name + "=", 0) == 0) hits.insert(name);
    }
  }
  return hits;
}

std::vector<std::string> json_values(const json& v, const std::string& key) {
  std::vector<std::string> out;
  auto one = [&](const json& x) {
    if (x.is_string()) {
      out.push_back(x.get<std::string>());
    } else if (x.is_boolean()) {
      out.push_back(x.get<bool>() ? "true" : "false");
    } else if (x.is_number()) {
      out.push_back(x.dump());
    } else {
      throw Error(ErrorKind::config, "config key '" + key + "' has an unsupported value type");
    }
  };
  if (v.is_array()) {
    for (const auto& x : v) one(x);
  } else {
    one(v);
  }
  return out;
}

struct ConfigFile {
  std::map<std::string, json> global;
  std::map<std::string, std::map<std::string, json>> sections;
};

ConfigFile load_config(const std::string& path, const CLI::App& app) {
  json root;
  try {
    root = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, "config file '" + path + "': " + e.what());
  }
  if (!root.is_object()) throw Error(ErrorKind::config, "config file must hold a JSON object");

  std::set<std::string> known;
  std::map<std::string, std::set<std::string>> known_in;
  for (const auto* opt : app.get_options()) known.insert(primary_name(opt));
  for (const auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    for (const auto* opt : sub->get_options()) {
      known.insert(primary_name(opt));
      known_in[sub->get_name()].insert(primary_name(opt));
    }
  }

  ConfigFile cfg;
  for (const auto& [raw, value] : root.items()) {
    const std::string key = canonical_key(raw);
    if (known_in.count(key) && value.is_object()) {
      for (const auto& [inner_raw, inner] : value.items()) {
        const std::string inner_key = canonical_key(inner_raw);
        if (!known_in[key].count(inner_key)) {
          throw Error(ErrorKind::config, "unknown config key '" + key + "." + inner_raw + "'");
        }
        cfg.sections[key][inner_key] = inner;
      }
    } else if (known.count(key)) {
      cfg.global[key] = value;
    } else {
      throw Error(ErrorKind::config, "unknown config key '" + raw + "'");
    }
  }
  return cfg;
}

std::optional<std::string> config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  if (const char* env = std::getenv(env_name("config").c_str())) return std::string(env);
  return std::nullopt;
}

// Appends `--name value` tokens for every option of the selected command
// (and the global ones) that the command line left unset, taking the value
// from the environment first and the config file second.
void fold_defaults(CLI::App& app, std::vector<std::string>& args) {
  CLI::App* selected = nullptr;
  for (const auto& a : args) {
    if (a.empty() || a[0] == '-') continue;
    auto subs = app.get_subcommands([&](const CLI::App* s) { return s->get_name() == a; });
    if (!subs.empty()) {
      selected = subs.front();
      break;
    }
  }
  if (selected == nullptr) return;

  ConfigFile cfg;
  const auto path = config_path(args);
  if (path) {
    cfg = load_config(*path, app);
    if (std::find(args.begin(), args.end(), "--config") == args.end() &&
        std::none_of(args.begin(), args.end(),
                     [](const std::string& a) { return a.rfind("--config=", 0) == 0; })) {
      args.push_back("--config=" + *path);
    }
  }

  std::vector<const CLI::Option*> options;
  for (const auto* opt : app.get_options()) options.push_back(opt);
  for (const auto* opt : selected->get_options()) options.push_back(opt);

  std::vector<std::string> extra;
  for (const auto* opt : options) {
    const std::string name = primary_name(opt);
    if (name.empty() || name == "help" || name == "config") continue;
    if (!given_on_command_line(args, opt).empty()) continue;

    std::vector<std::string> values;
    if (const char* env = std::getenv(env_name(name).c_str())) {
      values.emplace_back(env);
    } else if (auto sec = cfg.sections.find(selected->get_name());
               sec != cfg.sections.end() && sec->second.count(name)) {
      values = json_values(sec->second.at(name), name);
    } else if (cfg.global.count(name)) {
      values = json_values(cfg.global.at(name), name);
    } else {
      continue;
    }
    for (const auto& v : values) {
      if (is_flag(opt)) {
        extra.push_back("--" + name + "=" + v);
      } else {
        extra.push_back("--" + name);
        extra.push_back(v);
      }
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"]["kind"] = kind;
  j["error"]["message"] = message;
  err << j.dump() << '\n';
}

int exit_code(ErrorKind kind) { return kind == ErrorKind::config ? 2 : 1; }

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Settings s;
  CLI::App app{"embedding data toolkit", "embkit"};
  build(app, s);

  std::vector<std::string> args(argv + (argc > 0 ? 1 : 0), argv + argc);
  try {
    fold_defaults(app, args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "config", e.what());
    return 2;
  } catch (const Error& e) {
    report_error(err, to_string(e.kind()), e.what());
    return exit_code(e.kind());
  }

  if (s.threads > 0) omp_set_num_threads(static_cast<int>(s.threads));

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "normalize") return cmd_normalize(s.normalize);
    if (command == "mine") return cmd_mine(s.mine, err);
    if (command == "render-prompts") return cmd_render(s.render, out);
    if (command == "eval") return cmd_eval(s.eval, out);
    if (command == "attn") return cmd_attn(s.attn, out, err);
    if (command == "train-toy") return cmd_train(s.train, out);
    if (command == "fetch-embeddings") return cmd_fetch(s.fetch);
    if (command == "gen-synth") return cmd_synth(s.synth, out);
    if (command == "compare-sampling") return cmd_compare(s.compare, out);
  } catch (const Error& e) {
    report_error(err, to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return 1;
  }
  report_error(err, "config", "unknown command '" + command + "'");
  return 2;
}

}  // namespace embkit::cli
