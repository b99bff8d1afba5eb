// Command-line driver: synth -> ingest -> build-graphs -> train -> eval.
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "dgenn/config.hpp"
#include "dgenn/gradcheck.hpp"
#include "dgenn/model.hpp"
#include "dgenn/pipeline.hpp"
#include "dgenn/synthgen.hpp"

namespace {

using namespace dgenn;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string out = "out";
  std::string log_path;
  std::string schema_path;
  std::string ablate = "none";
  bool base_only = false;
};

RunConfig effective_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.threads) {
    if (*o.threads < 1) throw ConfigError("--threads: must be >= 1");
    c.threads = *o.threads;
  }
  c.sampling.seed = c.seed;
  return c;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("schema not found: " + path.string());
  try {
    return Schema::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("schema: invalid JSON: ") + e.what());
  }
}

struct Loaded {
  Dataset dataset;
  GraphSet graphs;
};

Loaded load_inputs(const ArtifactPaths& paths) {
  Loaded l;
  l.dataset = load_bundle(paths.bundle());
  l.graphs = load_graphs(paths.graphs(), l.dataset);
  return l;
}

int cmd_synth(const Options& o) {
  const RunConfig c = effective_config(o);
  const ArtifactPaths p{o.out};
  const SynthLog log = generate(c.synth);
  write_synth(log, p.root);
  std::cout << nlohmann::json{{"log", p.log().string()}, {"rows", log.rows}}.dump() << '\n';
  return 0;
}

int cmd_ingest(const Options& o) {
  const RunConfig c = effective_config(o);
  const ArtifactPaths p{o.out};
  std::filesystem::path log = p.log();
  if (c.log_path) log = *c.log_path;
  if (!o.log_path.empty()) log = o.log_path;
  Schema schema;
  if (!o.schema_path.empty()) schema = load_schema(o.schema_path);
  else if (c.schema) schema = *c.schema;
  else schema = load_schema(p.schema());
  const RawDataset raw = parse_interactions(log, schema);
  const Dataset ds = build_dataset(raw, c.sampling);
  save_bundle(ds, p.bundle());
  std::cout << nlohmann::json{{"users", ds.vocabulary.num_users()},
                              {"items", ds.vocabulary.num_items()},
                              {"features", ds.vocabulary.total()},
                              {"rows", raw.stats.rows},
                              {"rejected", raw.stats.rejected},
                              {"dropped_users", ds.stats.dropped_users},
                              {"train", ds.train.size()},
                              {"val", ds.val.size()},
                              {"test", ds.test.size()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_build_graphs(const Options& o) {
  const RunConfig c = effective_config(o);
  const ArtifactPaths p{o.out};
  const Dataset ds = load_bundle(p.bundle());
  const GraphSet gs = build_graphs(ds, c.similarity, c.threads);
  save_graphs(gs, p.graphs());
  std::cout << nlohmann::json{{"uu", gs.uu.edge_count()}, {"vv", gs.vv.edge_count()},
                              {"uv", gs.uv.edge_count()}, {"cf", gs.cf.edge_count()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  RunConfig c = effective_config(o);
  c.model.ablation = o.base_only ? Ablation::BaseOnly : ablation_from(o.ablate);
  const ArtifactPaths p{o.out};
  const Loaded in = load_inputs(p);
  std::filesystem::create_directories(p.root);
  std::ofstream log(p.metrics_log(), std::ios::binary);
  const auto result = train(c.model, in.dataset, in.graphs, c.seed, [&](const EpochLog& e) {
    log << e.to_json(c.model.log_wall_time).dump() << '\n';
    log.flush();
  });
  save_checkpoint(result.state, p.checkpoint());
  std::cout << nlohmann::json{{"checkpoint", p.checkpoint().string()},
                              {"ablation", to_string(c.model.ablation)},
                              {"best_epoch", result.best_epoch},
                              {"epochs", result.log.size()}}
                   .dump()
            << '\n';
  return 0;
}

metrics::EvalReport test_report(const ModelState& state, const Loaded& in, std::vector<double>* scores_out) {
  const auto scores = predict(state, in.dataset, in.graphs, in.dataset.test);
  std::vector<std::uint8_t> labels;
  for (const auto& x : in.dataset.test) labels.push_back(x.label);
  if (scores_out) *scores_out = scores;
  return metrics::evaluate(scores, labels);
}

int cmd_eval(const Options& o) {
  effective_config(o);
  const ArtifactPaths p{o.out};
  if (!std::filesystem::exists(p.checkpoint())) throw MissingArtifact("checkpoint not found: " + p.checkpoint().string());
  const ModelState state = load_checkpoint(p.checkpoint());
  const Loaded in = load_inputs(p);
  auto j = test_report(state, in, nullptr).to_json();
  j["ablation"] = to_string(state.config.ablation);
  write_text(p.eval_report(), j.dump(2) + "\n");
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_slice_report(const Options& o) {
  const RunConfig c = effective_config(o);
  const ArtifactPaths p{o.out};
  if (!std::filesystem::exists(p.checkpoint())) throw MissingArtifact("checkpoint not found: " + p.checkpoint().string());
  const ModelState state = load_checkpoint(p.checkpoint());
  const Loaded in = load_inputs(p);
  std::vector<double> scores;
  test_report(state, in, &scores);
  const auto& test = in.dataset.test;
  const auto freq = metrics::slice_by_feature_frequency(test, scores, in.dataset.vocabulary, c.eval.frequency_buckets);
  const auto len = metrics::slice_by_behavior_length(test, scores, c.eval.length_buckets);
  const std::string model(to_string(state.config.ablation));
  write_text(p.slices_tsv(), "model\tkind\tbucket\tcount\tn_pos\tn_neg\tauc\tlogloss\n" +
                                 metrics::slices_tsv(freq, model) + metrics::slices_tsv(len, model));
  write_text(p.slices_json(),
             nlohmann::json{{"feature_frequency", freq.to_json()}, {"behavior_length", len.to_json()}}.dump(2) + "\n");
  std::cout << nlohmann::json{{"slices", p.slices_tsv().string()}}.dump() << '\n';
  return 0;
}

int cmd_grad_check(const Options& o) {
  effective_config(o);
  nlohmann::json per_class = nlohmann::json::object();
  double worst = 0.0;
  std::string worst_at;
  std::size_t checked = 0, kinks = 0;
  for (auto kind : {AggregatorKind::GCN, AggregatorKind::NGCF, AggregatorKind::LightGCN}) {
    const auto r = gradient_check(builtin_fixture(kind));
    for (const auto& [cls, err] : r.per_class) per_class[cls] = err;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_at = std::string(to_string(kind)) + ":" + r.worst;
    }
    checked += r.checked;
    kinks += r.kink_crossings;
  }
  const bool ok = worst < 1e-4;
  std::cout << nlohmann::json{{"max_rel_error", worst},
                              {"worst", worst_at},
                              {"checked", checked},
                              {"kink_crossings", kinks},
                              {"per_class", per_class},
                              {"pass", ok}}
                   .dump()
            << '\n';
  return ok ? 0 : 1;
}

int cmd_dump_embeddings(const Options& o) {
  effective_config(o);
  const ArtifactPaths p{o.out};
  if (!std::filesystem::exists(p.checkpoint())) throw MissingArtifact("checkpoint not found: " + p.checkpoint().string());
  const ModelState state = load_checkpoint(p.checkpoint());
  const Loaded in = load_inputs(p);
  const auto table = enhanced_embeddings(state, in.dataset, in.graphs);
  write_embeddings(table, p.embeddings());
  std::cout << nlohmann::json{{"embeddings", p.embeddings().string()}, {"rows", table.rows()}, {"dim", table.cols()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_graphs_stats(const Options& o) {
  effective_config(o);
  const ArtifactPaths p{o.out};
  const Loaded in = load_inputs(p);
  const auto j = graph_stats(in.graphs);
  write_text(p.graph_stats(), j.dump(2) + "\n");
  std::cout << j.dump() << '\n';
  return 0;
}

void report(const std::string& kind, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-graph enhanced CTR pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "Run configuration (JSON)");
  app.add_option("--seed", o.seed, "Seed override");
  app.add_option("--threads", o.threads, "Worker threads");
  app.add_option("--out", o.out, "Artifact directory");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic interaction log");
  auto* ingest = app.add_subcommand("ingest", "Parse, split and sample negatives");
  ingest->add_option("--log", o.log_path, "Interaction log (default: <out>/log.csv)");
  ingest->add_option("--schema", o.schema_path, "Schema JSON (default: config or <out>/schema.json)");
  auto* graphs = app.add_subcommand("build-graphs", "Build attribute and collaborative graphs");
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--ablate", o.ablate, "none, no-attr, attr-only, uu-vv-only, uv-only, base-only");
  train_cmd->add_flag("--base-only", o.base_only, "Disable both graph modules");
  auto* eval = app.add_subcommand("eval", "Evaluate the checkpoint on the test split");
  auto* slices = app.add_subcommand("slice-report", "Per-bucket metrics by feature frequency and behavior length");
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient check on the builtin fixture");
  auto* dump = app.add_subcommand("dump-embeddings", "Write the enhanced embedding table");
  auto* stats = app.add_subcommand("graphs-stats", "Degree statistics of the built graphs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report("usage", e.what(), 2);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*ingest) return cmd_ingest(o);
    if (*graphs) return cmd_build_graphs(o);
    if (*train_cmd) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*slices) return cmd_slice_report(o);
    if (*gc) return cmd_grad_check(o);
    if (*dump) return cmd_dump_embeddings(o);
    if (*stats) return cmd_graphs_stats(o);
  } catch (const ConfigError& e) {
    report("config", e.what(), e.exit_code());
    return e.exit_code();
  } catch (const MissingArtifact& e) {
    report("missing_artifact", e.what(), e.exit_code());
    return e.exit_code();
  } catch (const Error& e) {
    report("error", e.what(), e.exit_code());
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    report("config", e.what(), 2);
    return 2;
  } catch (const std::exception& e) {
    report("error", e.what(), 1);
    return 1;
  }
  return 1;
}
