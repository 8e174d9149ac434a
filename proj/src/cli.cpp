#include "mqa/cli.hpp"

#include "binary_io.hpp"
#include "mqa/coordinator.hpp"
#include "mqa/http_api.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#ifndef MQA_DEFAULT_DATA_DIR
#define MQA_DEFAULT_DATA_DIR "data"
#endif

namespace mqa::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct OutputFlags {
  bool json = false;
  bool table = false;
};

bool use_table(const OutputFlags& f, bool tty) {
  if (f.json) return false;
  if (f.table) return true;
  return tty;
}

struct ConfigSource {
  std::string config;
  std::string kb;
};

void add_config_source(CLI::App* cmd, ConfigSource& src) {
  auto* config = cmd->add_option("--config", src.config, "System config JSON")->check(CLI::ExistingFile);
  cmd->add_option("--kb", src.kb, "Bundled knowledge base name (looks up <name>/config.json)")
      ->excludes(config);
}

SystemConfig load_source(const ConfigSource& src) {
  if (!src.config.empty()) return load_config(src.config);
  if (!src.kb.empty()) {
    auto path = find_kb_config(src.kb);
    if (!path) throw Error(ErrorCode::NotFound, "no config found for knowledge base '" + src.kb + "'");
    return load_config(*path);
  }
  throw Error(ErrorCode::InvalidArgument, "one of --config or --kb is required");
}

struct QueryFlags {
  ConfigSource source;
  std::string text;
  std::string image;
  std::string selected_id;
  std::optional<std::size_t> k;
  std::optional<std::size_t> beam;
  std::string framework;
  std::vector<double> weights;
  std::string ground_truth;
  OutputFlags output;
};

void add_query_flags(CLI::App* cmd, QueryFlags& f) {
  add_config_source(cmd, f.source);
  cmd->add_option("--text", f.text, "Query text");
  cmd->add_option("--image", f.image, "Image file (PNG or PPM)")->check(CLI::ExistingFile);
  cmd->add_option("--selected-id", f.selected_id, "Reuse this object's stored image vector");
  cmd->add_option("-k,--k", f.k, "Results to return")->check(CLI::PositiveNumber);
  cmd->add_option("-L,--L", f.beam, "Search beam width")->check(CLI::PositiveNumber);
  cmd->add_option("--framework", f.framework, "MUST, MR or JE")
      ->check(CLI::IsMember({"MUST", "MR", "JE"}));
  cmd->add_option("--weights", f.weights, "Per-query modality weights, schema order")
      ->delimiter(',');
  cmd->add_flag("--json", f.output.json, "Machine-readable JSON output");
  cmd->add_flag("--table", f.output.table, "Aligned table output");
}

QueryRequest to_request(const QueryFlags& f) {
  QueryRequest req;
  if (!f.text.empty()) req.text = f.text;
  if (!f.image.empty()) req.image = detail::read_file(f.image);
  if (!f.selected_id.empty()) req.selected_id = f.selected_id;
  req.k = f.k;
  req.beam = f.beam;
  if (!f.framework.empty()) req.framework = parse_framework(f.framework);
  if (!f.weights.empty()) req.weights = f.weights;
  return req;
}

// Configures a coordinator and fails with the stage error if any stage failed.
void configure_or_throw(Coordinator& co, const SystemConfig& config) {
  auto m = co.configure(config);
  if (m.failed()) throw Error(ErrorCode::IoError, "configuration failed: " + m.error.value_or("?"));
}

std::string fmt_distance(float d) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << d;
  return os.str();
}

void print_stats_line(std::ostream& out, const SearchStats& s) {
  out << "visited=" << s.visited << " full_evals=" << s.full_evals << " abandoned=" << s.abandoned
      << " latency_ms=" << std::fixed << std::setprecision(3) << s.latency_ms << "\n";
  out.unsetf(std::ios::floatfield);
}

void print_query_table(std::ostream& out, const QueryResponse& r) {
  out << r.answer << "\n";
  if (r.degraded) out << "warning: " << r.warning << "\n";
  if (r.llm_only) return;
  std::size_t width = 2;
  for (const auto& item : r.results) width = std::max(width, item.id.size());
  out << "\n" << std::left << std::setw(6) << "rank" << std::setw(static_cast<int>(width) + 2)
      << "id" << "distance\n";
  for (std::size_t i = 0; i < r.results.size(); ++i)
    out << std::left << std::setw(6) << i + 1 << std::setw(static_cast<int>(width) + 2)
        << r.results[i].id << fmt_distance(r.results[i].distance) << "\n";
  out << "\n" << to_string(r.framework) << ": ";
  print_stats_line(out, r.stats);
}

void print_compare_table(std::ostream& out, const CompareResponse& r) {
  std::size_t rows = 0;
  std::size_t width = 4;
  for (const auto& run : r.runs) {
    rows = std::max(rows, run.results.size());
    for (const auto& item : run.results) width = std::max(width, item.id.size());
  }
  const int w = static_cast<int>(width) + 2;
  out << std::left << std::setw(6) << "rank";
  for (const auto& run : r.runs) out << std::setw(w) << to_string(run.framework);
  out << "\n";
  for (std::size_t i = 0; i < rows; ++i) {
    out << std::left << std::setw(6) << i + 1;
    for (const auto& run : r.runs)
      out << std::setw(w) << (i < run.results.size() ? run.results[i].id : "");
    out << "\n";
  }
  out << "\n";
  for (const auto& run : r.runs) {
    out << std::left << std::setw(6) << to_string(run.framework);
    if (!run.error.empty()) {
      out << "error: " << run.error << "\n";
      continue;
    }
    if (run.recall) out << "recall=" << std::setprecision(4) << *run.recall << " ";
    print_stats_line(out, run.stats);
  }
}

void write_recall_csv(const fs::path& path, const CompareResponse& r, std::size_t k,
                      std::size_t beam) {
  std::ostringstream csv;
  csv << "framework,k,L,recall,latency_ms,visited,full_evals,abandoned\n";
  for (const auto& run : r.runs) {
    if (!run.error.empty()) continue;
    csv << to_string(run.framework) << "," << k << "," << beam << ","
        << run.recall.value_or(0.0) << "," << run.stats.latency_ms << "," << run.stats.visited
        << "," << run.stats.full_evals << "," << run.stats.abandoned << "\n";
  }
  detail::write_file(path, csv.str());
}

int cmd_query(const QueryFlags& f, std::ostream& out, bool tty) {
  Coordinator co;
  configure_or_throw(co, load_source(f.source));
  auto req = to_request(f);
  req.session_id = co.open_session();
  auto r = co.submit_query(req);
  if (use_table(f.output, tty))
    print_query_table(out, r);
  else
    out << to_json(r).dump(2) << "\n";
  return 0;
}

int cmd_compare(const QueryFlags& f, std::ostream& out, bool tty) {
  auto config = load_source(f.source);
  Coordinator co;
  configure_or_throw(co, config);
  auto req = to_request(f);
  const bool recall = !f.ground_truth.empty();
  auto r = co.compare(req, recall);
  if (recall) {
    const auto k = req.k.value_or(config.retrieval.k);
    write_recall_csv(f.ground_truth, r, k, std::max(req.beam.value_or(config.retrieval.beam), k));
  }
  if (use_table(f.output, tty))
    print_compare_table(out, r);
  else
    out << to_json(r).dump(2) << "\n";
  return 0;
}

struct IngestFlags {
  ConfigSource source;
  std::string manifest;
  std::string schema;
  std::string out;
};

int cmd_ingest(const IngestFlags& f, std::ostream& out) {
  SystemConfig config;
  if (!f.source.config.empty() || !f.source.kb.empty()) {
    config = load_source(f.source);
  } else {
    if (f.manifest.empty() || f.schema.empty())
      throw Error(ErrorCode::InvalidArgument, "give --config/--kb, or --manifest with --schema");
    config.knowledge_base.manifest = f.manifest;
    config.knowledge_base.modalities = parse_schema(f.schema);
    config.knowledge_base.name = fs::path(f.manifest).parent_path().filename().string();
    if (config.knowledge_base.name.empty()) config.knowledge_base.name = "kb";
    validate_config(config);
  }
  const auto& schema = config.knowledge_base.modalities;
  auto kb = ingest(config.knowledge_base.manifest, schema, config.knowledge_base.name);
  EncoderRegistry registry(schema, effective_encoders(config));
  auto vectors = encode_all(kb, registry);
  auto bytes = save_vectors(kb, vectors, f.out);

  json report{{"schema_version", kJsonSchemaVersion},
              {"knowledge_base", kb.name()},
              {"objects", kb.size()},
              {"vectors", f.out},
              {"bytes", bytes}};
  const auto coverage = kb.coverage();
  for (std::size_t m = 0; m < schema.size(); ++m)
    report["modalities"].push_back(
        {{"name", schema[m].name}, {"dim", schema[m].dim}, {"coverage", coverage[m]}});
  out << report.dump(2) << "\n";
  return 0;
}

struct LearnFlags {
  ConfigSource source;
  std::string triplets;
  std::string schema;
  std::string out;
  LearningConfig learning;
};

int cmd_learn(LearnFlags f, std::ostream& out, const CLI::App& cmd) {
  ModalitySchema schema;
  fs::path triplets = f.triplets;
  if (!f.source.config.empty() || !f.source.kb.empty()) {
    auto config = load_source(f.source);
    schema = config.knowledge_base.modalities;
    if (triplets.empty()) triplets = config.weights.triplets;
    if (cmd.count("--margin") == 0) f.learning.margin = config.weights.learning.margin;
    if (cmd.count("--lr") == 0) f.learning.learning_rate = config.weights.learning.learning_rate;
    if (cmd.count("--epochs") == 0) f.learning.epochs = config.weights.learning.epochs;
  } else {
    if (f.schema.empty()) throw Error(ErrorCode::InvalidArgument, "--schema or --config required");
    schema = parse_schema(f.schema);
  }
  if (triplets.empty()) throw Error(ErrorCode::InvalidArgument, "--triplets required");

  SystemConfig check;
  check.knowledge_base.modalities = schema;
  check.knowledge_base.ingest_enabled = false;
  check.weights.mode = WeightsMode::Learned;
  check.weights.triplets = triplets;
  check.weights.learning = f.learning;
  validate_config(check);

  auto set = load_triplets(triplets, schema);
  auto result = learn_weights(set, f.learning);
  save_weights(f.out, schema, result.weights);

  json report{{"schema_version", kJsonSchemaVersion},
              {"triplets", set.size()},
              {"epochs", f.learning.epochs},
              {"initial_loss", result.loss_history.front()},
              {"final_loss", result.loss_history.back()},
              {"weights", json::object()},
              {"out", f.out}};
  for (std::size_t m = 0; m < schema.size(); ++m) report["weights"][schema[m].name] = result.weights[m];
  out << report.dump(2) << "\n";
  return 0;
}

struct BuildFlags {
  std::string vectors;
  std::string weights;
  std::string out;
  BuildParams params;
};

int cmd_build(const BuildFlags& f, std::ostream& out) {
  try {
    f.params.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, "index." + e.field() + ": " + e.what(), "index." + e.field());
  }
  auto loaded = load_vectors(f.vectors);
  WeightVector w = WeightVector::uniform(loaded.dims.size());
  if (!f.weights.empty()) {
    json doc;
    try {
      doc = json::parse(detail::read_file(f.weights));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::FormatError, f.weights + ": " + e.what());
    }
    auto names = doc.value("modalities", std::vector<std::string>{});
    if (names.size() != loaded.dims.size())
      throw Error(ErrorCode::FormatError, f.weights + ": modality count does not match the vectors");
    ModalitySchema schema;
    for (std::size_t m = 0; m < names.size(); ++m) schema.push_back({names[m], loaded.dims[m]});
    w = load_weights(f.weights, schema);
  }
  auto fused = fuse_all(loaded.vectors, w);
  auto graph = build_index(fused, f.params);
  auto bytes = save_graph(f.out, graph);
  auto report = validate_graph(graph);

  std::size_t edges = 0;
  for (const auto& nb : graph.adjacency) edges += nb.size();
  json doc{{"schema_version", kJsonSchemaVersion},
           {"vertices", graph.size()},
           {"edges", edges},
           {"entry", graph.entry},
           {"R", graph.degree_bound},
           {"repair_edges", graph.repair_edges},
           {"valid", report.ok()},
           {"graph", f.out},
           {"bytes", bytes}};
  out << doc.dump(2) << "\n";
  return 0;
}

struct ValidateFlags {
  std::string graph;
};

int cmd_validate(const ValidateFlags& f, std::ostream& out, std::ostream& err) {
  auto graph = load_graph(f.graph);
  auto report = validate_graph(graph);
  if (!report.ok()) {
    for (const auto& v : report.violations) err << v << "\n";
    return 1;
  }
  out << "OK\n";
  return 0;
}

struct ServeFlags {
  ConfigSource source;
  std::string listen;
  std::string static_dir;
};

ApiServer* g_server = nullptr;

extern "C" void handle_stop_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const ServeFlags& f, std::ostream& out) {
  auto addr = f.listen.empty() ? listen_address_from_env() : parse_listen_address(f.listen);
  Coordinator co;
  if (!f.source.config.empty() || !f.source.kb.empty()) configure_or_throw(co, load_source(f.source));

  ApiOptions options;
  options.config_base = fs::current_path();
  if (!f.static_dir.empty()) options.static_dir = f.static_dir;
  ApiServer server(co, options);
  const int port = server.bind(addr.host, addr.port);
  out << "listening on http://" << addr.host << ":" << port << std::endl;

  g_server = &server;
  std::signal(SIGINT, handle_stop_signal);
  std::signal(SIGTERM, handle_stop_signal);
  const bool ok = server.serve();
  g_server = nullptr;
  return ok ? 0 : 1;
}

}  // namespace

std::optional<fs::path> find_kb_config(const std::string& name) {
  std::vector<fs::path> roots;
  if (const char* env = std::getenv("MQA_DATA_DIR"); env && *env) roots.emplace_back(env);
  roots.emplace_back("data");
  roots.emplace_back(MQA_DEFAULT_DATA_DIR);
  for (const auto& root : roots) {
    auto candidate = root / name / "config.json";
    std::error_code ec;
    if (fs::is_regular_file(candidate, ec)) return candidate;
  }
  return std::nullopt;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, bool tty) {
  CLI::App app{"Multi-modal query answering over a unified navigation graph", "mqa"};
  app.require_subcommand(1);

  IngestFlags ingest_f;
  auto* ingest_cmd = app.add_subcommand("ingest", "Ingest a manifest, encode it and write a vectors file");
  add_config_source(ingest_cmd, ingest_f.source);
  ingest_cmd->add_option("--manifest", ingest_f.manifest, "JSON-lines manifest")->check(CLI::ExistingFile);
  ingest_cmd->add_option("--schema", ingest_f.schema, "Modality schema, e.g. text:64,image:48");
  ingest_cmd->add_option("--out", ingest_f.out, "Vectors file to write")->required();

  LearnFlags learn_f;
  auto* learn_cmd = app.add_subcommand("learn-weights", "Learn modality weights from triplets");
  add_config_source(learn_cmd, learn_f.source);
  learn_cmd->add_option("--triplets", learn_f.triplets, "JSON-lines triplets")->check(CLI::ExistingFile);
  learn_cmd->add_option("--schema", learn_f.schema, "Modality schema, e.g. text:64,image:48");
  learn_cmd->add_option("--margin", learn_f.learning.margin, "Hinge margin");
  learn_cmd->add_option("--lr", learn_f.learning.learning_rate, "Learning rate");
  learn_cmd->add_option("--epochs", learn_f.learning.epochs, "Epochs");
  learn_cmd->add_option("--out", learn_f.out, "Weights JSON to write")->required();

  BuildFlags build_f;
  auto* build_cmd = app.add_subcommand("build-index", "Build the unified navigation graph");
  build_cmd->add_option("--vectors", build_f.vectors, "Vectors file from ingest")
      ->required()
      ->check(CLI::ExistingFile);
  build_cmd->add_option("--weights", build_f.weights, "Weights JSON (default: uniform)")
      ->check(CLI::ExistingFile);
  build_cmd->add_option("--R", build_f.params.degree_bound, "Degree bound");
  build_cmd->add_option("--L-build", build_f.params.build_beam, "Construction beam width");
  build_cmd->add_option("--alpha", build_f.params.alpha, "Robust prune slack");
  build_cmd->add_option("--passes", build_f.params.passes, "Refinement passes");
  build_cmd->add_option("--seed", build_f.params.seed, "Random seed");
  build_cmd->add_option("--out", build_f.out, "Graph file to write")->required();

  QueryFlags query_f;
  auto* query_cmd = app.add_subcommand("query", "Answer one query");
  add_query_flags(query_cmd, query_f);

  QueryFlags compare_f;
  auto* compare_cmd = app.add_subcommand("compare", "Run MUST, MR and JE on the same query");
  add_query_flags(compare_cmd, compare_f);
  compare_cmd->add_option("--ground-truth", compare_f.ground_truth,
                          "Write per-framework recall against exact search to this CSV");

  ServeFlags serve_f;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  add_config_source(serve_cmd, serve_f.source);
  serve_cmd->add_option("--listen", serve_f.listen, "host:port (default MQA_LISTEN_ADDR or 127.0.0.1:8080)");
  serve_cmd->add_option("--static", serve_f.static_dir, "Directory served under /")
      ->check(CLI::ExistingDirectory);

  ValidateFlags validate_f;
  auto* validate_cmd = app.add_subcommand("validate", "Check a graph file's structural invariants");
  validate_cmd->add_option("--graph", validate_f.graph, "Graph file")->required()->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (auto* sub : app.get_subcommands()) failed = sub;
    err << failed->help();
    return 2;
  }

  try {
    if (*ingest_cmd) return cmd_ingest(ingest_f, out);
    if (*learn_cmd) return cmd_learn(learn_f, out, *learn_cmd);
    if (*build_cmd) return cmd_build(build_f, out);
    if (*query_cmd) return cmd_query(query_f, out, tty);
    if (*compare_cmd) return cmd_compare(compare_f, out, tty);
    if (*serve_cmd) return cmd_serve(serve_f, out);
    if (*validate_cmd) return cmd_validate(validate_f, out, err);
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return e.code() == ErrorCode::InvalidConfig || e.code() == ErrorCode::InvalidArgument ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mqa::cli
