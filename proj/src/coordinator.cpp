#include "mqa/coordinator.hpp"

#include "mqa/error.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>

namespace mqa {

namespace {

using nlohmann::json;

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

std::string format_weights(const WeightVector& w) {
  std::ostringstream os;
  os.precision(4);
  os << "(";
  for (std::size_t m = 0; m < w.size(); ++m) os << (m ? ", " : "") << w[m];
  os << ")";
  return os.str();
}

std::string content_type_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".ppm") return "image/x-portable-pixmap";
  if (ext == ".txt") return "text/plain; charset=utf-8";
  if (ext == ".json") return "application/json";
  return "application/octet-stream";
}

std::string preview(const KnowledgeBase& kb, VertexId v) {
  for (const auto& [modality, payload] : kb.object_at(v).payloads)
    if (const auto* t = std::get_if<InlineText>(&payload)) {
      if (t->text.size() <= 160) return t->text;
      return t->text.substr(0, 157) + "...";
    }
  return {};
}

std::string query_label(const QueryRequest& req) {
  if (req.text && !req.text->empty()) return *req.text;
  std::vector<std::string> parts;
  if (req.image) parts.push_back("[uploaded image]");
  if (req.selected_id) parts.push_back("[selected " + *req.selected_id + "]");
  return join(parts, " ");
}

bool has_text(const QueryRequest& req) { return req.text && !req.text->empty(); }

}  // namespace

struct Coordinator::State {
  SystemConfig config;
  QueryRouting routing;
  bool llm_only = false;
  std::shared_ptr<LlmClient> llm;  // null: template provider
  KnowledgeBase kb;
  EncoderRegistry registry;
  std::optional<RetrievalEngine> engine;
};

struct Coordinator::Session {
  std::string id;
  mutable std::mutex mutex;
  std::vector<Turn> turns;
};

std::string_view to_string(StageStatus s) {
  switch (s) {
    case StageStatus::Pending: return "pending";
    case StageStatus::Running: return "running";
    case StageStatus::Done: return "done";
    case StageStatus::Failed: return "failed";
  }
  return "?";
}

bool Milestones::all_done() const {
  return preprocessing.status == StageStatus::Done && representation.status == StageStatus::Done &&
         indexing.status == StageStatus::Done;
}

bool Milestones::failed() const {
  return preprocessing.status == StageStatus::Failed ||
         representation.status == StageStatus::Failed || indexing.status == StageStatus::Failed;
}

json Milestones::to_json() const {
  auto stage = [](const StageState& s) {
    return json{{"status", to_string(s.status)}, {"detail", s.detail}};
  };
  json out{{"stages",
            {{"data_preprocessing", stage(preprocessing)},
             {"vector_representation", stage(representation)},
             {"index_construction", stage(indexing)}}},
           {"llm_only", llm_only},
           {"details", details}};
  if (error) out["error"] = {{"code", error_code.value_or("")}, {"message", *error}};
  return out;
}

Coordinator::Coordinator(std::shared_ptr<LlmClient> llm_override)
    : llm_override_(std::move(llm_override)) {}

Coordinator::~Coordinator() = default;

void Coordinator::set_stage(StageState Milestones::*stage, StageStatus status, std::string detail) {
  std::lock_guard lock(status_mutex_);
  (milestones_.*stage).status = status;
  if (!detail.empty()) (milestones_.*stage).detail = std::move(detail);
}

Milestones Coordinator::configure(const SystemConfig& config) {
  validate_config(config);

  reconfiguring_ = true;
  std::unique_lock lock(config_mutex_);
  struct Settle {
    std::atomic<bool>& flag;
    ~Settle() { flag = false; }
  } settle{reconfiguring_};
  state_.reset();

  auto state = std::make_shared<State>();
  state->config = config;
  state->routing = effective_routing(config);
  if (llm_override_)
    state->llm = llm_override_;
  else if (config.llm.provider == LlmProvider::External) {
    ChatCompletionOptions opts;
    opts.endpoint = config.llm.endpoint;
    opts.model = config.llm.model;
    opts.temperature = config.llm.temperature;
    opts.timeout = config.llm.timeout;
    if (const char* key = std::getenv("MQA_LLM_API_KEY")) opts.api_key = key;
    state->llm = std::make_shared<ChatCompletionClient>(std::move(opts));
  }

  json llm{{"provider", to_string(config.llm.provider)}, {"temperature", config.llm.temperature}};
  if (config.llm.provider == LlmProvider::External) {
    llm["endpoint"] = config.llm.endpoint;
    llm["model"] = config.llm.model;
  }
  {
    std::lock_guard status_lock(status_mutex_);
    milestones_ = Milestones{};
    milestones_.details["knowledge_base"] = config.knowledge_base.name;
    milestones_.details["llm"] = llm;
  }

  if (!config.knowledge_base.ingest_enabled) {
    state->llm_only = true;
    const std::string skipped = "skipped: ingestion disabled, answers come from the LLM only";
    {
      std::lock_guard status_lock(status_mutex_);
      milestones_.llm_only = true;
      milestones_.preprocessing.detail = skipped;
      milestones_.representation.detail = skipped;
      milestones_.indexing.detail = skipped;
    }
    state_ = std::move(state);
    return status();
  }

  StageState Milestones::*stage = &Milestones::preprocessing;
  try {
    const auto& schema = config.knowledge_base.modalities;

    set_stage(stage, StageStatus::Running, "ingesting " + config.knowledge_base.manifest.string());
    state->kb = ingest(config.knowledge_base.manifest, schema, config.knowledge_base.name);
    const auto coverage = state->kb.coverage();
    std::vector<std::string> counts;
    json modalities = json::array();
    for (std::size_t m = 0; m < schema.size(); ++m) {
      counts.push_back(schema[m].name + " " + std::to_string(coverage[m]) + "/" +
                       std::to_string(state->kb.size()));
      modalities.push_back(
          {{"name", schema[m].name}, {"dim", schema[m].dim}, {"coverage", coverage[m]}});
    }
    {
      std::lock_guard status_lock(status_mutex_);
      milestones_.details["objects"] = state->kb.size();
      milestones_.details["modalities"] = modalities;
    }
    set_stage(stage, StageStatus::Done,
              std::to_string(state->kb.size()) + " objects; coverage " + join(counts, ", "));

    stage = &Milestones::representation;
    set_stage(stage, StageStatus::Running, "encoding");
    const auto specs = effective_encoders(config);
    state->registry = EncoderRegistry(schema, specs);
    auto vectors = encode_all(state->kb, state->registry);

    WeightVector weights;
    switch (config.weights.mode) {
      case WeightsMode::Uniform: weights = WeightVector::uniform(schema.size()); break;
      case WeightsMode::Manual:
        weights = WeightVector(Eigen::Map<const VectorXd>(
            config.weights.values.data(), static_cast<Eigen::Index>(config.weights.values.size())));
        break;
      case WeightsMode::Learned: {
        auto triplets = load_triplets(config.weights.triplets, schema);
        weights = learn_weights(triplets, config.weights.learning).weights;
        break;
      }
    }

    std::vector<std::string> enc_desc;
    json encoders = json::array();
    std::size_t fused_dim = 0;
    for (const auto& s : specs) {
      enc_desc.push_back(s.modality + "=" + std::string(to_string(s.kind)) + "(" +
                         std::to_string(s.dimension) + ")");
      encoders.push_back({{"id", s.id},
                          {"modality", s.modality},
                          {"kind", to_string(s.kind)},
                          {"dimension", s.dimension}});
      fused_dim += s.dimension;
    }
    {
      std::lock_guard status_lock(status_mutex_);
      milestones_.details["encoders"] = encoders;
      milestones_.details["fused_dimension"] = fused_dim;
      milestones_.details["weights"] = {{"mode", to_string(config.weights.mode)},
                                        {"values", std::vector<double>(weights.values().begin(),
                                                                       weights.values().end())}};
    }
    set_stage(stage, StageStatus::Done,
              "encoders " + join(enc_desc, ", ") + "; fused dimension " +
                  std::to_string(fused_dim) + "; " + std::string(to_string(config.weights.mode)) +
                  " weights " + format_weights(weights));

    stage = &Milestones::indexing;
    const auto& b = config.index.build;
    std::vector<std::string> frameworks;
    for (auto f : config.index.frameworks) frameworks.emplace_back(to_string(f));
    set_stage(stage, StageStatus::Running, "building " + join(frameworks, ", "));
    state->engine.emplace(std::move(vectors), weights, b, config.index.frameworks);

    std::ostringstream index_desc;
    index_desc << "navigation graph R=" << b.degree_bound << " L_build=" << b.build_beam
               << " alpha=" << b.alpha << " passes=" << b.passes << "; frameworks "
               << join(frameworks, ", ") << "; default " << to_string(config.retrieval.framework)
               << " k=" << config.retrieval.k << " L=" << config.retrieval.beam;
    {
      std::lock_guard status_lock(status_mutex_);
      milestones_.details["index"] = {{"type", "navigation-graph"},
                                      {"R", b.degree_bound},
                                      {"L_build", b.build_beam},
                                      {"alpha", b.alpha},
                                      {"passes", b.passes},
                                      {"seed", b.seed}};
      milestones_.details["frameworks"] = frameworks;
      milestones_.details["retrieval"] = {{"framework", to_string(config.retrieval.framework)},
                                          {"k", config.retrieval.k},
                                          {"L", config.retrieval.beam}};
    }
    set_stage(stage, StageStatus::Done, index_desc.str());
  } catch (const Error& e) {
    set_stage(stage, StageStatus::Failed, e.what());
    std::lock_guard status_lock(status_mutex_);
    milestones_.error = e.what();
    milestones_.error_code = std::string(to_string(e.code()));
    return milestones_;
  } catch (const std::exception& e) {
    set_stage(stage, StageStatus::Failed, e.what());
    std::lock_guard status_lock(status_mutex_);
    milestones_.error = e.what();
    milestones_.error_code = "IoError";
    return milestones_;
  }

  state_ = std::move(state);
  return status();
}

Milestones Coordinator::status() const {
  std::lock_guard lock(status_mutex_);
  return milestones_;
}

bool Coordinator::ready() const {
  if (reconfiguring_) return false;
  std::shared_lock lock(config_mutex_);
  return state_ != nullptr;
}

std::shared_ptr<const Coordinator::State> Coordinator::current_state() const {
  if (!state_) throw Error(ErrorCode::IndexNotBuilt, "the system is not configured");
  return state_;
}

std::string Coordinator::open_session() {
  std::lock_guard lock(sessions_mutex_);
  auto session = std::make_shared<Session>();
  session->id = "s" + std::to_string(next_session_++);
  sessions_.emplace(session->id, session);
  return session->id;
}

std::shared_ptr<Coordinator::Session> Coordinator::find_session(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "unknown session '" + id + "'");
  return it->second;
}

std::vector<Turn> Coordinator::history(const std::string& session_id) const {
  auto session = find_session(session_id);
  std::lock_guard lock(session->mutex);
  return session->turns;
}

namespace {

// Maps request inputs onto schema modalities. The selected object lends its
// stored image vector; without an image modality it fills every modality the
// request leaves empty.
QueryContext build_context(const KnowledgeBase& kb, const QueryRouting& routing,
                           const QueryRequest& req) {
  QueryContext ctx;
  if (has_text(req)) {
    if (routing.text_modality.empty())
      throw Error(ErrorCode::InvalidArgument, "this knowledge base has no text modality", "text");
    ctx.inputs.emplace_back(routing.text_modality, *req.text);
  }
  if (req.image) {
    if (routing.image_modality.empty())
      throw Error(ErrorCode::InvalidArgument, "this knowledge base has no image modality",
                  "image");
    ctx.inputs.emplace_back(routing.image_modality, RawBytes{*req.image});
  }
  if (req.selected_id) {
    kb.vertex_of(*req.selected_id);
    if (!routing.image_modality.empty()) {
      if (req.image)
        throw Error(ErrorCode::InvalidArgument,
                    "send either an uploaded image or a selected result, not both",
                    "selected_id");
      ctx.inputs.emplace_back(routing.image_modality, SelectedObject{*req.selected_id});
    } else {
      for (const auto& m : kb.modalities()) {
        bool supplied = std::any_of(ctx.inputs.begin(), ctx.inputs.end(),
                                    [&](const auto& in) { return in.first == m.name; });
        if (!supplied) ctx.inputs.emplace_back(m.name, SelectedObject{*req.selected_id});
      }
    }
  }
  return ctx;
}

SearchParams search_params(const SystemConfig& config, const RetrievalEngine& engine,
                           const QueryRequest& req) {
  SearchParams p;
  p.k = req.k.value_or(config.retrieval.k);
  p.beam = std::max(req.beam.value_or(config.retrieval.beam), p.k);
  p.framework = req.framework.value_or(config.retrieval.framework);
  if (req.weights) {
    if (req.weights->size() != engine.weights().size())
      throw Error(ErrorCode::InvalidArgument,
                  "expected " + std::to_string(engine.weights().size()) + " weights", "weights");
    p.weight_override = WeightVector(Eigen::Map<const VectorXd>(
        req.weights->data(), static_cast<Eigen::Index>(req.weights->size())));
  }
  if (p.k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1", "k");
  return p;
}

std::vector<ResultItem> to_items(const KnowledgeBase& kb, const SearchResult& r) {
  std::vector<ResultItem> items;
  for (const auto& h : r.hits) items.push_back({kb.object_at(h.vertex).id, h.vertex, h.distance});
  return items;
}

void check_selection(const std::vector<Turn>& turns, const QueryRequest& req) {
  if (!req.selected_id || turns.empty()) return;
  const auto& last = turns.back().results;
  if (std::none_of(last.begin(), last.end(),
                   [&](const ResultItem& r) { return r.id == *req.selected_id; }))
    throw Error(ErrorCode::InvalidArgument,
                "selected id '" + *req.selected_id + "' is not among the previous turn's results",
                "selected_id");
}

}  // namespace

QueryResponse Coordinator::submit_query(const QueryRequest& req) {
  if (reconfiguring_) throw Error(ErrorCode::Reconfiguring, "the system is being reconfigured");
  std::shared_lock lock(config_mutex_, std::try_to_lock);
  if (!lock.owns_lock())
    throw Error(ErrorCode::Reconfiguring, "the system is being reconfigured");
  auto state = current_state();
  auto session = find_session(req.session_id);
  std::lock_guard turn_lock(session->mutex);

  if (!has_text(req) && !req.image && !req.selected_id)
    throw Error(ErrorCode::InvalidArgument, "a query needs text, an image or a selected result");

  QueryResponse out;
  out.session_id = session->id;
  out.llm_only = state->llm_only;
  std::vector<AnswerItem> answer_items;

  if (!state->llm_only) {
    if (!state->kb.ingest_enabled()) throw Error(ErrorCode::IndexNotBuilt, "no knowledge base");
    check_selection(session->turns, req);
    const auto& engine = *state->engine;
    auto ctx = build_context(state->kb, state->routing, req);
    out.query_vectors = encode_query(state->kb, engine.vectors(), ctx, state->registry);
    auto params = search_params(state->config, engine, req);
    out.framework = params.framework;
    auto result = engine.search(out.query_vectors, params);
    out.results = to_items(state->kb, result);
    out.stats = result.stats;
    for (const auto& r : out.results)
      answer_items.push_back({r.id, r.distance, preview(state->kb, r.vertex)});
  }

  const auto label = query_label(req);
  try {
    out.answer = generate_answer(label, answer_items, state->llm.get());
  } catch (const std::exception& e) {
    out.answer = render_template_answer(label, answer_items);
    out.degraded = true;
    out.warning = std::string("LLM unavailable, showing the template answer: ") + e.what();
  }

  Turn turn;
  turn.request = req;
  turn.query_vectors = out.query_vectors;
  turn.framework = out.framework;
  turn.results = out.results;
  turn.stats = out.stats;
  turn.answer = out.answer;
  turn.degraded = out.degraded;
  session->turns.push_back(std::move(turn));
  out.turn = session->turns.size();
  return out;
}

CompareResponse Coordinator::compare(const QueryRequest& req, bool with_recall) {
  if (reconfiguring_) throw Error(ErrorCode::Reconfiguring, "the system is being reconfigured");
  std::shared_lock lock(config_mutex_, std::try_to_lock);
  if (!lock.owns_lock())
    throw Error(ErrorCode::Reconfiguring, "the system is being reconfigured");
  auto state = current_state();
  if (state->llm_only) throw Error(ErrorCode::IndexNotBuilt, "the system is in LLM-only mode");
  if (!has_text(req) && !req.image && !req.selected_id)
    throw Error(ErrorCode::InvalidArgument, "a query needs text, an image or a selected result");
  if (!req.session_id.empty()) {
    auto session = find_session(req.session_id);
    std::lock_guard turn_lock(session->mutex);
    check_selection(session->turns, req);
  }

  const auto& engine = *state->engine;
  auto ctx = build_context(state->kb, state->routing, req);
  auto query = encode_query(state->kb, engine.vectors(), ctx, state->registry);
  auto params = search_params(state->config, engine, req);
  std::optional<SearchResult> truth;
  if (with_recall) truth = engine.ground_truth(query, params);

  CompareResponse out;
  for (auto& outcome : compare_frameworks(engine, query, params)) {
    FrameworkRun run;
    run.framework = outcome.framework;
    run.error = outcome.error;
    if (outcome.result) {
      run.results = to_items(state->kb, *outcome.result);
      run.stats = outcome.result->stats;
      if (truth) run.recall = recall_at_k(*outcome.result, *truth, params.k);
    }
    out.runs.push_back(std::move(run));
  }
  return out;
}

Payload Coordinator::get_payload(const std::string& object_id, const std::string& modality) const {
  std::shared_lock lock(config_mutex_, std::try_to_lock);
  if (!lock.owns_lock())
    throw Error(ErrorCode::Reconfiguring, "the system is being reconfigured");
  auto state = current_state();
  const auto& obj = state->kb.get_object(object_id);
  auto it = obj.payloads.find(modality);
  if (it == obj.payloads.end())
    throw Error(ErrorCode::NotFound,
                "object '" + object_id + "' has no '" + modality + "' payload");
  Payload out;
  out.bytes = payload_bytes(state->kb, obj, modality);
  if (std::holds_alternative<InlineText>(it->second))
    out.content_type = "text/plain; charset=utf-8";
  else if (std::holds_alternative<InlineVector>(it->second))
    out.content_type = "application/json";
  else
    out.content_type = content_type_for(std::get<FilePath>(it->second).path);
  return out;
}

const KnowledgeBase& Coordinator::knowledge_base() const { return current_state()->kb; }

const RetrievalEngine& Coordinator::engine() const {
  auto state = current_state();
  if (!state->engine) throw Error(ErrorCode::IndexNotBuilt, "the system is in LLM-only mode");
  return *state->engine;
}

json to_json(const SearchStats& s) {
  return {{"visited", s.visited},
          {"full_evals", s.full_evals},
          {"abandoned", s.abandoned},
          {"latency_ms", s.latency_ms}};
}

namespace {

json results_json(const std::vector<ResultItem>& items) {
  json out = json::array();
  for (std::size_t i = 0; i < items.size(); ++i)
    out.push_back({{"rank", i + 1}, {"id", items[i].id}, {"distance", items[i].distance}});
  return out;
}

}  // namespace

json to_json(const QueryResponse& r) {
  json out{{"schema_version", kJsonSchemaVersion},
           {"session_id", r.session_id},
           {"turn", r.turn},
           {"answer", r.answer},
           {"degraded", r.degraded},
           {"llm_only", r.llm_only},
           {"framework", to_string(r.framework)},
           {"results", results_json(r.results)},
           {"stats", to_json(r.stats)}};
  if (!r.warning.empty()) out["warning"] = r.warning;
  return out;
}

json to_json(const CompareResponse& r) {
  json runs = json::array();
  for (const auto& run : r.runs) {
    json j{{"framework", to_string(run.framework)},
           {"results", results_json(run.results)},
           {"stats", to_json(run.stats)}};
    if (run.recall) j["recall"] = *run.recall;
    if (!run.error.empty()) j["error"] = run.error;
    runs.push_back(std::move(j));
  }
  return {{"schema_version", kJsonSchemaVersion}, {"frameworks", runs}};
}

}  // namespace mqa
