#pragma once

#include "mqa/catalog.hpp"
#include "mqa/config.hpp"
#include "mqa/encoding.hpp"
#include "mqa/llm.hpp"
#include "mqa/search.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace mqa {

enum class StageStatus { Pending, Running, Done, Failed };

std::string_view to_string(StageStatus s);

struct StageState {
  StageStatus status = StageStatus::Pending;
  std::string detail;
};

struct Milestones {
  StageState preprocessing;
  StageState representation;
  StageState indexing;
  bool llm_only = false;
  std::optional<std::string> error;  // message of the failing stage
  std::optional<std::string> error_code;
  nlohmann::json details = nlohmann::json::object();

  bool all_done() const;
  bool failed() const;
  nlohmann::json to_json() const;
};

struct QueryRequest {
  std::string session_id;
  std::optional<std::string> text;
  std::optional<std::string> image;  // raw upload bytes
  std::optional<std::string> selected_id;
  std::optional<std::size_t> k;
  std::optional<std::size_t> beam;
  std::optional<Framework> framework;
  std::optional<std::vector<double>> weights;
};

struct ResultItem {
  std::string id;
  VertexId vertex = 0;
  float distance = 0;
};

struct Turn {
  QueryRequest request;
  ModalityVectors<float> query_vectors;  // schema order; empty when LLM-only
  Framework framework = Framework::Must;
  std::vector<ResultItem> results;
  SearchStats stats;
  std::string answer;
  bool degraded = false;
};

struct QueryResponse {
  std::string session_id;
  std::size_t turn = 0;  // 1-based
  std::string answer;
  bool degraded = false;
  std::string warning;
  bool llm_only = false;
  Framework framework = Framework::Must;
  std::vector<ResultItem> results;
  SearchStats stats;
  ModalityVectors<float> query_vectors;
};

struct FrameworkRun {
  Framework framework = Framework::Must;
  std::vector<ResultItem> results;
  SearchStats stats;
  std::optional<double> recall;  // against exact weighted top-k
  std::string error;
};

struct CompareResponse {
  std::vector<FrameworkRun> runs;
};

struct Payload {
  std::string bytes;
  std::string content_type;
};

/// The single mediation point between clients and the engine. Configuration is
/// exclusive; queries on different sessions run concurrently; turns within a
/// session are serialised.
class Coordinator {
 public:
  /// `llm_override`, when set, replaces the client built from the config.
  explicit Coordinator(std::shared_ptr<LlmClient> llm_override = nullptr);
  ~Coordinator();

  Coordinator(const Coordinator&) = delete;
  Coordinator& operator=(const Coordinator&) = delete;

  /// Validates, then runs ingest, encode, weights and index stages. A stage
  /// failure is reported in the returned milestones; an invalid config throws
  /// InvalidConfig and leaves the current state untouched.
  Milestones configure(const SystemConfig& config);

  Milestones status() const;
  bool ready() const;

  std::string open_session();
  std::vector<Turn> history(const std::string& session_id) const;

  QueryResponse submit_query(const QueryRequest& request);

  /// Runs every built framework on the same inputs without recording a turn.
  CompareResponse compare(const QueryRequest& request, bool with_recall = false);

  Payload get_payload(const std::string& object_id, const std::string& modality) const;

  /// The knowledge base in service; throws IndexNotBuilt before configure.
  const KnowledgeBase& knowledge_base() const;
  const RetrievalEngine& engine() const;

 private:
  struct State;
  struct Session;

  std::shared_ptr<const State> current_state() const;
  std::shared_ptr<Session> find_session(const std::string& id) const;
  void set_stage(StageState Milestones::*stage, StageStatus status, std::string detail = {});

  std::shared_ptr<LlmClient> llm_override_;

  mutable std::shared_mutex config_mutex_;
  std::atomic<bool> reconfiguring_{false};
  std::shared_ptr<const State> state_;

  mutable std::mutex status_mutex_;
  Milestones milestones_;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t next_session_ = 1;
};

nlohmann::json to_json(const QueryResponse& response);
nlohmann::json to_json(const CompareResponse& response);
nlohmann::json to_json(const SearchStats& stats);

/// Schema version stamped on JSON produced by the CLI and the HTTP API.
constexpr int kJsonSchemaVersion = 1;

}  // namespace mqa
