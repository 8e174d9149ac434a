#pragma once

#include "mqa/catalog.hpp"
#include "mqa/encoding.hpp"
#include "mqa/fusion.hpp"
#include "mqa/nav_graph.hpp"
#include "mqa/search.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mqa {

struct KnowledgeBaseConfig {
  std::string name;
  std::filesystem::path manifest;
  ModalitySchema modalities;
  bool ingest_enabled = true;
};

enum class WeightsMode { Learned, Uniform, Manual };

std::string_view to_string(WeightsMode mode);

struct WeightsConfig {
  WeightsMode mode = WeightsMode::Uniform;
  std::vector<double> values;        // manual
  std::filesystem::path triplets;    // learned
  LearningConfig learning;
};

struct IndexConfig {
  BuildParams build;
  std::vector<Framework> frameworks{kAllFrameworks.begin(), kAllFrameworks.end()};
};

struct RetrievalDefaults {
  std::size_t k = 10;
  std::size_t beam = 100;
  Framework framework = Framework::Must;
};

enum class LlmProvider { Template, External };

std::string_view to_string(LlmProvider provider);

struct LlmConfig {
  LlmProvider provider = LlmProvider::Template;
  std::string endpoint;
  std::string model = "gpt-4o-mini";
  double temperature = 0.7;
  std::chrono::milliseconds timeout{30'000};
};

/// Which modality receives typed text and which receives uploaded images.
/// Empty means "pick from the encoders".
struct QueryRouting {
  std::string text_modality;
  std::string image_modality;
};

struct SystemConfig {
  KnowledgeBaseConfig knowledge_base;
  std::vector<EncoderSpec> encoders;  // empty: defaults for the schema
  WeightsConfig weights;
  IndexConfig index;
  RetrievalDefaults retrieval;
  QueryRouting routing;
  LlmConfig llm;
};

/// Throws InvalidConfig with `field` set to the dotted key at fault,
/// e.g. "weights.values" or "llm.temperature".
void validate_config(const SystemConfig& config);

/// Parses and validates. Relative paths resolve against `base_dir`.
SystemConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
SystemConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const SystemConfig& config);

/// Encoders actually in effect: the configured list, or the schema defaults.
std::vector<EncoderSpec> effective_encoders(const SystemConfig& config);

/// Resolves empty routing entries: text goes to the first hash-ngram modality
/// (or one named "text"), images to the first color-hist modality (or one named
/// "image"). Either may stay empty.
QueryRouting effective_routing(const SystemConfig& config);

}  // namespace mqa
