#include "mqa/config.hpp"

#include "binary_io.hpp"
#include "mqa/error.hpp"
#include "url.hpp"

#include <algorithm>
#include <set>

namespace mqa {

namespace {

using nlohmann::json;

[[noreturn]] void reject(const std::string& field, const std::string& message) {
  throw Error(ErrorCode::InvalidConfig, field + ": " + message, field);
}

// Typed lookup of an optional key; a type mismatch names the offending field.
template <typename T>
void read(const json& obj, const char* key, const std::string& prefix, T& out) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    reject(prefix + key, "has the wrong type");
  }
}

const json& section(const json& doc, const char* key) {
  static const json empty = json::object();
  auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return empty;
  if (!it->is_object()) reject(key, "must be an object");
  return *it;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

ModalitySchema read_modalities(const json& kb) {
  auto it = kb.find("modalities");
  if (it == kb.end() || it->is_null()) return {};
  if (it->is_string()) {
    try {
      return parse_schema(it->get<std::string>());
    } catch (const Error& e) {
      reject("knowledge_base.modalities", e.what());
    }
  }
  if (!it->is_array()) reject("knowledge_base.modalities", "must be an array or \"name:dim,...\"");
  ModalitySchema schema;
  for (std::size_t i = 0; i < it->size(); ++i) {
    const auto& m = (*it)[i];
    const auto field = "knowledge_base.modalities[" + std::to_string(i) + "]";
    if (!m.is_object()) reject(field, "must be an object {name, dim}");
    ModalitySpec spec;
    read(m, "name", field + ".", spec.name);
    long long dim = 0;
    read(m, "dim", field + ".", dim);
    if (dim <= 0) reject(field + ".dim", "must be a positive integer");
    spec.dim = static_cast<std::size_t>(dim);
    schema.push_back(std::move(spec));
  }
  return schema;
}

std::vector<EncoderSpec> read_encoders(const json& doc) {
  auto it = doc.find("encoders");
  if (it == doc.end() || it->is_null()) return {};
  if (!it->is_array()) reject("encoders", "must be an array");
  std::vector<EncoderSpec> specs;
  for (std::size_t i = 0; i < it->size(); ++i) {
    const auto& e = (*it)[i];
    const auto prefix = "encoders[" + std::to_string(i) + "].";
    if (!e.is_object()) reject("encoders[" + std::to_string(i) + "]", "must be an object");
    EncoderSpec spec;
    read(e, "modality", prefix, spec.modality);
    std::string kind = "hash-ngram";
    read(e, "kind", prefix, kind);
    try {
      spec.kind = parse_encoder_kind(kind);
    } catch (const Error& err) {
      reject(prefix + "kind", err.what());
    }
    spec.id = spec.modality + "-" + kind;
    read(e, "id", prefix, spec.id);
    read(e, "dimension", prefix, spec.dimension);
    std::string endpoint;
    read(e, "endpoint", prefix, endpoint);
    if (!endpoint.empty()) spec.endpoint = endpoint;
    read(e, "max_in_flight", prefix, spec.max_in_flight);
    long long timeout_ms = spec.timeout.count();
    read(e, "timeout_ms", prefix, timeout_ms);
    spec.timeout = std::chrono::milliseconds(timeout_ms);
    specs.push_back(std::move(spec));
  }
  return specs;
}

}  // namespace

std::string_view to_string(WeightsMode mode) {
  switch (mode) {
    case WeightsMode::Learned: return "learned";
    case WeightsMode::Uniform: return "uniform";
    case WeightsMode::Manual: return "manual";
  }
  return "?";
}

std::string_view to_string(LlmProvider provider) {
  return provider == LlmProvider::Template ? "template" : "external";
}

void validate_config(const SystemConfig& c) {
  const auto& kb = c.knowledge_base;

  std::set<std::string> names;
  for (std::size_t i = 0; i < kb.modalities.size(); ++i) {
    const auto field = "knowledge_base.modalities[" + std::to_string(i) + "]";
    if (kb.modalities[i].name.empty()) reject(field + ".name", "must not be empty");
    if (kb.modalities[i].dim == 0) reject(field + ".dim", "must be positive");
    if (!names.insert(kb.modalities[i].name).second)
      reject(field + ".name", "duplicate modality '" + kb.modalities[i].name + "'");
  }

  if (c.llm.provider == LlmProvider::External) {
    if (c.llm.endpoint.empty()) reject("llm.endpoint", "required for the external provider");
    try {
      detail::split_url(c.llm.endpoint);
    } catch (const Error& e) {
      reject("llm.endpoint", e.what());
    }
  }
  if (!(c.llm.temperature >= 0.0 && c.llm.temperature <= 2.0))
    reject("llm.temperature", "must lie in [0, 2]");
  if (c.llm.timeout.count() <= 0) reject("llm.timeout_ms", "must be positive");

  const auto& w = c.weights;
  if (w.mode == WeightsMode::Manual) {
    if (!kb.modalities.empty() && w.values.size() != kb.modalities.size())
      reject("weights.values", "expected " + std::to_string(kb.modalities.size()) +
                                   " values, got " + std::to_string(w.values.size()));
    VectorXd v = Eigen::Map<const VectorXd>(w.values.data(),
                                            static_cast<Eigen::Index>(w.values.size()));
    if (!on_simplex(v)) reject("weights.values", "must be non-negative and sum to 1");
  }
  if (w.mode == WeightsMode::Learned) {
    if (w.triplets.empty()) reject("weights.triplets", "required when mode is learned");
    if (!(w.learning.learning_rate > 0)) reject("weights.learning_rate", "must be positive");
    if (!(w.learning.margin >= 0)) reject("weights.margin", "must be non-negative");
    if (w.learning.epochs < 0) reject("weights.epochs", "must be non-negative");
  }

  if (!kb.ingest_enabled) return;

  if (kb.name.empty()) reject("knowledge_base.name", "must not be empty");
  if (kb.manifest.empty()) reject("knowledge_base.manifest", "required when ingestion is enabled");
  if (kb.modalities.empty()) reject("knowledge_base.modalities", "at least one modality required");

  std::set<std::string> covered;
  for (std::size_t i = 0; i < c.encoders.size(); ++i) {
    const auto& spec = c.encoders[i];
    const auto prefix = "encoders[" + std::to_string(i) + "].";
    try {
      spec.validate();
    } catch (const Error& e) {
      reject(prefix + e.field(), e.what());
    }
    if (spec.kind == EncoderKind::JointMean)
      reject(prefix + "kind", "joint-mean is built in for the JE framework");
    auto m = std::find_if(kb.modalities.begin(), kb.modalities.end(),
                          [&](const ModalitySpec& s) { return s.name == spec.modality; });
    if (m == kb.modalities.end())
      reject(prefix + "modality", "unknown modality '" + spec.modality + "'");
    if (m->dim != spec.dimension)
      reject(prefix + "dimension", "modality '" + spec.modality + "' is " +
                                       std::to_string(m->dim) + "-dimensional");
    if (!covered.insert(spec.modality).second)
      reject(prefix + "modality", "modality '" + spec.modality + "' already has an encoder");
  }

  try {
    c.index.build.validate();
  } catch (const Error& e) {
    reject("index." + e.field(), e.what());
  }
  if (c.index.frameworks.empty()) reject("index.frameworks", "at least one framework required");
  for (std::size_t i = 0; i < c.index.frameworks.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (c.index.frameworks[i] == c.index.frameworks[j])
        reject("index.frameworks", "duplicate framework " +
                                       std::string(to_string(c.index.frameworks[i])));

  if (c.retrieval.k == 0) reject("retrieval.k", "must be at least 1");
  if (c.retrieval.beam < c.retrieval.k) reject("retrieval.L", "must be at least k");
  if (std::find(c.index.frameworks.begin(), c.index.frameworks.end(), c.retrieval.framework) ==
      c.index.frameworks.end())
    reject("retrieval.framework", "framework is not among index.frameworks");

  for (auto [field, name] : {std::pair{"query.text_modality", &c.routing.text_modality},
                             std::pair{"query.image_modality", &c.routing.image_modality}})
    if (!name->empty() && !names.count(*name)) reject(field, "unknown modality '" + *name + "'");
}

SystemConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) reject("config", "must be a JSON object");
  SystemConfig c;

  const auto& kb = section(doc, "knowledge_base");
  read(kb, "name", "knowledge_base.", c.knowledge_base.name);
  std::string manifest;
  read(kb, "manifest", "knowledge_base.", manifest);
  c.knowledge_base.manifest = resolve(base_dir, manifest);
  read(kb, "ingest_enabled", "knowledge_base.", c.knowledge_base.ingest_enabled);
  c.knowledge_base.modalities = read_modalities(kb);
  if (c.knowledge_base.name.empty() && !manifest.empty())
    c.knowledge_base.name = c.knowledge_base.manifest.parent_path().filename().string();

  c.encoders = read_encoders(doc);

  const auto& w = section(doc, "weights");
  std::string mode = "uniform";
  read(w, "mode", "weights.", mode);
  if (mode == "learned")
    c.weights.mode = WeightsMode::Learned;
  else if (mode == "uniform")
    c.weights.mode = WeightsMode::Uniform;
  else if (mode == "manual")
    c.weights.mode = WeightsMode::Manual;
  else
    reject("weights.mode", "expected learned, uniform or manual");
  read(w, "values", "weights.", c.weights.values);
  std::string triplets;
  read(w, "triplets", "weights.", triplets);
  c.weights.triplets = resolve(base_dir, triplets);
  read(w, "margin", "weights.", c.weights.learning.margin);
  read(w, "learning_rate", "weights.", c.weights.learning.learning_rate);
  read(w, "epochs", "weights.", c.weights.learning.epochs);

  const auto& idx = section(doc, "index");
  read(idx, "R", "index.", c.index.build.degree_bound);
  read(idx, "L_build", "index.", c.index.build.build_beam);
  read(idx, "alpha", "index.", c.index.build.alpha);
  read(idx, "passes", "index.", c.index.build.passes);
  read(idx, "seed", "index.", c.index.build.seed);
  if (idx.contains("frameworks")) {
    std::vector<std::string> names;
    read(idx, "frameworks", "index.", names);
    c.index.frameworks.clear();
    for (const auto& n : names) {
      try {
        c.index.frameworks.push_back(parse_framework(n));
      } catch (const Error& e) {
        reject("index.frameworks", e.what());
      }
    }
  }

  const auto& r = section(doc, "retrieval");
  read(r, "k", "retrieval.", c.retrieval.k);
  read(r, "L", "retrieval.", c.retrieval.beam);
  if (r.contains("framework")) {
    std::string f;
    read(r, "framework", "retrieval.", f);
    try {
      c.retrieval.framework = parse_framework(f);
    } catch (const Error& e) {
      reject("retrieval.framework", e.what());
    }
  }

  const auto& q = section(doc, "query");
  read(q, "text_modality", "query.", c.routing.text_modality);
  read(q, "image_modality", "query.", c.routing.image_modality);

  const auto& llm = section(doc, "llm");
  std::string provider = "template";
  read(llm, "provider", "llm.", provider);
  if (provider == "template")
    c.llm.provider = LlmProvider::Template;
  else if (provider == "external")
    c.llm.provider = LlmProvider::External;
  else
    reject("llm.provider", "expected template or external");
  read(llm, "endpoint", "llm.", c.llm.endpoint);
  read(llm, "model", "llm.", c.llm.model);
  read(llm, "temperature", "llm.", c.llm.temperature);
  long long timeout_ms = c.llm.timeout.count();
  read(llm, "timeout_ms", "llm.", timeout_ms);
  c.llm.timeout = std::chrono::milliseconds(timeout_ms);

  validate_config(c);
  return c;
}

SystemConfig load_config(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

json to_json(const SystemConfig& c) {
  json modalities = json::array();
  for (const auto& m : c.knowledge_base.modalities)
    modalities.push_back({{"name", m.name}, {"dim", m.dim}});
  json encoders = json::array();
  for (const auto& e : c.encoders) {
    json j{{"id", e.id},
           {"modality", e.modality},
           {"kind", to_string(e.kind)},
           {"dimension", e.dimension},
           {"max_in_flight", e.max_in_flight},
           {"timeout_ms", e.timeout.count()}};
    if (e.endpoint) j["endpoint"] = *e.endpoint;
    encoders.push_back(std::move(j));
  }
  json frameworks = json::array();
  for (auto f : c.index.frameworks) frameworks.push_back(to_string(f));

  json weights{{"mode", to_string(c.weights.mode)}};
  if (c.weights.mode == WeightsMode::Manual) weights["values"] = c.weights.values;
  if (c.weights.mode == WeightsMode::Learned) {
    weights["triplets"] = c.weights.triplets.string();
    weights["margin"] = c.weights.learning.margin;
    weights["learning_rate"] = c.weights.learning.learning_rate;
    weights["epochs"] = c.weights.learning.epochs;
  }

  json llm{{"provider", to_string(c.llm.provider)},
           {"model", c.llm.model},
           {"temperature", c.llm.temperature},
           {"timeout_ms", c.llm.timeout.count()}};
  if (!c.llm.endpoint.empty()) llm["endpoint"] = c.llm.endpoint;

  return {{"knowledge_base",
           {{"name", c.knowledge_base.name},
            {"manifest", c.knowledge_base.manifest.string()},
            {"ingest_enabled", c.knowledge_base.ingest_enabled},
            {"modalities", modalities}}},
          {"encoders", encoders},
          {"weights", weights},
          {"index",
           {{"R", c.index.build.degree_bound},
            {"L_build", c.index.build.build_beam},
            {"alpha", c.index.build.alpha},
            {"passes", c.index.build.passes},
            {"seed", c.index.build.seed},
            {"frameworks", frameworks}}},
          {"retrieval",
           {{"k", c.retrieval.k},
            {"L", c.retrieval.beam},
            {"framework", to_string(c.retrieval.framework)}}},
          {"query",
           {{"text_modality", c.routing.text_modality},
            {"image_modality", c.routing.image_modality}}},
          {"llm", llm}};
}

std::vector<EncoderSpec> effective_encoders(const SystemConfig& config) {
  auto specs = default_encoder_specs(config.knowledge_base.modalities);
  for (auto& spec : specs)
    for (const auto& configured : config.encoders)
      if (configured.modality == spec.modality) spec = configured;
  return specs;
}

QueryRouting effective_routing(const SystemConfig& config) {
  QueryRouting out = config.routing;
  const auto specs = effective_encoders(config);
  auto pick = [&](EncoderKind kind, std::string_view name) {
    for (const auto& s : specs)
      if (s.kind == kind) return s.modality;
    for (const auto& s : specs)
      if (s.modality == name) return s.modality;
    return std::string{};
  };
  if (out.text_modality.empty()) out.text_modality = pick(EncoderKind::HashNgram, "text");
  if (out.image_modality.empty()) out.image_modality = pick(EncoderKind::ColorHist, "image");
  return out;
}

}  // namespace mqa
