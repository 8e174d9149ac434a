#pragma once

#include "mqa/types.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace mqa {

struct ModalitySpec {
  std::string name;
  std::size_t dim = 0;

  bool operator==(const ModalitySpec&) const = default;
};

using ModalitySchema = std::vector<ModalitySpec>;

/// Parses "text:64,image:48".
ModalitySchema parse_schema(std::string_view spec);

struct InlineText {
  std::string text;
  bool operator==(const InlineText&) const = default;
};
struct InlineVector {
  std::vector<float> values;
  bool operator==(const InlineVector&) const = default;
};
struct FilePath {
  std::string path;  // relative to the manifest directory
  bool operator==(const FilePath&) const = default;
};

using ModalityPayload = std::variant<InlineText, InlineVector, FilePath>;

struct MultiModalObject {
  std::string id;
  std::map<std::string, ModalityPayload> payloads;

  bool operator==(const MultiModalObject&) const = default;
};

/// Encoded vectors of a whole collection: one N x dim matrix per modality.
struct EncodedVectors {
  std::vector<RowMatrixXf> per_modality;

  std::size_t size() const { return per_modality.empty() ? 0 : per_modality.front().rows(); }
  std::size_t modality_count() const { return per_modality.size(); }
  ModalityVectors<float> object(VertexId v) const;

  bool operator==(const EncodedVectors& other) const;
};

/// Immutable after ingest. Object position is the vertex id.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  KnowledgeBase(std::string name, ModalitySchema modalities, std::vector<MultiModalObject> objects,
                std::filesystem::path base_dir = {}, bool ingest_enabled = true);

  const std::string& name() const { return name_; }
  const ModalitySchema& modalities() const { return modalities_; }
  const std::vector<MultiModalObject>& objects() const { return objects_; }
  const std::filesystem::path& base_dir() const { return base_dir_; }
  bool ingest_enabled() const { return ingest_enabled_; }
  std::size_t size() const { return objects_.size(); }

  std::optional<VertexId> find(std::string_view id) const;
  /// Throws NotFound.
  VertexId vertex_of(std::string_view id) const;
  const MultiModalObject& get_object(std::string_view id) const;
  const MultiModalObject& object_at(VertexId v) const { return objects_.at(v); }

  /// Index of the modality in the schema, or nullopt.
  std::optional<std::size_t> modality_index(std::string_view name) const;

  /// Number of objects carrying a payload for each modality, schema order.
  std::vector<std::size_t> coverage() const;

  std::vector<std::string> ids() const;

 private:
  std::string name_;
  ModalitySchema modalities_;
  std::vector<MultiModalObject> objects_;
  std::filesystem::path base_dir_;
  bool ingest_enabled_ = true;
  std::unordered_map<std::string, VertexId> index_;
};

/// Reads a JSON-lines manifest. Each record:
///   {"id": "...", "modalities": {"<name>": {"inline": "..."} | {"path": "..."} | {"vector": [...]}}}
/// Blank lines are skipped. Line numbers in ParseError messages are 1-based.
KnowledgeBase ingest(const std::filesystem::path& manifest, const ModalitySchema& schema,
                     std::string name = {});

/// Same, from in-memory manifest text; file paths resolve against base_dir.
KnowledgeBase ingest_text(std::string_view manifest_text, const ModalitySchema& schema,
                          const std::filesystem::path& base_dir, std::string name = {});

/// Raw bytes of one payload (file contents for path payloads, UTF-8 for text,
/// a JSON array for inline vectors).
std::string payload_bytes(const KnowledgeBase& kb, const MultiModalObject& obj,
                          std::string_view modality);

struct LoadedVectors {
  std::vector<std::string> ids;
  std::vector<std::size_t> dims;
  EncodedVectors vectors;
};

/// Writes the "MQAV" file plus an id sidecar at `<path>.ids.json`.
/// Returns the number of bytes of the vectors file.
std::size_t save_vectors(const KnowledgeBase& kb, const EncodedVectors& vectors,
                         const std::filesystem::path& path);
LoadedVectors load_vectors(const std::filesystem::path& path);

std::filesystem::path ids_sidecar_path(const std::filesystem::path& vectors_path);

}  // namespace mqa
