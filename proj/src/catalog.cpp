#include "mqa/catalog.hpp"

#include "binary_io.hpp"
#include "mqa/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mqa {

namespace {

using nlohmann::json;

constexpr std::string_view kVectorsMagic = "MQAV";
constexpr std::uint32_t kVectorsVersion = 1;

Error parse_error(std::size_t line, const std::string& what) {
  return Error(ErrorCode::ParseError, "manifest line " + std::to_string(line) + ": " + what);
}

ModalityPayload parse_payload(const json& value, const ModalitySpec& spec,
                              const std::filesystem::path& base_dir, std::size_t line) {
  if (!value.is_object() || value.size() != 1)
    throw parse_error(line, "modality '" + spec.name +
                                "' must hold exactly one of inline, path, vector");
  const auto& [key, body] = *value.items().begin();
  if (key == "inline") {
    if (!body.is_string()) throw parse_error(line, "inline payload must be a string");
    return InlineText{body.get<std::string>()};
  }
  if (key == "path") {
    if (!body.is_string()) throw parse_error(line, "path payload must be a string");
    auto rel = body.get<std::string>();
    if (!std::filesystem::exists(base_dir / rel))
      throw parse_error(line, "referenced file does not exist: " + rel);
    return FilePath{std::move(rel)};
  }
  if (key == "vector") {
    if (!body.is_array()) throw parse_error(line, "vector payload must be an array");
    InlineVector vec;
    vec.values.reserve(body.size());
    for (const auto& x : body) {
      if (!x.is_number()) throw parse_error(line, "vector payload must contain numbers");
      vec.values.push_back(x.get<float>());
    }
    if (vec.values.size() != spec.dim)
      throw Error(ErrorCode::SchemaViolation,
                  "manifest line " + std::to_string(line) + ": modality '" + spec.name +
                      "' expects " + std::to_string(spec.dim) + " values, got " +
                      std::to_string(vec.values.size()));
    return vec;
  }
  throw parse_error(line, "unknown payload kind '" + key + "'");
}

}  // namespace

ModalitySchema parse_schema(std::string_view spec) {
  ModalitySchema schema;
  while (!spec.empty()) {
    auto comma = spec.find(',');
    auto item = spec.substr(0, comma);
    spec = comma == std::string_view::npos ? std::string_view{} : spec.substr(comma + 1);
    auto colon = item.find(':');
    if (colon == std::string_view::npos || colon == 0)
      throw Error(ErrorCode::InvalidArgument, "schema entry must be name:dim");
    std::size_t dim = 0;
    auto digits = item.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), dim);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || dim == 0)
      throw Error(ErrorCode::InvalidArgument, "invalid dimension in schema entry");
    schema.push_back({std::string(item.substr(0, colon)), dim});
  }
  return schema;
}

ModalityVectors<float> EncodedVectors::object(VertexId v) const {
  ModalityVectors<float> out;
  out.reserve(per_modality.size());
  for (const auto& m : per_modality) out.emplace_back(m.row(v).transpose());
  return out;
}

bool EncodedVectors::operator==(const EncodedVectors& other) const {
  if (per_modality.size() != other.per_modality.size()) return false;
  for (std::size_t m = 0; m < per_modality.size(); ++m) {
    const auto& a = per_modality[m];
    const auto& b = other.per_modality[m];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) != 0) return false;
  }
  return true;
}

KnowledgeBase::KnowledgeBase(std::string name, ModalitySchema modalities,
                             std::vector<MultiModalObject> objects,
                             std::filesystem::path base_dir, bool ingest_enabled)
    : name_(std::move(name)),
      modalities_(std::move(modalities)),
      objects_(std::move(objects)),
      base_dir_(std::move(base_dir)),
      ingest_enabled_(ingest_enabled) {
  index_.reserve(objects_.size());
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    const auto& obj = objects_[i];
    if (obj.id.empty()) throw Error(ErrorCode::SchemaViolation, "object id must be non-empty");
    if (!index_.emplace(obj.id, static_cast<VertexId>(i)).second)
      throw Error(ErrorCode::DuplicateId, obj.id);
    for (const auto& [modality, payload] : obj.payloads)
      if (!modality_index(modality))
        throw Error(ErrorCode::SchemaViolation,
                    "object '" + obj.id + "' uses undeclared modality '" + modality + "'");
  }
}

std::optional<VertexId> KnowledgeBase::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

VertexId KnowledgeBase::vertex_of(std::string_view id) const {
  if (auto v = find(id)) return *v;
  throw Error(ErrorCode::NotFound, std::string(id));
}

const MultiModalObject& KnowledgeBase::get_object(std::string_view id) const {
  return objects_[vertex_of(id)];
}

std::optional<std::size_t> KnowledgeBase::modality_index(std::string_view name) const {
  for (std::size_t m = 0; m < modalities_.size(); ++m)
    if (modalities_[m].name == name) return m;
  return std::nullopt;
}

std::vector<std::size_t> KnowledgeBase::coverage() const {
  std::vector<std::size_t> counts(modalities_.size(), 0);
  for (const auto& obj : objects_)
    for (const auto& [modality, payload] : obj.payloads) ++counts[*modality_index(modality)];
  return counts;
}

std::vector<std::string> KnowledgeBase::ids() const {
  std::vector<std::string> out;
  out.reserve(objects_.size());
  for (const auto& obj : objects_) out.push_back(obj.id);
  return out;
}

KnowledgeBase ingest_text(std::string_view manifest_text, const ModalitySchema& schema,
                          const std::filesystem::path& base_dir, std::string name) {
  std::vector<MultiModalObject> objects;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= manifest_text.size()) {
    auto eol = manifest_text.find('\n', pos);
    auto line = manifest_text.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                        : eol - pos);
    pos = eol == std::string_view::npos ? manifest_text.size() + 1 : eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw parse_error(line_no, e.what());
    }
    if (!record.is_object()) throw parse_error(line_no, "record must be a JSON object");
    auto id_it = record.find("id");
    if (id_it == record.end() || !id_it->is_string() || id_it->get<std::string>().empty())
      throw parse_error(line_no, "missing or empty string field 'id'");

    MultiModalObject obj;
    obj.id = id_it->get<std::string>();
    if (!seen.emplace(obj.id, line_no).second) throw Error(ErrorCode::DuplicateId, obj.id);

    if (auto mods = record.find("modalities"); mods != record.end()) {
      if (!mods->is_object()) throw parse_error(line_no, "'modalities' must be an object");
      for (const auto& [modality, value] : mods->items()) {
        auto spec = std::find_if(schema.begin(), schema.end(),
                                 [&](const ModalitySpec& s) { return s.name == modality; });
        if (spec == schema.end())
          throw Error(ErrorCode::SchemaViolation, "manifest line " + std::to_string(line_no) +
                                                      ": unknown modality '" + modality + "'");
        obj.payloads.emplace(modality, parse_payload(value, *spec, base_dir, line_no));
      }
    }
    objects.push_back(std::move(obj));
  }
  return KnowledgeBase(std::move(name), schema, std::move(objects), base_dir);
}

KnowledgeBase ingest(const std::filesystem::path& manifest, const ModalitySchema& schema,
                     std::string name) {
  if (!std::filesystem::exists(manifest))
    throw Error(ErrorCode::NotFound, "manifest not found: " + manifest.string());
  auto text = detail::read_file(manifest);
  if (name.empty()) name = manifest.stem().string();
  return ingest_text(text, schema, manifest.parent_path(), std::move(name));
}

std::string payload_bytes(const KnowledgeBase& kb, const MultiModalObject& obj,
                          std::string_view modality) {
  auto it = obj.payloads.find(std::string(modality));
  if (it == obj.payloads.end())
    throw Error(ErrorCode::NotFound, obj.id + "/" + std::string(modality));
  return std::visit(
      [&](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, InlineText>) {
          return p.text;
        } else if constexpr (std::is_same_v<T, InlineVector>) {
          return json(p.values).dump();
        } else {
          return detail::read_file(kb.base_dir() / p.path);
        }
      },
      it->second);
}

std::filesystem::path ids_sidecar_path(const std::filesystem::path& vectors_path) {
  auto p = vectors_path;
  p += ".ids.json";
  return p;
}

std::size_t save_vectors(const KnowledgeBase& kb, const EncodedVectors& vectors,
                         const std::filesystem::path& path) {
  const auto& schema = kb.modalities();
  if (vectors.modality_count() != schema.size())
    throw Error(ErrorCode::DimensionMismatch, "vector set does not match modality schema");
  for (std::size_t m = 0; m < schema.size(); ++m) {
    const auto& mat = vectors.per_modality[m];
    if (static_cast<std::size_t>(mat.rows()) != kb.size() ||
        static_cast<std::size_t>(mat.cols()) != schema[m].dim)
      throw Error(ErrorCode::DimensionMismatch,
                  "vectors for modality '" + schema[m].name + "' have the wrong shape");
  }

  detail::ByteWriter w;
  w.put_bytes(kVectorsMagic);
  w.put_u32(kVectorsVersion);
  w.put_u32(static_cast<std::uint32_t>(kb.size()));
  w.put_u32(static_cast<std::uint32_t>(schema.size()));
  for (const auto& s : schema) w.put_u32(static_cast<std::uint32_t>(s.dim));
  for (std::size_t i = 0; i < kb.size(); ++i)
    for (const auto& mat : vectors.per_modality)
      for (Eigen::Index j = 0; j < mat.cols(); ++j) w.put_f32(mat(i, j));

  detail::write_file(path, w.bytes());
  detail::write_file(ids_sidecar_path(path), json(kb.ids()).dump());
  return w.bytes().size();
}

LoadedVectors load_vectors(const std::filesystem::path& path) {
  auto data = detail::read_file(path);
  detail::ByteReader r(data, path.filename().string());
  if (r.bytes(4) != kVectorsMagic)
    throw Error(ErrorCode::FormatError, path.string() + ": bad magic, not a vectors file");
  if (auto version = r.u32(); version != kVectorsVersion)
    throw Error(ErrorCode::FormatError, "unsupported vectors version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  const std::uint32_t modality_count = r.u32();

  LoadedVectors out;
  std::uint64_t row_len = 0;
  for (std::uint32_t m = 0; m < modality_count; ++m) {
    out.dims.push_back(r.u32());
    row_len += out.dims.back();
  }
  if (r.remaining() != row_len * n * sizeof(float))
    throw Error(ErrorCode::FormatError,
                path.string() + ": body size does not match the declared object count");
  for (auto dim : out.dims) out.vectors.per_modality.emplace_back(n, dim);
  for (std::uint32_t i = 0; i < n; ++i)
    for (auto& mat : out.vectors.per_modality)
      for (Eigen::Index j = 0; j < mat.cols(); ++j) mat(i, j) = r.f32();
  r.expect_end();

  auto sidecar = ids_sidecar_path(path);
  if (std::filesystem::exists(sidecar)) {
    json ids;
    try {
      ids = json::parse(detail::read_file(sidecar));
      out.ids = ids.get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::FormatError, sidecar.string() + ": " + e.what());
    }
    if (out.ids.size() != n)
      throw Error(ErrorCode::FormatError, sidecar.string() + ": id count does not match vectors");
  }
  return out;
}

namespace detail {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

}  // namespace detail

}  // namespace mqa
