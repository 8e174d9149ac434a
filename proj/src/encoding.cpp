#include "mqa/encoding.hpp"

#include "binary_io.hpp"
#include "mqa/error.hpp"
#include "url.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <semaphore>

namespace mqa {

namespace {

using nlohmann::json;

bool is_token_byte(unsigned char c) { return c >= 0x80 || std::isalnum(c) != 0; }

class HashNgramEncoder final : public Encoder {
 public:
  explicit HashNgramEncoder(EncoderSpec spec) : spec_(std::move(spec)) {}
  const EncoderSpec& spec() const override { return spec_; }
  VectorXf encode(const EncoderInput& input) const override {
    if (const auto* text = std::get_if<std::string>(&input))
      return encode_text_hash_ngram(*text, spec_.dimension);
    if (const auto* raw = std::get_if<RawBytes>(&input))
      return encode_text_hash_ngram(raw->bytes, spec_.dimension);
    throw Error(ErrorCode::InvalidArgument,
                "encoder '" + spec_.id + "' expects text, got a vector payload");
  }

 private:
  EncoderSpec spec_;
};

class ColorHistEncoder final : public Encoder {
 public:
  explicit ColorHistEncoder(EncoderSpec spec) : spec_(std::move(spec)) {}
  const EncoderSpec& spec() const override { return spec_; }
  VectorXf encode(const EncoderInput& input) const override {
    if (const auto* raw = std::get_if<RawBytes>(&input))
      return encode_image_hist(decode_image(raw->bytes), spec_.dimension);
    throw Error(ErrorCode::InvalidArgument,
                "encoder '" + spec_.id + "' expects an image file or upload");
  }

 private:
  EncoderSpec spec_;
};

class PassthroughEncoder final : public Encoder {
 public:
  explicit PassthroughEncoder(EncoderSpec spec) : spec_(std::move(spec)) {}
  const EncoderSpec& spec() const override { return spec_; }
  VectorXf encode(const EncoderInput& input) const override {
    if (const auto* vec = std::get_if<std::vector<float>>(&input))
      return encode_vector_passthrough(*vec, spec_.dimension);
    throw Error(ErrorCode::InvalidArgument,
                "encoder '" + spec_.id + "' expects an inline vector payload");
  }

 private:
  EncoderSpec spec_;
};

// POST {endpoint}/encode {"modality", "payload"} -> {"vector": [...]}.
// Binary payloads travel base64-encoded.
class ExternalHttpEncoder final : public Encoder {
 public:
  explicit ExternalHttpEncoder(EncoderSpec spec)
      : spec_(std::move(spec)),
        url_(detail::split_url(*spec_.endpoint)),
        slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, spec_.max_in_flight))) {}

  const EncoderSpec& spec() const override { return spec_; }

  VectorXf encode(const EncoderInput& input) const override {
    json body{{"modality", spec_.modality}};
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, RawBytes>)
            body["payload"] = httplib::detail::base64_encode(p.bytes);
          else
            body["payload"] = p;
        },
        input);

    slots_.acquire();
    httplib::Result res;
    {
      httplib::Client client(url_.origin);
      auto secs = std::chrono::duration_cast<std::chrono::seconds>(spec_.timeout);
      auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(spec_.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      res = client.Post(url_.path + "/encode", body.dump(), "application/json");
    }
    slots_.release();

    if (!res)
      throw Error(ErrorCode::EncoderUnavailable,
                  "encoder '" + spec_.id + "': " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw Error(ErrorCode::EncoderUnavailable,
                  "encoder '" + spec_.id + "' returned HTTP " + std::to_string(res->status));
    std::vector<float> values;
    try {
      values = json::parse(res->body).at("vector").get<std::vector<float>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::EncoderUnavailable,
                  "encoder '" + spec_.id + "' sent a malformed reply: " + e.what());
    }
    return encode_vector_passthrough(values, spec_.dimension);
  }

 private:
  EncoderSpec spec_;
  detail::SplitUrl url_;
  mutable std::counting_semaphore<1024> slots_;
};

RgbImage decode_ppm(std::string_view bytes) {
  std::size_t pos = 2;
  const bool ascii = bytes[1] == '3';
  auto next_token = [&]() -> std::size_t {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
      throw Error(ErrorCode::DecodeError, "malformed PPM header");
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > (1u << 24)) throw Error(ErrorCode::DecodeError, "PPM value out of range");
      ++pos;
    }
    return value;
  };

  RgbImage img;
  img.width = next_token();
  img.height = next_token();
  const std::size_t maxval = next_token();
  if (maxval == 0 || maxval > 255) throw Error(ErrorCode::DecodeError, "unsupported PPM maxval");
  const std::size_t count = img.width * img.height * 3;
  img.pixels.resize(count);
  auto scale = [&](std::size_t v) {
    if (v > maxval) throw Error(ErrorCode::DecodeError, "PPM sample exceeds maxval");
    return static_cast<std::uint8_t>(v * 255 / maxval);
  };
  if (ascii) {
    for (std::size_t i = 0; i < count; ++i) img.pixels[i] = scale(next_token());
  } else {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + count) throw Error(ErrorCode::DecodeError, "truncated PPM raster");
    for (std::size_t i = 0; i < count; ++i)
      img.pixels[i] = scale(static_cast<unsigned char>(bytes[pos + i]));
  }
  return img;
}

RgbImage decode_png(std::string_view bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw Error(ErrorCode::DecodeError, std::string("PNG: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  RgbImage img;
  img.width = image.width;
  img.height = image.height;
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::DecodeError, "PNG: " + msg);
  }
  return img;
}

}  // namespace

std::string_view to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::HashNgram: return "hash-ngram";
    case EncoderKind::ColorHist: return "color-hist";
    case EncoderKind::PassthroughVector: return "passthrough-vector";
    case EncoderKind::ExternalHttp: return "external-http";
    case EncoderKind::JointMean: return "joint-mean";
  }
  return "unknown";
}

EncoderKind parse_encoder_kind(std::string_view name) {
  for (auto kind : {EncoderKind::HashNgram, EncoderKind::ColorHist, EncoderKind::PassthroughVector,
                    EncoderKind::ExternalHttp, EncoderKind::JointMean})
    if (to_string(kind) == name) return kind;
  throw Error(ErrorCode::UnknownEncoder, "unknown encoder kind '" + std::string(name) + "'");
}

void EncoderSpec::validate() const {
  if (dimension == 0)
    throw Error(ErrorCode::InvalidConfig, "encoder '" + id + "': dimension must be positive",
                "dimension");
  if (kind == EncoderKind::ExternalHttp && (!endpoint || endpoint->empty()))
    throw Error(ErrorCode::InvalidConfig, "encoder '" + id + "': external-http needs an endpoint",
                "endpoint");
  if (kind == EncoderKind::ColorHist && dimension != kColorHistDim)
    throw Error(ErrorCode::InvalidConfig, "encoder '" + id + "': color-hist is 48-dimensional",
                "dimension");
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

VectorXf encode_text_hash_ngram(std::string_view text, std::size_t dim) {
  if (dim == 0) throw Error(ErrorCode::InvalidArgument, "dimension must be positive");
  VectorXd acc = VectorXd::Zero(static_cast<Eigen::Index>(dim));
  auto add = [&](std::string_view feature) {
    const auto h = fnv1a64(feature);
    acc[static_cast<Eigen::Index>(h % dim)] += (h >> 63) == 0 ? 1.0 : -1.0;
  };

  std::string lowered(text);
  for (auto& c : lowered)
    if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(c));

  std::size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && !is_token_byte(static_cast<unsigned char>(lowered[i]))) ++i;
    std::size_t start = i;
    while (i < lowered.size() && is_token_byte(static_cast<unsigned char>(lowered[i]))) ++i;
    if (i == start) continue;
    std::string_view token(lowered.data() + start, i - start);
    add(token);
    for (std::size_t j = 0; j + 3 <= token.size(); ++j) add(token.substr(j, 3));
  }

  const double norm = acc.norm();
  if (norm > 0) acc /= norm;
  return acc.cast<float>();
}

VectorXf encode_vector_passthrough(std::span<const float> payload, std::size_t dim) {
  if (payload.size() != dim)
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(dim) +
                                                  " values, got " + std::to_string(payload.size()));
  return Eigen::Map<const VectorXf>(payload.data(), static_cast<Eigen::Index>(dim));
}

RgbImage decode_image(std::string_view bytes) {
  static constexpr std::string_view kPngSig = "\x89PNG\r\n\x1a\n";
  RgbImage img;
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '3'))
    img = decode_ppm(bytes);
  else if (bytes.substr(0, kPngSig.size()) == kPngSig)
    img = decode_png(bytes);
  else
    throw Error(ErrorCode::DecodeError, "unrecognised image format (expected PPM or PNG)");
  if (img.width == 0 || img.height == 0) throw Error(ErrorCode::DecodeError, "empty image");
  return img;
}

VectorXf encode_image_hist(const RgbImage& image, std::size_t dim) {
  if (dim != kColorHistDim)
    throw Error(ErrorCode::DimensionMismatch, "color histogram is 48-dimensional");
  const std::size_t count = image.width * image.height;
  if (count == 0 || image.pixels.size() != count * 3)
    throw Error(ErrorCode::DecodeError, "raster size does not match image dimensions");
  VectorXd hist = VectorXd::Zero(kColorHistDim);
  for (std::size_t p = 0; p < count; ++p)
    for (std::size_t ch = 0; ch < 3; ++ch)
      hist[static_cast<Eigen::Index>(ch * 16 + (image.pixels[p * 3 + ch] >> 4))] += 1.0;
  hist.normalize();
  return hist.cast<float>();
}

std::unique_ptr<Encoder> make_encoder(const EncoderSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case EncoderKind::HashNgram: return std::make_unique<HashNgramEncoder>(spec);
    case EncoderKind::ColorHist: return std::make_unique<ColorHistEncoder>(spec);
    case EncoderKind::PassthroughVector: return std::make_unique<PassthroughEncoder>(spec);
    case EncoderKind::ExternalHttp: return std::make_unique<ExternalHttpEncoder>(spec);
    case EncoderKind::JointMean: break;
  }
  throw Error(ErrorCode::UnknownEncoder,
              "encoder '" + spec.id + "': joint-mean combines modalities and has no payload form");
}

EncoderRegistry::EncoderRegistry(const ModalitySchema& schema,
                                 const std::vector<EncoderSpec>& specs)
    : specs_(specs) {
  for (const auto& spec : specs) {
    if (spec.kind == EncoderKind::JointMean) continue;
    auto it = std::find_if(schema.begin(), schema.end(),
                           [&](const ModalitySpec& m) { return m.name == spec.modality; });
    if (it == schema.end())
      throw Error(ErrorCode::InvalidConfig,
                  "encoder '" + spec.id + "' targets unknown modality '" + spec.modality + "'",
                  "encoders");
    if (it->dim != spec.dimension)
      throw Error(ErrorCode::InvalidConfig,
                  "encoder '" + spec.id + "' dimension does not match modality '" +
                      spec.modality + "'",
                  "encoders");
    if (has(spec.modality))
      throw Error(ErrorCode::InvalidConfig,
                  "modality '" + spec.modality + "' has more than one encoder", "encoders");
    encoders_.emplace_back(spec.modality, make_encoder(spec));
  }
}

bool EncoderRegistry::has(std::string_view modality) const {
  return std::any_of(encoders_.begin(), encoders_.end(),
                     [&](const auto& e) { return e.first == modality; });
}

const Encoder& EncoderRegistry::for_modality(std::string_view modality) const {
  for (const auto& [name, enc] : encoders_)
    if (name == modality) return *enc;
  throw Error(ErrorCode::UnknownEncoder,
              "no encoder registered for modality '" + std::string(modality) + "'");
}

std::vector<EncoderSpec> default_encoder_specs(const ModalitySchema& schema) {
  std::vector<EncoderSpec> specs;
  for (const auto& m : schema) {
    EncoderSpec s;
    s.modality = m.name;
    s.dimension = m.dim;
    if (m.name == "text")
      s.kind = EncoderKind::HashNgram;
    else if (m.name == "image" && m.dim == kColorHistDim)
      s.kind = EncoderKind::ColorHist;
    else
      s.kind = EncoderKind::PassthroughVector;
    s.id = m.name + "-" + std::string(to_string(s.kind));
    specs.push_back(std::move(s));
  }
  return specs;
}

namespace {

EncoderInput resolve_payload(const KnowledgeBase& kb, const ModalityPayload& payload) {
  return std::visit(
      [&](const auto& p) -> EncoderInput {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, InlineText>)
          return p.text;
        else if constexpr (std::is_same_v<T, InlineVector>)
          return p.values;
        else
          return RawBytes{detail::read_file(kb.base_dir() / p.path)};
      },
      payload);
}

}  // namespace

ModalityVectors<float> encode_object(const KnowledgeBase& kb, const MultiModalObject& object,
                                     const EncoderRegistry& registry) {
  ModalityVectors<float> out;
  for (const auto& m : kb.modalities()) {
    const auto& encoder = registry.for_modality(m.name);
    auto it = object.payloads.find(m.name);
    if (it == object.payloads.end())
      out.push_back(VectorXf::Zero(static_cast<Eigen::Index>(m.dim)));
    else
      out.push_back(encoder.encode(resolve_payload(kb, it->second)));
  }
  return out;
}

EncodedVectors encode_all(const KnowledgeBase& kb, const EncoderRegistry& registry) {
  EncodedVectors out;
  for (const auto& m : kb.modalities())
    out.per_modality.emplace_back(static_cast<Eigen::Index>(kb.size()),
                                  static_cast<Eigen::Index>(m.dim));
  for (std::size_t i = 0; i < kb.size(); ++i) {
    auto vecs = encode_object(kb, kb.objects()[i], registry);
    for (std::size_t m = 0; m < vecs.size(); ++m)
      out.per_modality[m].row(static_cast<Eigen::Index>(i)) = vecs[m].transpose();
  }
  return out;
}

ModalityVectors<float> encode_query(const KnowledgeBase& kb, const EncodedVectors& stored,
                                    const QueryContext& query, const EncoderRegistry& registry) {
  if (query.empty())
    throw Error(ErrorCode::InvalidArgument, "query needs at least one modality input");
  const auto& schema = kb.modalities();
  ModalityVectors<float> out;
  for (const auto& m : schema) out.push_back(VectorXf::Zero(static_cast<Eigen::Index>(m.dim)));

  for (const auto& [modality, input] : query.inputs) {
    auto idx = kb.modality_index(modality);
    if (!idx)
      throw Error(ErrorCode::SchemaViolation, "query uses unknown modality '" + modality + "'");
    if (const auto* sel = std::get_if<SelectedObject>(&input)) {
      const auto v = kb.vertex_of(sel->id);
      if (stored.modality_count() != schema.size() || v >= stored.size())
        throw Error(ErrorCode::IndexNotBuilt, "stored vectors are not available");
      out[*idx] = stored.per_modality[*idx].row(v).transpose();
      continue;
    }
    const auto& encoder = registry.for_modality(modality);
    out[*idx] = std::visit(
        [&](const auto& p) -> VectorXf {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, SelectedObject>)
            return {};
          else
            return encoder.encode(EncoderInput{p});
        },
        input);
  }
  return out;
}

}  // namespace mqa
