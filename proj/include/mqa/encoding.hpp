#pragma once

#include "mqa/catalog.hpp"
#include "mqa/types.hpp"

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace mqa {

enum class EncoderKind { HashNgram, ColorHist, PassthroughVector, ExternalHttp, JointMean };

std::string_view to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view name);

struct EncoderSpec {
  std::string id;
  std::string modality;
  EncoderKind kind = EncoderKind::HashNgram;
  std::size_t dimension = 0;
  std::optional<std::string> endpoint{};  // external-http only
  std::size_t max_in_flight = 4;
  std::chrono::milliseconds timeout{30'000};

  /// Throws InvalidConfig.
  void validate() const;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

/// Feature-hashing text encoder: lowercased tokens split on non-alphanumerics
/// (bytes >= 0x80 count as alphanumeric), each token plus its byte trigrams
/// hashed into `dim` signed buckets, then L2-normalised. Empty input gives zeros.
VectorXf encode_text_hash_ngram(std::string_view text, std::size_t dim);

/// Throws DimensionMismatch when the payload length differs from `dim`.
VectorXf encode_vector_passthrough(std::span<const float> payload, std::size_t dim);

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

/// Decodes binary/ASCII PPM (P6/P3) or PNG. Throws DecodeError.
RgbImage decode_image(std::string_view bytes);

constexpr std::size_t kColorHistDim = 48;

/// 16 bins per channel, concatenated R|G|B, L2-normalised.
VectorXf encode_image_hist(const RgbImage& image, std::size_t dim = kColorHistDim);

/// Element-wise mean after zero-padding every vector to the longest one.
template <typename Scalar>
Vector<Scalar> joint_encode(std::span<const Vector<Scalar>> vectors) {
  Eigen::Index len = 0;
  for (const auto& v : vectors) len = std::max(len, v.size());
  Vector<Scalar> out = Vector<Scalar>::Zero(len);
  for (const auto& v : vectors) out.head(v.size()) += v;
  if (!vectors.empty()) out /= static_cast<Scalar>(vectors.size());
  return out;
}

/// Input handed to an encoder after payload resolution.
struct RawBytes {
  std::string bytes;
};
using EncoderInput = std::variant<std::string, std::vector<float>, RawBytes>;

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual const EncoderSpec& spec() const = 0;
  virtual VectorXf encode(const EncoderInput& input) const = 0;
};

std::unique_ptr<Encoder> make_encoder(const EncoderSpec& spec);

/// One encoder per schema modality.
class EncoderRegistry {
 public:
  EncoderRegistry() = default;
  EncoderRegistry(const ModalitySchema& schema, const std::vector<EncoderSpec>& specs);

  /// Throws UnknownEncoder when the modality has no encoder.
  const Encoder& for_modality(std::string_view modality) const;
  bool has(std::string_view modality) const;
  const std::vector<EncoderSpec>& specs() const { return specs_; }

 private:
  std::vector<EncoderSpec> specs_;
  std::vector<std::pair<std::string, std::unique_ptr<Encoder>>> encoders_;
};

/// Default encoders for a schema: hash-ngram for modalities named "text",
/// color-hist for "image" with 48 dims, passthrough otherwise.
std::vector<EncoderSpec> default_encoder_specs(const ModalitySchema& schema);

/// Vectors for one object in schema order; modalities without a payload are zero.
ModalityVectors<float> encode_object(const KnowledgeBase& kb, const MultiModalObject& object,
                                     const EncoderRegistry& registry);

EncodedVectors encode_all(const KnowledgeBase& kb, const EncoderRegistry& registry);

/// An object previously returned to the user, reused as query input.
struct SelectedObject {
  std::string id;
};

using QueryInput = std::variant<std::string, RawBytes, std::vector<float>, SelectedObject>;

/// Per-modality query inputs. A SelectedObject reuses the stored vector of that
/// object for the modality it is attached to.
struct QueryContext {
  std::vector<std::pair<std::string, QueryInput>> inputs;

  bool empty() const { return inputs.empty(); }
};

ModalityVectors<float> encode_query(const KnowledgeBase& kb, const EncodedVectors& stored,
                                    const QueryContext& query, const EncoderRegistry& registry);

}  // namespace mqa
