#include "mqa/encoding.hpp"
#include "mqa/error.hpp"
#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <map>

using namespace mqa;

namespace {

// Reference FNV-1a 64, written out from the published parameters.
std::uint64_t ref_fnv(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < s.size(); ++i) {
    h = h ^ static_cast<std::uint8_t>(s[i]);
    h = h * 1099511628211ULL;
  }
  return h;
}

// Reference features for ASCII text: lowercase alnum runs, each run and its trigrams.
std::vector<std::string> ref_features(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text + " ") {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    out.push_back(t);
    for (std::size_t i = 0; i + 2 < t.size(); ++i) out.push_back(t.substr(i, 3));
  }
  return out;
}

std::vector<double> ref_hash_encode(const std::string& text, std::size_t d) {
  std::vector<double> v(d, 0.0);
  for (const auto& f : ref_features(text)) {
    auto h = ref_fnv(f);
    v[h % d] += (h & (1ULL << 63)) ? -1.0 : 1.0;
  }
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0)
    for (double& x : v) x /= n;
  return v;
}

const std::string kTwoPixelPng(
    "\x89\x50\x4e\x47\x0d\x0a\x1a\x0a\x00\x00\x00\x0d\x49\x48\x44\x52\x00\x00\x00\x02\x00\x00"
    "\x00\x01\x08\x02\x00\x00\x00\x7b\x40\xe8\xdd\x00\x00\x00\x0f\x49\x44\x41\x54\x78\x9c\x63"
    "\x60\x60\x60\xf8\xff\xff\x3f\x00\x06\x01\x02\xfe\x02\xb2\x39\xae\x00\x00\x00\x00\x49\x45"
    "\x4e\x44\xae\x42\x60\x82",
    72);

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an mqa::Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_SUITE("encoding") {
  TEST_CASE("fnv1a64 matches published test vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  }

  TEST_CASE("hash-ngram: empty text is the zero vector") {
    auto v = encode_text_hash_ngram("", 16);
    CHECK(v.size() == 16);
    CHECK(v.isZero(0));
    CHECK(encode_text_hash_ngram("  ,;! ", 16).isZero(0));
  }

  TEST_CASE("hash-ngram: deterministic") {
    CHECK(encode_text_hash_ngram("A red fox", 64) == encode_text_hash_ngram("A red fox", 64));
  }

  TEST_CASE("hash-ngram: 'cat' matches the independent oracle") {
    auto v = encode_text_hash_ngram("cat", 64);
    auto expect = ref_hash_encode("cat", 64);
    CHECK(std::abs(v.norm() - 1.0f) < 1e-6f);
    for (std::size_t i = 0; i < 64; ++i) CHECK(v[static_cast<Eigen::Index>(i)] == doctest::Approx(expect[i]).epsilon(1e-6));
    // "cat" is its own only trigram, so one bucket carries all the mass.
    auto h = ref_fnv("cat");
    CHECK(std::abs(v[static_cast<Eigen::Index>(h % 64)]) == doctest::Approx(1.0));
  }

  TEST_CASE("hash-ngram: longer ASCII text matches the oracle") {
    for (const std::string text : {"Hello, World!", "multi-modal QA over 3 modalities",
                                   "The quick brown fox jumps over the lazy dog"}) {
      for (std::size_t d : {7u, 64u, 256u}) {
        auto v = encode_text_hash_ngram(text, d);
        auto expect = ref_hash_encode(text, d);
        for (std::size_t i = 0; i < d; ++i)
          CHECK(v[static_cast<Eigen::Index>(i)] == doctest::Approx(expect[i]).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("hash-ngram: case-insensitive, unit norm") {
    auto a = encode_text_hash_ngram("Sunset LAKE", 32);
    CHECK(a == encode_text_hash_ngram("sunset lake", 32));
    CHECK(std::abs(a.norm() - 1.0f) < 1e-6f);
  }

  TEST_CASE("passthrough returns the payload or rejects the length") {
    std::vector<float> p{1, 2, 3};
    auto v = encode_vector_passthrough(p, 3);
    CHECK(v == (VectorXf(3) << 1, 2, 3).finished());
    std::vector<float> short_p{1, 2};
    CHECK(code_of([&] { encode_vector_passthrough(short_p, 3); }) == ErrorCode::DimensionMismatch);
  }

  TEST_CASE("passthrough after vector save/load is bit-identical") {
    test::TempDir dir;
    auto kb = ingest_text(R"({"id":"a","modalities":{"v":{"vector":[0.1,-3.5,1e-30]}}})",
                          ModalitySchema{{"v", 3}}, {});
    EncoderRegistry reg(kb.modalities(), default_encoder_specs(kb.modalities()));
    auto vecs = encode_all(kb, reg);
    save_vectors(kb, vecs, dir / "v.mqav");
    auto loaded = load_vectors(dir / "v.mqav");
    const RowMatrixXf row = loaded.vectors.per_modality[0].row(0);
    std::vector<float> raw(row.data(), row.data() + 3);
    auto again = encode_vector_passthrough(raw, 3);
    CHECK(std::memcmp(again.data(), vecs.per_modality[0].data(), 3 * sizeof(float)) == 0);
  }

  TEST_CASE("color-hist: all-black image puts 1/sqrt(3) at bins 0, 16, 32") {
    RgbImage img{4, 3, std::vector<std::uint8_t>(4 * 3 * 3, 0)};
    auto v = encode_image_hist(img);
    REQUIRE(v.size() == 48);
    const float s = 1.0f / std::sqrt(3.0f);
    for (Eigen::Index i = 0; i < 48; ++i)
      CHECK(v[i] == doctest::Approx((i == 0 || i == 16 || i == 32) ? s : 0.0f));
    CHECK(encode_image_hist(img) == v);
  }

  TEST_CASE("color-hist: black and white pixels split mass between bins 0 and 15") {
    RgbImage img{2, 1, {0, 0, 0, 255, 255, 255}};
    auto v = encode_image_hist(img);
    for (int ch = 0; ch < 3; ++ch) {
      CHECK(v[ch * 16] == doctest::Approx(1.0 / std::sqrt(6.0)));
      CHECK(v[ch * 16 + 15] == doctest::Approx(1.0 / std::sqrt(6.0)));
    }
    CHECK(v.norm() == doctest::Approx(1.0));
  }

  TEST_CASE("decode_image reads P6, P3 and PNG") {
    auto p6 = decode_image(test::make_ppm(2, 1, {0, 0, 0, 255, 255, 255}));
    CHECK(p6.width == 2);
    CHECK(p6.pixels == std::vector<std::uint8_t>{0, 0, 0, 255, 255, 255});
    auto p3 = decode_image("P3\n# comment\n2 1\n255\n0 0 0  255 255 255\n");
    CHECK(p3.pixels == p6.pixels);
    auto png = decode_image(kTwoPixelPng);
    CHECK(png.width == 2);
    CHECK(png.height == 1);
    CHECK(png.pixels == p6.pixels);
  }

  TEST_CASE("decode_image rejects garbage and truncation") {
    CHECK(code_of([] { decode_image("GIF89a...."); }) == ErrorCode::DecodeError);
    CHECK(code_of([] { decode_image("P6\n2 2\n255\nabc"); }) == ErrorCode::DecodeError);
    CHECK(code_of([] { decode_image(kTwoPixelPng.substr(0, 40)); }) == ErrorCode::DecodeError);
  }

  TEST_CASE("joint_encode is the padded mean") {
    std::vector<VectorXf> one{(VectorXf(2) << 3, 4).finished()};
    CHECK(joint_encode<float>(one) == one[0]);
    std::vector<VectorXf> two{(VectorXf(2) << 2, 0).finished(), (VectorXf(2) << 0, 2).finished()};
    CHECK(joint_encode<float>(two) == (VectorXf(2) << 1, 1).finished());
    std::vector<VectorXd> ragged{(VectorXd(3) << 1, 0, 0).finished(), (VectorXd(2) << 1, 1).finished()};
    CHECK(joint_encode<double>(ragged) == (VectorXd(3) << 1, 0.5, 0).finished());
  }

  TEST_CASE("encoder spec validation") {
    EncoderSpec s{"x", "text", EncoderKind::HashNgram, 0};
    CHECK(code_of([&] { s.validate(); }) == ErrorCode::InvalidConfig);
    EncoderSpec ext{"e", "image", EncoderKind::ExternalHttp, 8};
    CHECK(code_of([&] { ext.validate(); }) == ErrorCode::InvalidConfig);
    EncoderSpec hist{"h", "image", EncoderKind::ColorHist, 32};
    CHECK(code_of([&] { hist.validate(); }) == ErrorCode::InvalidConfig);
    CHECK(parse_encoder_kind("color-hist") == EncoderKind::ColorHist);
    CHECK(code_of([] { parse_encoder_kind("clip"); }) == ErrorCode::UnknownEncoder);
  }

  TEST_CASE("encode_object composes the per-encoder oracles; missing payloads are zero") {
    const ModalitySchema schema{{"text", 32}, {"v", 2}};
    auto kb = ingest_text(
        R"({"id":"full","modalities":{"text":{"inline":"red fox"},"v":{"vector":[0.5,-1]}}})"
        "\n"
        R"({"id":"vec-only","modalities":{"v":{"vector":[1,2]}}})",
        schema, {});
    EncoderRegistry reg(schema, default_encoder_specs(schema));
    auto full = encode_object(kb, kb.get_object("full"), reg);
    auto expect = ref_hash_encode("red fox", 32);
    for (Eigen::Index i = 0; i < 32; ++i)
      CHECK(full[0][i] == doctest::Approx(expect[static_cast<std::size_t>(i)]).epsilon(1e-6));
    CHECK(full[1] == (VectorXf(2) << 0.5f, -1.0f).finished());

    auto partial = encode_object(kb, kb.get_object("vec-only"), reg);
    CHECK(partial[0].isZero(0));
    CHECK(partial[0].size() == 32);
  }

  TEST_CASE("encode_query: a selected object reuses its stored vector bit-exactly") {
    const ModalitySchema schema{{"text", 16}, {"image", 48}};
    std::string manifest;
    std::vector<std::uint8_t> px;
    for (int i = 0; i < 3; ++i) {
      manifest += R"({"id":"o)" + std::to_string(i) + R"(","modalities":{"text":{"inline":"item )" +
                  std::to_string(i) + R"("}}})" + "\n";
    }
    auto kb = ingest_text(manifest, schema, {});
    EncoderRegistry reg(schema, default_encoder_specs(schema));
    auto stored = encode_all(kb, reg);
    stored.per_modality[1] = test::random_matrix(3, 48, 9);

    QueryContext q;
    q.inputs.emplace_back("text", std::string("new words"));
    q.inputs.emplace_back("image", SelectedObject{"o2"});
    auto v = encode_query(kb, stored, q, reg);
    const VectorXf want = stored.per_modality[1].row(2).transpose();
    CHECK(std::memcmp(v[1].data(), want.data(), 48 * sizeof(float)) == 0);
    CHECK(v[0] == encode_text_hash_ngram("new words", 16));

    QueryContext missing;
    missing.inputs.emplace_back("image", SelectedObject{"nope"});
    CHECK(code_of([&] { encode_query(kb, stored, missing, reg); }) == ErrorCode::NotFound);
    CHECK(code_of([&] { encode_query(kb, stored, QueryContext{}, reg); }) ==
          ErrorCode::InvalidArgument);
  }

  TEST_CASE("registry without an encoder for a modality raises UnknownEncoder") {
    const ModalitySchema schema{{"text", 16}, {"v", 2}};
    EncoderRegistry reg(schema, {EncoderSpec{"t", "text", EncoderKind::HashNgram, 16}});
    CHECK(code_of([&] { reg.for_modality("v"); }) == ErrorCode::UnknownEncoder);
  }

  TEST_CASE("external encoder posts the payload and bounds concurrency") {
    test::StubServer stub;
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};
    stub.server().Post("/enc/encode", [&](const httplib::Request& req, httplib::Response& res) {
      int now = ++in_flight;
      int prev = peak.load();
      while (now > prev && !peak.compare_exchange_weak(prev, now)) {
      }
      stub.record(req);
      std::this_thread::sleep_for(std::chrono::milliseconds(30));
      --in_flight;
      res.set_content(R"({"vector":[1,2,3]})", "application/json");
    });
    stub.server().Post("/broken/encode", [](const httplib::Request&, httplib::Response& res) {
      res.status = 500;
    });
    stub.start();

    EncoderSpec spec{"ext", "text", EncoderKind::ExternalHttp, 3, stub.url("/enc/"), 2};
    auto enc = make_encoder(spec);
    CHECK(enc->encode(std::string("hi")) == (VectorXf(3) << 1, 2, 3).finished());
    auto body = nlohmann::json::parse(stub.bodies().at(0));
    CHECK(body["modality"] == "text");
    CHECK(body["payload"] == "hi");

    std::vector<std::thread> threads;
    for (int i = 0; i < 6; ++i) threads.emplace_back([&] { enc->encode(RawBytes{"\x01\x02"}); });
    for (auto& t : threads) t.join();
    CHECK(peak.load() <= 2);
    CHECK(nlohmann::json::parse(stub.bodies().back())["payload"] == "AQI=");

    EncoderSpec broken{"b", "text", EncoderKind::ExternalHttp, 3, stub.url("/broken")};
    CHECK(code_of([&] { make_encoder(broken)->encode(std::string("x")); }) ==
          ErrorCode::EncoderUnavailable);
    EncoderSpec wrong_dim{"w", "text", EncoderKind::ExternalHttp, 4, stub.url("/enc")};
    CHECK(code_of([&] { make_encoder(wrong_dim)->encode(std::string("x")); }) ==
          ErrorCode::DimensionMismatch);
    EncoderSpec dead{"d", "text", EncoderKind::ExternalHttp, 3, test::dead_endpoint()};
    CHECK(code_of([&] { make_encoder(dead)->encode(std::string("x")); }) ==
          ErrorCode::EncoderUnavailable);
  }
}
