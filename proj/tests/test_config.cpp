#include "mqa/config.hpp"
#include "mqa/error.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace mqa;
using nlohmann::json;

namespace {

json base_config() {
  return json::parse(R"({
    "knowledge_base": {"name": "kb", "manifest": "manifest.jsonl",
                       "modalities": [{"name": "text", "dim": 16}, {"name": "image", "dim": 48}]},
    "weights": {"mode": "uniform"},
    "index": {"R": 8, "L_build": 16},
    "retrieval": {"k": 5, "L": 20},
    "llm": {"provider": "template"}
  })");
}

std::string rejected_field(const json& doc) {
  try {
    parse_config(doc, "/base");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
    return e.field();
  }
  FAIL("expected InvalidConfig");
  return {};
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("valid config parses with defaults") {
    auto c = parse_config(base_config(), "/base");
    CHECK(c.knowledge_base.manifest == std::filesystem::path("/base/manifest.jsonl"));
    CHECK(c.knowledge_base.modalities.size() == 2);
    CHECK(c.index.build.degree_bound == 8);
    CHECK(c.index.frameworks.size() == 3);
    CHECK(c.retrieval.beam == 20);
    CHECK(c.llm.provider == LlmProvider::Template);

    auto enc = effective_encoders(c);
    REQUIRE(enc.size() == 2);
    CHECK(enc[0].kind == EncoderKind::HashNgram);
    CHECK(enc[1].kind == EncoderKind::ColorHist);
    auto routing = effective_routing(c);
    CHECK(routing.text_modality == "text");
    CHECK(routing.image_modality == "image");

    auto round = parse_config(to_json(c), "/");
    CHECK(round.knowledge_base.manifest == c.knowledge_base.manifest);
    CHECK(round.index.build.seed == c.index.build.seed);
  }

  TEST_CASE("string schema form and name defaulting") {
    auto doc = base_config();
    doc["knowledge_base"]["modalities"] = "caption:8,pixels:48";
    doc["knowledge_base"].erase("name");
    doc["knowledge_base"]["manifest"] = "toy/manifest.jsonl";
    auto c = parse_config(doc, "/data");
    CHECK(c.knowledge_base.name == "toy");
    CHECK(c.knowledge_base.modalities[1].name == "pixels");
  }

  TEST_CASE("field-level rejection") {
    auto check = [](auto mutate, const std::string& field) {
      auto doc = base_config();
      mutate(doc);
      CHECK(rejected_field(doc) == field);
    };
    check([](json& d) { d["weights"] = {{"mode", "manual"}, {"values", {0.7, 0.3, 0.1}}}; },
          "weights.values");
    check([](json& d) { d["weights"] = {{"mode", "manual"}, {"values", {0.7, 0.4}}}; },
          "weights.values");
    check([](json& d) { d["weights"] = {{"mode", "manual"}, {"values", {1.2, -0.2}}}; },
          "weights.values");
    check([](json& d) { d["weights"]["mode"] = "learned"; }, "weights.triplets");
    check([](json& d) { d["weights"]["mode"] = "random"; }, "weights.mode");
    check([](json& d) { d["llm"]["temperature"] = 3.0; }, "llm.temperature");
    check([](json& d) { d["llm"]["provider"] = "external"; }, "llm.endpoint");
    check([](json& d) { d["llm"]["provider"] = "oracle"; }, "llm.provider");
    check([](json& d) { d["index"]["R"] = 1; }, "index.R");
    check([](json& d) { d["index"]["L_build"] = 4; }, "index.L_build");
    check([](json& d) { d["index"]["alpha"] = 0.5; }, "index.alpha");
    check([](json& d) { d["index"]["frameworks"] = json::array(); }, "index.frameworks");
    check([](json& d) { d["index"]["frameworks"] = {"MUST", "XYZ"}; }, "index.frameworks");
    check([](json& d) { d["retrieval"]["L"] = 2; }, "retrieval.L");
    check([](json& d) { d["retrieval"]["k"] = 0; }, "retrieval.k");
    check(
        [](json& d) {
          d["index"]["frameworks"] = {"MUST"};
          d["retrieval"]["framework"] = "JE";
        },
        "retrieval.framework");
    check([](json& d) { d["knowledge_base"]["modalities"][1]["dim"] = 0; },
          "knowledge_base.modalities[1].dim");
    check([](json& d) { d["knowledge_base"]["modalities"][1]["name"] = "text"; },
          "knowledge_base.modalities[1].name");
    check([](json& d) { d["knowledge_base"].erase("manifest"); }, "knowledge_base.manifest");
    check([](json& d) { d["knowledge_base"]["name"] = 5; }, "knowledge_base.name");
    check([](json& d) { d["encoders"] = {{{"modality", "audio"}, {"kind", "hash-ngram"}, {"dimension", 16}}}; },
          "encoders[0].modality");
    check([](json& d) { d["encoders"] = {{{"modality", "text"}, {"kind", "hash-ngram"}, {"dimension", 12}}}; },
          "encoders[0].dimension");
    check([](json& d) { d["encoders"] = {{{"modality", "text"}, {"kind", "magic"}}}; },
          "encoders[0].kind");
    check([](json& d) { d["query"] = {{"image_modality", "sound"}}; }, "query.image_modality");
  }

  TEST_CASE("ingest disabled skips knowledge-base checks") {
    json doc = {{"knowledge_base", {{"ingest_enabled", false}}}, {"llm", {{"provider", "template"}}}};
    auto c = parse_config(doc);
    CHECK_FALSE(c.knowledge_base.ingest_enabled);
    doc["llm"]["temperature"] = -1;
    CHECK(rejected_field(doc) == "llm.temperature");
  }

  TEST_CASE("load_config resolves relative to the file") {
    test::TempDir dir;
    std::filesystem::create_directories(dir / "kb");
    test::write_text(dir / "kb/config.json", base_config().dump());
    auto c = load_config(dir / "kb/config.json");
    CHECK(c.knowledge_base.manifest == dir.path() / "kb" / "manifest.jsonl");
    test::write_text(dir / "bad.json", "{ not json");
    try {
      load_config(dir / "bad.json");
      FAIL("expected ParseError");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ParseError);
    }
  }
}
