#include "mqa/error.hpp"
#include "mqa/llm.hpp"
#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

using namespace mqa;
using nlohmann::json;

namespace {

json completion(const std::string& content) {
  return {{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})}};
}

}  // namespace

TEST_SUITE("llm") {
  TEST_CASE("template answer") {
    CHECK(render_template_answer("red fox", {}) == "No results found for: red fox");
    std::vector<AnswerItem> items{{"fox", 0.25f, ""}, {"cat", 1.5f, "a cat"}};
    CHECK(render_template_answer("red fox", items) ==
          "Found 2 results for: red fox\n1. fox (distance 0.250000)\n2. cat (distance 1.500000)");
    CHECK(generate_answer("red fox", items, nullptr) == render_template_answer("red fox", items));
  }

  TEST_CASE("serialized results") {
    std::vector<AnswerItem> items{{"fox", 0.25f, ""}, {"cat", 1.5f, "a cat"}};
    auto text = serialize_results(items);
    REQUIRE(text.rfind("Retrieved results:\n", 0) == 0);
    auto arr = json::parse(text.substr(std::string("Retrieved results:\n").size()));
    REQUIRE(arr.size() == 2);
    CHECK(arr[0]["rank"] == 1);
    CHECK(arr[0]["id"] == "fox");
    CHECK_FALSE(arr[0].contains("summary"));
    CHECK(arr[1]["summary"] == "a cat");
    CHECK(arr[1]["distance"].get<double>() == doctest::Approx(1.5));

    auto msgs = answer_messages("red fox", items);
    REQUIRE(msgs.size() == 2);
    CHECK(msgs[0] == ChatMessage{"user", "red fox"});
    CHECK(msgs[1] == ChatMessage{"user", text});
  }

  TEST_CASE("chat completion client posts both messages in order") {
    test::StubServer stub;
    stub.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
      stub.record(req);
      auto body = json::parse(req.body);
      res.set_content(completion("echo: " + body["messages"][0]["content"].get<std::string>()).dump(),
                      "application/json");
    });
    stub.start();

    ChatCompletionOptions opts;
    opts.endpoint = stub.url("/v1/chat/completions");
    opts.model = "test-model";
    opts.temperature = 0.2;
    opts.api_key = "sekret";
    ChatCompletionClient client(opts);
    std::vector<AnswerItem> items{{"fox", 0.5f, ""}};
    CHECK(generate_answer("where is the fox", items, &client) == "echo: where is the fox");

    auto bodies = stub.bodies();
    REQUIRE(bodies.size() == 1);
    auto sent = json::parse(bodies[0]);
    CHECK(sent["model"] == "test-model");
    CHECK(sent["temperature"].get<double>() == doctest::Approx(0.2));
    REQUIRE(sent["messages"].size() == 2);
    CHECK(sent["messages"][0]["content"] == "where is the fox");
    CHECK(sent["messages"][1]["content"] == serialize_results(items));
    CHECK(stub.auth_headers() == std::vector<std::string>{"Bearer sekret"});
  }

  TEST_CASE("chat completion failures raise LLMUnavailable") {
    test::StubServer stub;
    stub.server().Post("/500", [](const httplib::Request&, httplib::Response& res) {
      res.status = 500;
      res.set_content("boom", "text/plain");
    });
    stub.server().Post("/garbage", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("{\"choices\":[]}", "application/json");
    });
    stub.start();

    for (const auto& endpoint : {stub.url("/500"), stub.url("/garbage"), test::dead_endpoint()}) {
      ChatCompletionOptions opts;
      opts.endpoint = endpoint;
      opts.timeout = std::chrono::milliseconds(2000);
      ChatCompletionClient client(opts);
      try {
        client.complete({{"user", "hi"}});
        FAIL("expected LLMUnavailable");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::LLMUnavailable);
      }
    }
  }
}
