#include "kb_fixture.hpp"
#include "mqa/http_api.hpp"

#include <doctest.h>

#include <thread>

using namespace mqa;
using nlohmann::json;

namespace {

/// An ApiServer on a free port, served from a background thread.
struct LiveServer {
  Coordinator coordinator;
  ApiServer api;
  int port = 0;
  std::thread thread;

  explicit LiveServer(ApiOptions options = {}) : api(coordinator, std::move(options)) {
    port = api.bind("127.0.0.1", 0);
    thread = std::thread([this] { api.serve(); });
    api.wait_until_ready();
  }
  ~LiveServer() {
    api.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

json post_json(httplib::Client& c, const std::string& path, const json& body, int expect) {
  auto res = c.Post(path, body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == expect);
  return json::parse(res->body);
}

}  // namespace

TEST_SUITE("http_api") {
  TEST_CASE("status mapping and listen addresses") {
    CHECK(http_status(ErrorCode::UnknownSession) == 404);
    CHECK(http_status(ErrorCode::NotFound) == 404);
    CHECK(http_status(ErrorCode::IndexNotBuilt) == 409);
    CHECK(http_status(ErrorCode::Reconfiguring) == 503);
    CHECK(http_status(ErrorCode::LLMUnavailable) == 502);
    CHECK(http_status(ErrorCode::InvalidConfig) == 400);
    auto a = parse_listen_address("0.0.0.0:9000");
    CHECK(a.host == "0.0.0.0");
    CHECK(a.port == 9000);
    for (auto bad : {"nohost", ":80", "h:99999", "h:80x"}) {
      try {
        parse_listen_address(bad);
        FAIL("expected InvalidConfig");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidConfig);
      }
    }
  }

  TEST_CASE("configure, query, payload and compare over HTTP") {
    test::TempDir dir;
    LiveServer server;
    auto c = server.client();

    auto st = c.Get("/api/status");
    REQUIRE(st);
    auto status = json::parse(st->body);
    CHECK(status["ready"] == false);
    CHECK(status["stages"]["data_preprocessing"]["status"] == "pending");

    auto s0 = post_json(c, "/api/session", json::object(), 201)["session_id"].get<std::string>();
    auto early = post_json(c, "/api/query", {{"session_id", s0}, {"text", "fox"}}, 409);
    CHECK(early["code"] == "IndexNotBuilt");

    auto bad = to_json(test::small_kb_config(dir));
    bad["llm"]["temperature"] = 9;
    auto rejected = post_json(c, "/api/config", bad, 400);
    CHECK(rejected["code"] == "InvalidConfig");
    CHECK(rejected["field"] == "llm.temperature");

    auto missing = to_json(test::small_kb_config(dir));
    missing["knowledge_base"]["manifest"] = (dir / "absent.jsonl").string();
    auto failed = post_json(c, "/api/config", missing, 422);
    CHECK(failed["code"] == "NotFound");
    CHECK(failed["stages"]["data_preprocessing"]["status"] == "failed");

    auto done = post_json(c, "/api/config", to_json(test::small_kb_config(dir)), 200);
    CHECK(done["stages"]["index_construction"]["status"] == "done");
    CHECK(done["details"]["objects"] == 3);
    CHECK(json::parse(c.Get("/api/status")->body)["ready"] == true);

    auto s = post_json(c, "/api/session", json::object(), 201)["session_id"].get<std::string>();
    auto r1 = post_json(c, "/api/query", {{"session_id", s}, {"text", "red fox"}, {"k", 2}}, 200);
    CHECK(r1["schema_version"] == kJsonSchemaVersion);
    CHECK(r1["turn"] == 1);
    REQUIRE(r1["results"].size() == 2);
    CHECK(r1["answer"].get<std::string>().rfind("Found 2 results for: red fox", 0) == 0);
    const auto picked = r1["results"][0]["id"].get<std::string>();

    auto r2 = post_json(c, "/api/query", {{"session_id", s}, {"selected_id", picked}}, 200);
    CHECK(r2["turn"] == 2);

    auto img = c.Get("/api/objects/" + picked + "/payload/image");
    REQUIRE(img);
    CHECK(img->status == 200);
    CHECK(img->body == test::read_bytes(dir / (picked + ".ppm")));
    CHECK(img->get_header_value("Content-Type") == "image/x-portable-pixmap");
    auto missing_obj = c.Get("/api/objects/nobody/payload/text");
    REQUIRE(missing_obj);
    CHECK(missing_obj->status == 404);
    CHECK(json::parse(missing_obj->body)["code"] == "NotFound");

    auto unknown = post_json(c, "/api/query", {{"session_id", "s999"}, {"text", "x"}}, 404);
    CHECK(unknown["code"] == "UnknownSession");
    auto empty = post_json(c, "/api/query", {{"session_id", s}}, 400);
    CHECK(empty["code"] == "InvalidArgument");
    auto garbage = c.Post("/api/query", "{not json", "application/json");
    REQUIRE(garbage);
    CHECK(garbage->status == 400);

    auto cmp = post_json(c, "/api/compare", {{"text", "green fern"}, {"ground_truth", true}}, 200);
    REQUIRE(cmp["frameworks"].size() == 3);
    for (const auto& run : cmp["frameworks"]) {
      CHECK(run["results"].size() == 3);
      CHECK(run.contains("recall"));
    }
  }

  TEST_CASE("multipart image upload") {
    test::TempDir dir;
    LiveServer server;
    auto c = server.client();
    post_json(c, "/api/config", to_json(test::small_kb_config(dir)), 200);
    auto s = post_json(c, "/api/session", json::object(), 201)["session_id"].get<std::string>();

    httplib::MultipartFormDataItems form{
        {"session_id", s, "", ""},
        {"image", test::read_bytes(dir / "sea.ppm"), "sea.ppm", "image/x-portable-pixmap"},
        {"k", "1", "", ""},
        {"framework", "MR", "", ""}};
    auto res = c.Post("/api/query", form);
    REQUIRE(res);
    CHECK(res->status == 200);
    auto body = json::parse(res->body);
    CHECK(body["framework"] == "MR");
    REQUIRE(body["results"].size() == 1);
    CHECK(body["results"][0]["id"] == "sea");

    httplib::MultipartFormDataItems broken{{"session_id", s, "", ""},
                                           {"image", "not an image", "x.png", "image/png"}};
    auto bad = c.Post("/api/query", broken);
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(json::parse(bad->body)["code"] == "DecodeError");
  }

  TEST_CASE("static files are served when configured") {
    test::TempDir dir;
    test::write_text(dir / "index.html", "<html>hi</html>");
    ApiOptions opts;
    opts.static_dir = dir.path();
    LiveServer server(opts);
    auto c = server.client();
    auto res = c.Get("/index.html");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == "<html>hi</html>");
  }
}
