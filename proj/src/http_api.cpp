#include "mqa/http_api.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdlib>

namespace mqa {

namespace {

using nlohmann::json;

void send_error(httplib::Response& res, ErrorCode code, const std::string& message,
                const std::string& field = {}) {
  json body{{"code", to_string(code)}, {"message", message}};
  if (!field.empty()) body["field"] = field;
  res.status = http_status(code);
  res.set_content(body.dump(), "application/json");
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Runs a handler, turning library errors into JSON error replies.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, e.code(), e.what(), e.field());
    } catch (const json::exception& e) {
      send_error(res, ErrorCode::InvalidArgument, std::string("malformed JSON: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, ErrorCode::IoError, e.what());
    }
  };
}

std::size_t parse_count(const std::string& value, const char* field) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size())
    throw Error(ErrorCode::InvalidArgument, std::string(field) + " must be an integer", field);
  return out;
}

// Accepts a JSON body or a multipart form with an "image" file part.
QueryRequest parse_query(const httplib::Request& req) {
  QueryRequest q;
  if (req.is_multipart_form_data()) {
    auto field = [&](const char* key) -> std::optional<std::string> {
      if (!req.has_file(key)) return std::nullopt;
      return req.get_file_value(key).content;
    };
    q.session_id = field("session_id").value_or("");
    q.text = field("text");
    q.image = field("image");
    q.selected_id = field("selected_id");
    if (q.selected_id && q.selected_id->empty()) q.selected_id.reset();
    if (auto k = field("k")) q.k = parse_count(*k, "k");
    if (auto l = field("L")) q.beam = parse_count(*l, "L");
    if (auto f = field("framework")) q.framework = parse_framework(*f);
    if (auto w = field("weights")) q.weights = json::parse(*w).get<std::vector<double>>();
    return q;
  }

  auto body = req.body.empty() ? json::object() : json::parse(req.body);
  if (!body.is_object()) throw Error(ErrorCode::InvalidArgument, "body must be a JSON object");
  q.session_id = body.value("session_id", "");
  if (body.contains("text") && !body["text"].is_null()) q.text = body["text"].get<std::string>();
  if (body.contains("selected_id") && !body["selected_id"].is_null())
    q.selected_id = body["selected_id"].get<std::string>();
  if (body.contains("k")) q.k = body["k"].get<std::size_t>();
  if (body.contains("L")) q.beam = body["L"].get<std::size_t>();
  if (body.contains("framework")) q.framework = parse_framework(body["framework"].get<std::string>());
  if (body.contains("weights")) q.weights = body["weights"].get<std::vector<double>>();
  return q;
}

bool wants_recall(const httplib::Request& req) {
  if (req.is_multipart_form_data())
    return req.has_file("ground_truth") && req.get_file_value("ground_truth").content == "true";
  if (req.body.empty()) return false;
  auto body = json::parse(req.body);
  return body.is_object() && body.value("ground_truth", false);
}

}  // namespace

ListenAddress parse_listen_address(std::string_view addr) {
  auto colon = addr.rfind(':');
  if (colon == std::string_view::npos || colon == 0)
    throw Error(ErrorCode::InvalidConfig, "listen address must be host:port", "MQA_LISTEN_ADDR");
  ListenAddress out;
  out.host = std::string(addr.substr(0, colon));
  auto port = addr.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), out.port);
  if (ec != std::errc{} || ptr != port.data() + port.size() || out.port < 0 || out.port > 65535)
    throw Error(ErrorCode::InvalidConfig, "invalid port in listen address", "MQA_LISTEN_ADDR");
  return out;
}

ListenAddress listen_address_from_env() {
  const char* env = std::getenv("MQA_LISTEN_ADDR");
  return env && *env ? parse_listen_address(env) : ListenAddress{};
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound:
    case ErrorCode::UnknownSession: return 404;
    case ErrorCode::IndexNotBuilt: return 409;
    case ErrorCode::EmptyCollection:
    case ErrorCode::EmptyTrainingSet: return 422;
    case ErrorCode::Reconfiguring: return 503;
    case ErrorCode::EncoderUnavailable:
    case ErrorCode::LLMUnavailable: return 502;
    case ErrorCode::IoError: return 500;
    default: return 400;
  }
}

struct ApiServer::Impl {
  Impl(Coordinator& c, ApiOptions o) : coordinator(c), options(std::move(o)) {}
  Coordinator& coordinator;
  ApiOptions options;
  httplib::Server server;
};

ApiServer::ApiServer(Coordinator& coordinator, ApiOptions options)
    : impl_(std::make_unique<Impl>(coordinator, std::move(options))) {
  auto& srv = impl_->server;
  auto& co = impl_->coordinator;
  const auto base = impl_->options.config_base;

  srv.Post("/api/config", guarded([&co, base](const httplib::Request& req, httplib::Response& res) {
             auto config = parse_config(json::parse(req.body), base);
             auto milestones = co.configure(config);
             json body = milestones.to_json();
             if (milestones.failed()) {
               body["code"] = milestones.error_code.value_or("IoError");
               body["message"] = milestones.error.value_or("configuration failed");
               send_json(res, body, 422);
               return;
             }
             send_json(res, body);
           }));

  srv.Get("/api/status", guarded([&co](const httplib::Request&, httplib::Response& res) {
            json body = co.status().to_json();
            body["ready"] = co.ready();
            send_json(res, body);
          }));

  srv.Post("/api/session", guarded([&co](const httplib::Request&, httplib::Response& res) {
             send_json(res, {{"session_id", co.open_session()}}, 201);
           }));

  srv.Post("/api/query", guarded([&co](const httplib::Request& req, httplib::Response& res) {
             send_json(res, to_json(co.submit_query(parse_query(req))));
           }));

  srv.Post("/api/compare", guarded([&co](const httplib::Request& req, httplib::Response& res) {
             send_json(res, to_json(co.compare(parse_query(req), wants_recall(req))));
           }));

  srv.Get(R"(/api/objects/([^/]+)/payload/([^/]+))",
          guarded([&co](const httplib::Request& req, httplib::Response& res) {
            auto payload = co.get_payload(req.matches[1].str(), req.matches[2].str());
            res.set_content(std::move(payload.bytes), payload.content_type);
          }));

  if (impl_->options.static_dir) srv.set_mount_point("/", impl_->options.static_dir->string());
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorCode::IoError, "cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port))
    throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

bool ApiServer::serve() { return impl_->server.listen_after_bind(); }

void ApiServer::stop() {
  if (impl_) impl_->server.stop();
}

void ApiServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace mqa
