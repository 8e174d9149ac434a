#include "mqa/llm.hpp"

#include "mqa/error.hpp"
#include "url.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cstdio>

namespace mqa {

namespace {

using nlohmann::json;

std::string format_distance(float d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(d));
  return buf;
}

}  // namespace

std::string render_template_answer(std::string_view query_text, std::span<const AnswerItem> items) {
  std::string out;
  if (items.empty()) {
    out.append("No results found for: ").append(query_text);
    return out;
  }
  out.append("Found ").append(std::to_string(items.size())).append(" results for: ");
  out.append(query_text);
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.append("\n").append(std::to_string(i + 1)).append(". ").append(items[i].id);
    out.append(" (distance ").append(format_distance(items[i].distance)).append(")");
  }
  return out;
}

std::string serialize_results(std::span<const AnswerItem> items) {
  json list = json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    json entry{{"rank", i + 1}, {"id", items[i].id}, {"distance", items[i].distance}};
    if (!items[i].summary.empty()) entry["summary"] = items[i].summary;
    list.push_back(std::move(entry));
  }
  return "Retrieved results:\n" + list.dump();
}

std::vector<ChatMessage> answer_messages(std::string_view query_text,
                                         std::span<const AnswerItem> items) {
  return {{"user", std::string(query_text)}, {"user", serialize_results(items)}};
}

ChatCompletionClient::ChatCompletionClient(ChatCompletionOptions options)
    : options_(std::move(options)) {
  auto url = detail::split_url(options_.endpoint);
  origin_ = std::move(url.origin);
  path_ = url.path.empty() ? "/" : std::move(url.path);
}

std::string ChatCompletionClient::complete(const std::vector<ChatMessage>& messages) {
  json body{{"model", options_.model}, {"temperature", options_.temperature}};
  body["messages"] = json::array();
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});

  httplib::Client client(origin_);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res)
    throw Error(ErrorCode::LLMUnavailable, "LLM endpoint: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw Error(ErrorCode::LLMUnavailable,
                "LLM endpoint returned HTTP " + std::to_string(res->status));
  try {
    return json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::LLMUnavailable, std::string("LLM endpoint sent a malformed reply: ") +
                                               e.what());
  }
}

std::string generate_answer(std::string_view query_text, std::span<const AnswerItem> items,
                            LlmClient* client) {
  if (!client) return render_template_answer(query_text, items);
  return client->complete(answer_messages(query_text, items));
}

}  // namespace mqa
