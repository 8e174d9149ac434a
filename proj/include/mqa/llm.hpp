#pragma once

#include <chrono>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mqa {

struct ChatMessage {
  std::string role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

/// One retrieved object as handed to answer generation.
struct AnswerItem {
  std::string id;
  float distance = 0;
  std::string summary;  // short text preview, may be empty
};

/// Deterministic answer: a header line, then one line per result in rank order.
std::string render_template_answer(std::string_view query_text, std::span<const AnswerItem> items);

/// Result list serialised for the second chat message.
std::string serialize_results(std::span<const AnswerItem> items);

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Throws LLMUnavailable.
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

struct ChatCompletionOptions {
  std::string endpoint;  // full URL, e.g. http://host:port/v1/chat/completions
  std::string model = "gpt-4o-mini";
  double temperature = 0.7;
  std::chrono::milliseconds timeout{30'000};
  std::string api_key;  // sent as a bearer token when non-empty
};

/// Posts {model, messages, temperature} and returns choices[0].message.content.
class ChatCompletionClient final : public LlmClient {
 public:
  explicit ChatCompletionClient(ChatCompletionOptions options);
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  ChatCompletionOptions options_;
  std::string origin_;
  std::string path_;
};

/// The two-message conversation: the user's query, then the retrieved results.
std::vector<ChatMessage> answer_messages(std::string_view query_text,
                                         std::span<const AnswerItem> items);

/// With no client, renders the template. Otherwise asks the client and lets
/// LLMUnavailable propagate.
std::string generate_answer(std::string_view query_text, std::span<const AnswerItem> items,
                            LlmClient* client);

}  // namespace mqa
