#pragma once

#include "mqa/coordinator.hpp"
#include "mqa/error.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

namespace mqa {

struct ListenAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// Parses "host:port". Throws InvalidConfig.
ListenAddress parse_listen_address(std::string_view addr);
/// MQA_LISTEN_ADDR, or 127.0.0.1:8080.
ListenAddress listen_address_from_env();

/// HTTP status used for an error code.
int http_status(ErrorCode code);

struct ApiOptions {
  std::optional<std::filesystem::path> static_dir;  // served under /
  std::filesystem::path config_base;                // relative paths in POST /api/config
};

/// JSON API over a Coordinator:
///   POST /api/config, GET /api/status, POST /api/session, POST /api/query,
///   GET /api/objects/{id}/payload/{modality}, POST /api/compare.
class ApiServer {
 public:
  explicit ApiServer(Coordinator& coordinator, ApiOptions options = {});
  ~ApiServer();

  /// Binds without serving; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  bool serve();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace mqa
