#pragma once

#include "mqa/error.hpp"

#include <string>

namespace mqa::detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // no trailing slash; empty for root
};

// "http://h:1/a/b/" -> {"http://h:1", "/a/b"}
inline SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos || url.compare(0, scheme_end, "http") != 0)
    throw Error(ErrorCode::InvalidConfig, "endpoint must be an http:// URL: " + url, "endpoint");
  auto slash = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, slash);
  out.path = slash == std::string::npos ? std::string{} : url.substr(slash);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

}  // namespace mqa::detail
