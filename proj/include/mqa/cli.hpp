#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mqa::cli {

/// Exit codes: 0 success, 1 operational error, 2 usage error.
/// `tty` selects the human table format when neither --json nor --table is given.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        bool tty = false);

/// Finds `<name>/config.json` under MQA_DATA_DIR, ./data, then the source tree's data/.
std::optional<std::filesystem::path> find_kb_config(const std::string& name);

}  // namespace mqa::cli
