#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>

namespace stepkd {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// key = value per line; '#' starts a comment. Keys are long option names
// without the leading dashes.
using ConfigMap = std::map<std::string, std::string>;
ConfigMap read_config_file(const std::filesystem::path& path);

// Results go to `out`, JSON-lines log events to `log`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& log);

}  // namespace stepkd
