#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace nvae {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;  // bad flags, bad config, missing input file
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitVersion = 4;

/// Environment variable consulted when --out-dir is not given.
inline constexpr const char* kOutDirEnv = "NVAE_OUT_DIR";

/// Runs one command. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Lowercase hex SHA-256 of a file's contents.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace nvae
