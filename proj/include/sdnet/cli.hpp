#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace sdnet::cli {

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "SDNET_OUTPUT_ROOT";

/// Entry point for the `sdnet` command. Returns 0 on success, 1 when a
/// pipeline stage fails and 2 for command-line usage errors.
int run(int argc, const char* const* argv);
/// Same, with the program name as args[0].
int run(const std::vector<std::string>& args);

/// `$SDNET_OUTPUT_ROOT/<subcommand>` or `runs/<subcommand>` when unset.
std::filesystem::path default_output_dir(const std::string& subcommand);

}  // namespace sdnet::cli
