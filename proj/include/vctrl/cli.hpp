#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vctrl {

enum ExitCode : int { exit_ok = 0, exit_internal = 1, exit_usage = 2, exit_numeric = 3 };

const std::vector<std::string>& command_names();

struct CommandOptions {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;  // root for relative paths; default is the config's directory
};

// Runs one command and maps errors to exit codes. Progress goes to `log`,
// failures to `err`.
int run_command(const std::string& command, const CommandOptions& options, std::ostream& log, std::ostream& err);

// Full argv entry point used by the vctrl executable.
int cli_main(int argc, char** argv);

}  // namespace vctrl
