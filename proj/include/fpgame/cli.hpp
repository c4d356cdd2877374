#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace fpgame {

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitNumerical = 3 };

struct RunOptions {
    std::string subcommand;  ///< ulam | stationary | entropy-trace | equilibrium | perturb | resilience
    std::filesystem::path config_path;
    std::optional<std::filesystem::path> out_dir;  ///< overrides output.directory
    std::optional<std::uint64_t> seed;             ///< overrides perturb.seed
    unsigned threads = 1;
    bool kl_floor = false;
    bool with_deviations = false;
};

/// Runs one subcommand and writes its artifacts. Summaries go to `log`, failure
/// reasons to `err`.
int run(const RunOptions& options, std::ostream& log, std::ostream& err);

/// Command-line front end.
int main_entry(int argc, char** argv);

}  // namespace fpgame
