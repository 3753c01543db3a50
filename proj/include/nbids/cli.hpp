#pragma once

#include <string>
#include <vector>

namespace nbids {

/// Exit codes returned by run_cli.
enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitInternal = 4 };

/// Runs one command. `args` excludes the program name, e.g.
/// {"train", "--dataset", "d.nbds", "--out", "run"}.
int run_cli(const std::vector<std::string>& args);

/// Artifact names written under --out.
inline constexpr const char* kDatasetFile = "dataset.nbds";
inline constexpr const char* kCheckpointFile = "checkpoint.nbck";
inline constexpr const char* kCurvesFile = "curves.csv";
inline constexpr const char* kRunConfigFile = "run_config.txt";
inline constexpr const char* kRocFile = "roc.csv";

} // namespace nbids
