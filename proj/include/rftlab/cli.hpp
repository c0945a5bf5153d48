#ifndef RFTLAB_CLI_HPP
#define RFTLAB_CLI_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rftlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitConstraint = 3;
inline constexpr int kExitCheckpoint = 4;

inline constexpr const char* kArtifactVersion = "rftlab 1.0.0";
inline constexpr const char* kOutputRootEnv = "RFTLAB_OUT";

struct RunOptions {
  std::optional<std::string> preset;
  std::optional<std::filesystem::path> config;
  /// key=value assignments, applied in order after the config file.
  std::vector<std::string> overrides;
  std::filesystem::path out;
  std::size_t jobs = 1;
};

/// Output layout under `out`:
///   <preset>/manifest.json, <preset>/dataset.txt
///   <preset>/<point>/seed-<s>/{run.json, metrics.jsonl, metrics.tsv,
///                              checkpoint-<round>.bin}
int cmd_run(const RunOptions& opts, std::ostream& log);

/// Continues the run that owns `checkpoint` by `additional_rounds`, writing
/// into the checkpoint's directory.
int cmd_resume(const std::filesystem::path& checkpoint,
               std::int64_t additional_rounds, std::ostream& log);

/// Summary tables and plot-ready columns under <dir>/report/.
int cmd_report(const std::filesystem::path& dir, std::ostream& out);

std::filesystem::path default_output_root();

int main(int argc, char** argv);

}  // namespace rftlab::cli

#endif  // RFTLAB_CLI_HPP
