#ifndef RFTLAB_CONFIG_HPP
#define RFTLAB_CONFIG_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rftlab/pipeline.hpp"

namespace rftlab {

using json = nlohmann::ordered_json;

json config_to_json(const ExperimentConfig& cfg);

/// Requires every key of the full tree; see resolve_config for patching.
ExperimentConfig config_from_json(const json& tree);

/// Reads a config file. A run manifest is accepted too: its "config" member
/// is the resolved configuration.
json load_config_file(const std::filesystem::path& path);

/// Sets `dotted.key=value`. The key must exist in `tree`; the value is parsed
/// as JSON, falling back to a plain string.
void apply_override(json& tree, const std::string& assignment);

/// The preset a run resolves to: `preset` when given, else the file's
/// "preset" key, else custom.
Preset effective_preset(const std::optional<json>& file,
                        const std::optional<std::string>& preset);

/// Preset defaults <- config file <- overrides. The preset comes from
/// `preset` when given, else the file's "preset" key, else custom. Throws
/// ConfigError naming the offending key.
ExperimentConfig resolve_config(const std::optional<json>& file,
                                const std::optional<std::string>& preset,
                                const std::vector<std::string>& overrides);

}  // namespace rftlab

#endif  // RFTLAB_CONFIG_HPP
