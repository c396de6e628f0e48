#pragma once

#include <string>

#include "json.hpp"

namespace habitlens::runner {

/// Executes one pipeline subcommand against the filesystem. Options are a
/// flat JSON object (out_dir, seed, data, ... — see the CLI --help for
/// the per-command set). Writes artifacts plus a manifest.json under
/// out_dir; throws std::exception on failure.
void run_command(const std::string& command, const nlohmann::json& opts);

bool is_known_command(const std::string& command);

}  // namespace habitlens::runner
