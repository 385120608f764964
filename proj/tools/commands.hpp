#pragma once

#include "zsdg/engine.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>

namespace zsdg::cli {

/// Exit codes shared by every command.
enum ExitCode : int { kOk = 0, kUsage = 1, kDegenerate = 2, kIo = 3 };

/// Maps the active exception to an exit code, printing its message.
int exit_code_for_current_exception(std::ostream& err);

/// Overlays the keys of a JSON config onto `base`. Unknown keys and wrongly
/// typed values are ConfigErrors.
RunConfig config_from_json(const nlohmann::json& doc, RunConfig base = {});
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});

/// Entry point; returns the process exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace zsdg::cli
