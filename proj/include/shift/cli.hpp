#pragma once

#include <string>
#include <vector>

namespace shift::cli {

/// Artifact version stamped into every run manifest.
inline constexpr const char* kArtifactVersion = "0.1.0";

/// Parses argv and dispatches to a subcommand. Returns the process exit
/// code: 0 on success, 1 with a structured JSON error on stderr when an
/// operation fails, 2 on usage errors. stdout carries only machine-readable
/// payloads; human progress goes to stderr.
int run(int argc, const char* const* argv);

/// Same entry point for in-process callers; `args` excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace shift::cli
