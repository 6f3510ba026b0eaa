#pragma once

// Command-line front end: gen, train, prior, osse-random, osse-uav, report, selfcheck.

#include <string>
#include <vector>

#include "json.hpp"

namespace windinr::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kMissingArtifact = 3, kNumerical = 4 };

/// Full-depth defaults (the desk profile).
nlohmann::json default_config();

/// Parses and runs one command line; never throws.
int run(const std::vector<std::string>& args);
int main(int argc, char** argv);

}  // namespace windinr::cli
