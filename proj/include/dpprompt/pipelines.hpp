#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>

#include "dpprompt/backends.hpp"
#include "dpprompt/config.hpp"
#include "dpprompt/core.hpp"

namespace dpprompt::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";
inline constexpr const char* kSchemaVersion = "v1";

// Every configuration key the pipelines read.
std::span<const std::string_view> known_keys();

std::unique_ptr<Backend> make_backend(const Config& cfg, const Task& task,
                                      const std::unordered_map<std::string, int>& truth);

// Runs one of attack, transfer, student, dpsgd, account, evaluate. Inputs are
// resolved and validated before anything is written under out_dir. Throws
// dpprompt::Error subclasses on failure.
void run_pipeline(std::string_view pipeline, const Config& cfg, const std::filesystem::path& out_dir);

// 1 configuration, 2 pipeline or parse, 3 transport.
int exit_code_for(const std::exception& error);

// Full command line: `dpprompt <pipeline> --config FILE [--seed N] [--out-dir DIR]
// [--verbosity LEVEL] [--set key=value ...]`. Errors are reported on stderr as
// one JSON object.
int cli_main(int argc, const char* const* argv);

}  // namespace dpprompt::cli
