#pragma once

// Batch pipeline behind the `romcex` executable. Each stage reads a JSON
// config, computes everything in memory, then publishes its artifacts and a
// stage report (<stage>.json) into the run directory in one step.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace romcex::cli {

inline constexpr const char* kVersion = "0.1.0";

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
  std::optional<unsigned> threads;
};

struct PipelineConfig {
  nlohmann::json raw;                // sections as written, seed folded in
  std::filesystem::path base_dir;    // relative input paths resolve here
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  /// fnv1a over the canonical dump of `raw`; ignores output_dir and threads.
  std::string hash() const;
};

/// Parses and checks the top-level shape. Section contents are validated by
/// the stage that uses them, before anything is written.
PipelineConfig config_from_json(const nlohmann::json& raw, const std::filesystem::path& base_dir,
                                const Overrides& overrides = {});
PipelineConfig load_config(const std::filesystem::path& file, const Overrides& overrides = {});

/// Each returns the stage report that was written.
nlohmann::json cmd_generate(const PipelineConfig& config);
nlohmann::json cmd_build_rom(const PipelineConfig& config);
nlohmann::json cmd_emulate(const PipelineConfig& config);
nlohmann::json cmd_assimilate(const PipelineConfig& config);

struct RunReport {
  nlohmann::json json;
  std::string text;
  std::string hash;  // fnv1a of the written report.json
};

/// Verifies every artifact referenced by the stage reports in `run_dir` and
/// writes report.json and report.txt there.
RunReport cmd_report(const std::filesystem::path& run_dir);

/// Logs go to stderr; ROMCEX_LOG selects the level (trace, debug, info,
/// warn, error, critical, off), default warn.
void configure_logging();

/// Full command line entry point; returns the process exit code
/// (0 ok, 2 validation or domain, 3 numerical, 4 I/O).
int run_cli(int argc, const char* const* argv);

}  // namespace romcex::cli
